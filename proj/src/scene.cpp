#include "rllreg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "rllreg/error.hpp"
#include "rllreg/kdtree.hpp"

namespace rllreg {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

class CloudBuilder {
 public:
  CloudBuilder(double spacing, Rng& rng) : spacing_(spacing), rng_(rng) {}

  /// Jittered grid over origin + a*u + b*v, a in [0, |u|], b in [0, |v|].
  void rect(const Eigen::Vector3d& origin, const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
    const double lu = u.norm(), lv = v.norm();
    const int nu = std::max(1, static_cast<int>(std::ceil(lu / spacing_)));
    const int nv = std::max(1, static_cast<int>(std::ceil(lv / spacing_)));
    for (int a = 0; a < nu; ++a) {
      for (int b = 0; b < nv; ++b) {
        const double fa = (a + uniform(rng_, 0.0, 1.0)) / nu;
        const double fb = (b + uniform(rng_, 0.0, 1.0)) / nv;
        points_.push_back(origin + fa * u + fb * v);
      }
    }
  }

  /// Axis-aligned-in-yaw box standing on z = base, five faces (no bottom).
  void box(const Eigen::Vector3d& center_base, const Eigen::Vector3d& size, double yaw) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Vector3d ex = r.col(0) * size.x(), ey = r.col(1) * size.y();
    const Eigen::Vector3d ez = Eigen::Vector3d::UnitZ() * size.z();
    const Eigen::Vector3d o = center_base - 0.5 * ex - 0.5 * ey;
    rect(o + ez, ex, ey);       // top
    rect(o, ex, ez);            // front
    rect(o + ey, ex, ez);       // back
    rect(o, ey, ez);            // left
    rect(o + ex, ey, ez);       // right
  }

  void cylinder(const Eigen::Vector3d& center_base, double radius, double height) {
    const int nc = std::max(6, static_cast<int>(std::ceil(2 * std::numbers::pi * radius / spacing_)));
    const int nh = std::max(1, static_cast<int>(std::ceil(height / spacing_)));
    for (int a = 0; a < nc; ++a) {
      for (int h = 0; h < nh; ++h) {
        const double phi = 2 * std::numbers::pi * (a + uniform(rng_, 0.0, 1.0)) / nc;
        const double z = height * (h + uniform(rng_, 0.0, 1.0)) / nh;
        points_.push_back(center_base + Eigen::Vector3d(radius * std::cos(phi), radius * std::sin(phi), z));
      }
    }
    disc(center_base + Eigen::Vector3d(0, 0, height), radius);
  }

  void disc(const Eigen::Vector3d& center, double radius) {
    const int n = std::max(1, static_cast<int>(std::ceil(std::numbers::pi * radius * radius /
                                                         (spacing_ * spacing_))));
    for (int s = 0; s < n; ++s) {
      const double rr = radius * std::sqrt(uniform(rng_, 0.0, 1.0));
      const double phi = uniform(rng_, 0.0, 2 * std::numbers::pi);
      points_.push_back(center + Eigen::Vector3d(rr * std::cos(phi), rr * std::sin(phi), 0.0));
    }
  }

  void sphere(const Eigen::Vector3d& center, double radius) {
    const int n = std::max(8, static_cast<int>(std::ceil(4 * std::numbers::pi * radius * radius /
                                                         (spacing_ * spacing_))));
    for (int s = 0; s < n; ++s) points_.push_back(center + radius * random_unit_vector(rng_));
  }

  PointCloud finish() const {
    PointCloud out(3, static_cast<Eigen::Index>(points_.size()));
    for (std::size_t j = 0; j < points_.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = points_[j];
    return out;
  }

 private:
  double spacing_;
  Rng& rng_;
  std::vector<Eigen::Vector3d> points_;
};

// Furniture-like clutter on the floor of [x0, x1] x [y0, y1].
void place_objects(CloudBuilder& b, Rng& rng, int count, double x0, double x1, double y0,
                   double y1) {
  for (int o = 0; o < count; ++o) {
    const Eigen::Vector3d base(uniform(rng, x0, x1), uniform(rng, y0, y1), 0.0);
    const int kind = static_cast<int>(uniform(rng, 0.0, 4.0));
    if (kind == 0 || kind == 1) {
      const Eigen::Vector3d size(uniform(rng, 0.3, 1.2), uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.4));
      b.box(base, size, uniform(rng, 0.0, std::numbers::pi));
    } else if (kind == 2) {
      b.cylinder(base, uniform(rng, 0.1, 0.35), uniform(rng, 0.4, 1.6));
    } else {
      // Table: top slab on a central pedestal plus a ball on top.
      const double h = uniform(rng, 0.6, 0.9);
      b.cylinder(base, 0.06, h);
      b.box(base + Eigen::Vector3d(0, 0, h), Eigen::Vector3d(uniform(rng, 0.6, 1.2), uniform(rng, 0.5, 0.9), 0.05),
            uniform(rng, 0.0, std::numbers::pi));
      b.sphere(base + Eigen::Vector3d(0, 0, h + 0.2), uniform(rng, 0.08, 0.15));
    }
  }
}

}  // namespace

const char* to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::Room: return "room";
    case SceneKind::Corridor: return "corridor";
    case SceneKind::LidarRing: return "lidar-ring";
  }
  return "room";
}

SceneKind scene_kind_from_string(const std::string& name) {
  if (name == "room") return SceneKind::Room;
  if (name == "corridor") return SceneKind::Corridor;
  if (name == "lidar-ring" || name == "lidar") return SceneKind::LidarRing;
  throw Error(ErrorKind::Config, "unknown scene kind '" + name + "'");
}

void SceneSpec::validate() const {
  if (!(views.overlap_target > 0.0 && views.overlap_target <= 1.0)) {
    throw Error(ErrorKind::Config, "overlap target must be in (0, 1]");
  }
  if (views.num_views < 1) throw Error(ErrorKind::Config, "need at least one view");
  if (!(point_spacing > 0.0) || !(views.view_radius > 0.0) || !(views.overlap_radius > 0.0)) {
    throw Error(ErrorKind::Config, "spacing and radii must be positive");
  }
  if (views.noise_sigma < 0.0 || object_count < 0) {
    throw Error(ErrorKind::Config, "noise and object count must be non-negative");
  }
  if (!(views.max_angle >= 0.0 && views.max_angle <= std::numbers::pi) || views.max_translation < 0.0) {
    throw Error(ErrorKind::Config, "invalid perturbation bounds");
  }
}

SceneCloud generate_scene_cloud(SceneKind kind, int object_count, double spacing,
                                std::uint64_t seed) {
  Rng rng(seed);
  CloudBuilder b(spacing, rng);
  SceneCloud s;
  s.kind = kind;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(),
                        ez = Eigen::Vector3d::UnitZ();
  if (kind == SceneKind::Room) {
    const double w = uniform(rng, 4.5, 7.0), l = uniform(rng, 4.5, 7.0), h = 2.5;
    b.rect(Eigen::Vector3d::Zero(), w * ex, l * ey);
    b.rect(Eigen::Vector3d::Zero(), w * ex, h * ez);
    b.rect(l * ey, w * ex, h * ez);
    b.rect(Eigen::Vector3d::Zero(), l * ey, h * ez);
    b.rect(w * ex, l * ey, h * ez);
    place_objects(b, rng, object_count, 0.5, w - 0.5, 0.5, l - 0.5);
    s.lower = Eigen::Vector3d(0, 0, 0);
    s.upper = Eigen::Vector3d(w, l, h);
    s.eye_height = 1.2;
  } else if (kind == SceneKind::Corridor) {
    const double w = uniform(rng, 2.0, 2.6), l = uniform(rng, 10.0, 14.0), h = 2.5;
    b.rect(Eigen::Vector3d::Zero(), l * ex, w * ey);
    b.rect(Eigen::Vector3d::Zero(), l * ex, h * ez);
    b.rect(w * ey, l * ex, h * ez);
    // Sparse clutter hugging the walls.
    Rng obj_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (int o = 0; o < object_count; ++o) {
      const bool left = uniform(obj_rng, 0.0, 1.0) < 0.5;
      const double x = uniform(obj_rng, 0.5, l - 0.5);
      const double depth = uniform(obj_rng, 0.2, 0.5);
      const Eigen::Vector3d base(x, left ? depth / 2 + 0.01 : w - depth / 2 - 0.01, 0.0);
      if (uniform(obj_rng, 0.0, 1.0) < 0.6) {
        b.box(base, Eigen::Vector3d(uniform(obj_rng, 0.3, 1.0), depth, uniform(obj_rng, 0.4, 1.6)), 0.0);
      } else {
        b.cylinder(base, depth / 2, uniform(obj_rng, 0.5, 1.4));
      }
    }
    s.lower = Eigen::Vector3d(0, 0, 0);
    s.upper = Eigen::Vector3d(l, w, h);
    s.eye_height = 1.2;
  } else {
    const double side = 40.0;
    b.rect(Eigen::Vector3d(-side / 2, -side / 2, 0), side * ex, side * ey);
    // Building facades along two edges.
    b.rect(Eigen::Vector3d(-side / 2, side / 2 - 1, 0), side * ex, 6.0 * ez);
    b.rect(Eigen::Vector3d(side / 2 - 1, -side / 2, 0), side * ey, 6.0 * ez);
    for (int o = 0; o < object_count; ++o) {
      const Eigen::Vector3d base(uniform(rng, -side / 2 + 2, side / 2 - 2),
                                 uniform(rng, -side / 2 + 2, side / 2 - 2), 0.0);
      const double pick = uniform(rng, 0.0, 1.0);
      if (pick < 0.4) {
        b.cylinder(base, uniform(rng, 0.1, 0.25), uniform(rng, 3.0, 6.0));
      } else if (pick < 0.8) {
        b.box(base, Eigen::Vector3d(uniform(rng, 3.8, 4.8), uniform(rng, 1.7, 2.0), uniform(rng, 1.3, 1.7)),
              uniform(rng, 0.0, std::numbers::pi));
      } else {
        b.box(base, Eigen::Vector3d(uniform(rng, 1.0, 3.0), uniform(rng, 1.0, 3.0), uniform(rng, 0.5, 2.5)),
              uniform(rng, 0.0, std::numbers::pi));
      }
    }
    s.lower = Eigen::Vector3d(-side / 2, -side / 2, 0);
    s.upper = Eigen::Vector3d(side / 2, side / 2, 6.0);
    s.eye_height = 1.8;
  }
  s.cloud = b.finish();
  return s;
}

double overlap_fraction(const PointCloud& a, const PointCloud& b, double radius) {
  if (a.cols() == 0) return 0.0;
  if (b.cols() == 0) return 0.0;
  const KdTree tree(b);
  const double r2 = radius * radius;
  Eigen::Index hits = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (tree.nearest(a.col(j)).squared_distance <= r2) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(a.cols());
}

namespace {

PointCloud crop(const SceneCloud& scene, const Eigen::Vector3d& center, double radius, Rng& rng) {
  const double r2 = radius * radius;
  const bool lidar = scene.kind == SceneKind::LidarRing;
  // Lidar-like density falloff: keep with probability min(1, r0 / d).
  const double r0 = 0.2 * radius;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < scene.cloud.cols(); ++j) {
    const double d2 = (scene.cloud.col(j) - center).squaredNorm();
    if (d2 > r2) continue;
    if (lidar) {
      const double d = std::sqrt(d2);
      if (d > r0 && uniform(rng, 0.0, 1.0) > r0 / d) continue;
    }
    keep.push_back(j);
  }
  PointCloud out(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = scene.cloud.col(keep[j]);
  return out;
}

}  // namespace

ViewSet sample_views(const SceneCloud& scene, const ViewSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const int m = spec.num_views;
  const double margin = std::min(0.5, 0.25 * (scene.upper - scene.lower).head<2>().minCoeff());
  auto draw_center = [&]() {
    return Eigen::Vector3d(uniform(rng, scene.lower.x() + margin, scene.upper.x() - margin),
                           uniform(rng, scene.lower.y() + margin, scene.upper.y() - margin),
                           scene.eye_height);
  };
  const bool identical = spec.overlap_target >= 1.0;

  double max_offset = spec.view_radius;
  for (int attempt = 0; attempt < spec.max_retries; ++attempt, max_offset *= 0.85) {
    ViewSet vs;
    const Eigen::Vector3d c0 = draw_center();
    vs.centers.push_back(c0);
    for (int i = 1; i < m; ++i) {
      if (identical) {
        vs.centers.push_back(c0);
        continue;
      }
      const double phi = uniform(rng, 0.0, 2 * std::numbers::pi);
      const double d = uniform(rng, 0.0, max_offset);
      Eigen::Vector3d c = c0 + d * Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0);
      c.x() = std::clamp(c.x(), scene.lower.x() + margin, scene.upper.x() - margin);
      c.y() = std::clamp(c.y(), scene.lower.y() + margin, scene.upper.y() - margin);
      vs.centers.push_back(c);
    }

    std::vector<PointCloud> world;
    bool enough = true;
    for (int i = 0; i < m; ++i) {
      if (identical && i > 0) {
        world.push_back(world.front());
        continue;
      }
      PointCloud w = crop(scene, vs.centers[static_cast<std::size_t>(i)], spec.view_radius, rng);
      if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          w.col(j) += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
        }
      }
      enough = enough && w.cols() >= 64;
      world.push_back(std::move(w));
    }
    if (!enough) continue;

    vs.overlap = Eigen::MatrixXd::Ones(m, m);
    bool ok = true;
    for (int i = 0; i < m && ok; ++i) {
      for (int k = 0; k < m && ok; ++k) {
        if (i == k) continue;
        vs.overlap(i, k) = overlap_fraction(world[static_cast<std::size_t>(i)],
                                            world[static_cast<std::size_t>(k)], spec.overlap_radius);
        ok = vs.overlap(i, k) >= spec.overlap_target;
      }
    }
    if (!ok) continue;

    RigidTransform shared_pert;
    for (int i = 0; i < m; ++i) {
      RigidTransform pert;
      if (identical && i > 0) {
        pert = shared_pert;
      } else if (i > 0 || spec.perturb_reference) {
        pert = sample_perturbation(spec.max_angle, spec.max_translation, rng);
      }
      if (i == 0) shared_pert = pert;
      RigidTransform pose = pert;
      pose.translation += c0;
      vs.perturbations.push_back(pert);
      vs.ground_truth.poses.push_back(pose);
      vs.views.push_back(inverse(pose).apply(world[static_cast<std::size_t>(i)]));
    }
    return vs;
  }
  throw Error(ErrorKind::InvalidArgument, "sample_views: overlap target unreachable after " +
                                              std::to_string(spec.max_retries) + " attempts");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene s;
  s.scene = generate_scene_cloud(spec.kind, spec.object_count, spec.point_spacing, spec.rng_seed);
  s.views = sample_views(s.scene, spec.views, spec.rng_seed ^ 0x5851f42d4c957f2dULL);
  return s;
}

}  // namespace rllreg
