#include "rllreg/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "rllreg/error.hpp"

namespace rllreg {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    case ErrorKind::Degenerate: return "degenerate";
  }
  return "unknown";
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  RigidTransform t;
  t.rotation = m.topLeftCorner<3, 3>();
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

RigidTransform RigidTransform::from_axis_angle(const Eigen::Vector3d& axis, double angle,
                                               const Eigen::Vector3d& t) {
  RigidTransform out;
  out.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  out.translation = t;
  return out;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

PointCloud RigidTransform::apply(const PointCloud& points) const {
  PointCloud out = rotation * points;
  out.colwise() += translation;
  return out;
}

double RigidTransform::orthonormality_error() const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  return std::max(ortho, std::abs(rotation.determinant() - 1.0));
}

RigidTransform RigidTransform::orthonormalized(double tolerance) const {
  if (orthonormality_error() <= tolerance) return *this;
  RigidTransform out = *this;
  out.rotation = project_to_rotation(rotation);
  return out;
}

Point3 apply(const RigidTransform& t, const Point3& p) { return t.apply(p); }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

double rotation_error(const RigidTransform& a, const RigidTransform& b) {
  const double c = ((a.rotation.transpose() * b.rotation).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

double translation_error(const RigidTransform& a, const RigidTransform& b) {
  return (a.translation - b.translation).norm();
}

Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

PointCloud voxel_downsample(const PointCloud& points, double voxel_side) {
  if (!(voxel_side > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "voxel_downsample: voxel_side must be positive");
  }
  using Key = std::array<std::int64_t, 3>;
  struct Cell {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::int64_t count = 0;
  };
  std::map<Key, Cell> cells;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const auto p = points.col(j);
    const Key key{static_cast<std::int64_t>(std::floor(p.x() / voxel_side)),
                  static_cast<std::int64_t>(std::floor(p.y() / voxel_side)),
                  static_cast<std::int64_t>(std::floor(p.z() / voxel_side))};
    Cell& cell = cells[key];
    cell.sum += p;
    ++cell.count;
  }
  PointCloud out(3, static_cast<Eigen::Index>(cells.size()));
  Eigen::Index col = 0;
  for (const auto& [key, cell] : cells) {
    out.col(col++) = cell.sum / static_cast<double>(cell.count);
  }
  return out;
}

namespace {

std::vector<Eigen::Index> one_per_cell(const PointCloud& points, double side) {
  using Key = std::array<std::int64_t, 3>;
  std::map<Key, std::vector<Eigen::Index>> cells;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const auto p = points.col(j);
    cells[{static_cast<std::int64_t>(std::floor(p.x() / side)),
           static_cast<std::int64_t>(std::floor(p.y() / side)),
           static_cast<std::int64_t>(std::floor(p.z() / side))}]
        .push_back(j);
  }
  std::vector<Eigen::Index> out;
  out.reserve(cells.size());
  for (const auto& [key, members] : cells) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (auto j : members) c += points.col(j);
    c /= static_cast<double>(members.size());
    Eigen::Index best = members.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (auto j : members) {
      const double d = (points.col(j) - c).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.push_back(best);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<Eigen::Index> spatial_subsample(const PointCloud& points, Eigen::Index target) {
  if (target < 1) throw Error(ErrorKind::InvalidArgument, "spatial_subsample: target must be positive");
  std::vector<Eigen::Index> all(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index j = 0; j < points.cols(); ++j) all[static_cast<std::size_t>(j)] = j;
  if (points.cols() <= target) return all;

  const Eigen::Vector3d extent = points.rowwise().maxCoeff() - points.rowwise().minCoeff();
  // A cell larger than the whole extent holds everything in at most 8 cells.
  double hi = std::max(extent.maxCoeff(), 1e-12) * 2.0 + 1e-12;
  double lo = hi * 1e-7;
  std::vector<Eigen::Index> best = one_per_cell(points, hi);
  if (static_cast<Eigen::Index>(best.size()) > target) return {all.begin(), all.begin() + target};
  for (int it = 0; it < 48; ++it) {
    const double mid = std::sqrt(lo * hi);
    std::vector<Eigen::Index> picked = one_per_cell(points, mid);
    if (static_cast<Eigen::Index>(picked.size()) > target) {
      lo = mid;
    } else {
      hi = mid;
      best = std::move(picked);
    }
    if (hi / lo < 1.0 + 1e-4) break;
  }
  return best;
}

Eigen::Vector3d random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

RigidTransform sample_perturbation(double max_angle, double max_translation,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Vector3d axis = random_unit_vector(rng);
  const double angle = max_angle * unit(rng);
  const Eigen::Vector3d dir = random_unit_vector(rng);
  const double norm = max_translation * unit(rng);
  return RigidTransform::from_axis_angle(axis, angle, dir * norm);
}

RigidTransform sample_perturbation(const PerturbationSpec& spec) {
  if (!(spec.max_angle >= 0.0 && spec.max_angle <= std::numbers::pi) ||
      !(spec.max_translation >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "sample_perturbation: invalid spec");
  }
  std::mt19937_64 rng(spec.rng_seed);
  return sample_perturbation(spec.max_angle, spec.max_translation, rng);
}

}  // namespace rllreg
