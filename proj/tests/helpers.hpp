#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rllreg/engine.hpp"
#include "rllreg/geom.hpp"
#include "rllreg/mixture.hpp"
#include "rllreg/scene.hpp"

namespace testing {

inline rllreg::RigidTransform random_transform(std::mt19937_64& rng, double max_t = 2.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double angle = std::acos(-1.0) * u(rng);
  return rllreg::RigidTransform::from_axis_angle(rllreg::random_unit_vector(rng), angle,
                                                 max_t * u(rng) * rllreg::random_unit_vector(rng));
}

inline rllreg::PointCloud random_cloud(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  rllreg::PointCloud p(3, n);
  for (Eigen::Index j = 0; j < n; ++j) p.col(j) = Eigen::Vector3d(g(rng), g(rng), g(rng));
  return p;
}

inline Eigen::MatrixXd random_unit_columns(std::mt19937_64& rng, Eigen::Index d, Eigen::Index n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index c = 0; c < d; ++c) m(c, j) = g(rng);
    m.col(j).normalize();
  }
  return m;
}

/// Random views with optional features and random positive weights.
inline std::vector<rllreg::PointSetView> random_views(std::mt19937_64& rng, int m, Eigen::Index n,
                                                      Eigen::Index d, bool weighted) {
  std::uniform_real_distribution<double> w(0.5, 2.0);
  std::vector<rllreg::PointSetView> views;
  for (int i = 0; i < m; ++i) {
    auto v = rllreg::PointSetView::unweighted(random_cloud(rng, n), i);
    if (d > 0) v.features = random_unit_columns(rng, d, n);
    if (weighted) {
      for (Eigen::Index j = 0; j < n; ++j) v.weights[j] = w(rng);
    }
    views.push_back(std::move(v));
  }
  return views;
}

inline rllreg::MixtureState random_state(std::mt19937_64& rng, Eigen::Index k, Eigen::Index d) {
  std::uniform_real_distribution<double> u(0.3, 1.5);
  rllreg::MixtureState s;
  s.means = random_cloud(rng, k);
  s.variances.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) s.variances[c] = u(rng);
  s.mixing_weights = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  if (d > 0) s.feature_means = random_unit_columns(rng, d, k);
  s.variance_floor = 1e-8;
  return s;
}

inline double deg(double r) { return r * 180.0 / std::acos(-1.0); }

}  // namespace testing


namespace testing {

/// An evenly spread crop of a synthetic room: asymmetric enough for
/// registration to be well posed.
inline rllreg::PointCloud room_crop(std::uint64_t seed, Eigen::Index n, double radius = 2.0) {
  const auto scene = rllreg::generate_scene_cloud(rllreg::SceneKind::Room, 6, 0.04, seed);
  Eigen::Vector3d c = 0.5 * (scene.lower + scene.upper);
  c.z() = scene.eye_height;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < scene.cloud.cols(); ++j) {
    if ((scene.cloud.col(j) - c).norm() <= radius) keep.push_back(j);
  }
  rllreg::PointCloud crop(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) crop.col(static_cast<Eigen::Index>(j)) = scene.cloud.col(keep[j]);
  crop = rllreg::voxel_downsample(crop, 0.05);
  const auto idx = rllreg::spatial_subsample(crop, n);
  rllreg::PointCloud out(3, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = crop.col(idx[j]);
  return out;
}

inline rllreg::PointCloud transformed(const rllreg::RigidTransform& t, const rllreg::PointCloud& p) {
  return (t.rotation * p).colwise() + t.translation;
}

inline double diameter(const rllreg::PointCloud& p) { return rllreg::max_pairwise_distance(p); }

}  // namespace testing
