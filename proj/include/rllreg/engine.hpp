#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rllreg/geom.hpp"
#include "rllreg/mixture.hpp"

namespace rllreg {

struct EngineConfig {
  int num_components = 100;
  int num_iterations = 100;
  double feature_scale = 0.4;
  /// Means stay at their initial values for this many iterations.
  int mu_freeze_iters = 2;
  /// The feature factor is left out of the E-step for this many iterations.
  int feature_warmup_iters = 1;
  std::uint64_t rng_seed = 0;
  bool record_trajectory = false;
  /// Record the complete-data objective around every conditional update.
  bool record_objective = false;
  /// Use the vMF feature model when the views carry features.
  bool use_features = true;
  /// Orientation of the sampled sphere directions. Rotating it together with
  /// the input makes the whole run equivariant.
  Eigen::Matrix3d init_rotation = Eigen::Matrix3d::Identity();
  /// Optional early stop when every per-view update moves less than the
  /// given angle (rad) and translation. Off unless both are positive.
  double early_stop_angle = 0.0;
  double early_stop_translation = 0.0;

  void validate() const;
};

/// F(Theta; Theta^n) sampled after the E-step and after each conditional update.
struct ObjectiveSample {
  int iteration = 0;
  double after_e_step = 0.0;
  double after_transforms = 0.0;
  double after_spatial = 0.0;
  double after_features = 0.0;
};

struct RegistrationResult {
  /// T_i maps view i into the mixture frame.
  std::vector<RigidTransform> final_transforms;
  /// trajectory[n - 1][i] is T_i after iteration n.
  std::vector<std::vector<RigidTransform>> trajectory;
  MixtureState final_state;
  PosteriorMatrix posteriors;
  std::vector<ObjectiveSample> objective_trace;
  int iterations_run = 0;
  int degenerate_updates = 0;
  std::size_t uniform_fallback_rows = 0;
};

struct Initialization {
  MixtureState state;
  std::vector<RigidTransform> transforms;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double radius = 0.0;
};

/// Pooled points at identity poses with more than this many points use the
/// bounding-box diagonal instead of the exact maximum pairwise distance.
inline constexpr Eigen::Index kExactDiameterLimit = 10000;

/// Means uniformly on the sphere around the pooled centroid with radius equal
/// to the pooled RMS distance to it; every sigma equals the largest pairwise
/// distance. Throws Degenerate for fewer than four pooled points.
Initialization initialize(const std::vector<PointSetView>& views, const EngineConfig& config);

RegistrationResult register_views(const std::vector<PointSetView>& views,
                                  const EngineConfig& config);

/// T_ik = T_i^{-1} o T_k, mapping view k's local frame into view i's.
/// `iteration` is 1-based and requires a recorded trajectory.
RigidTransform relative_transform(const RegistrationResult& result, std::size_t i, std::size_t k,
                                  std::optional<int> iteration = std::nullopt);

/// Largest pairwise distance, brute force.
double max_pairwise_distance(const PointCloud& points);

}  // namespace rllreg
