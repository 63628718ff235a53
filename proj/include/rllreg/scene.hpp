#pragma once

// Synthetic scenes with exact ground truth: a dense surface cloud of a room,
// a corridor or an outdoor lidar-like layout, cropped into overlapping views
// that are each expressed in their own (perturbed) local frame.

#include <cstdint>
#include <string>
#include <vector>

#include "rllreg/geom.hpp"
#include "rllreg/rll.hpp"

namespace rllreg {

enum class SceneKind { Room, Corridor, LidarRing };

const char* to_string(SceneKind kind);
SceneKind scene_kind_from_string(const std::string& name);

struct SceneCloud {
  SceneKind kind = SceneKind::Room;
  PointCloud cloud;
  Eigen::Vector3d lower = Eigen::Vector3d::Zero();
  Eigen::Vector3d upper = Eigen::Vector3d::Zero();
  /// Height at which view centres are placed.
  double eye_height = 1.2;
};

struct ViewSpec {
  int num_views = 2;
  /// Required pairwise overlap, (0, 1]. 1 yields identical views and poses.
  double overlap_target = 0.5;
  /// Radius within which a point counts as overlapping (one voxel side).
  double overlap_radius = 0.05;
  /// Crop radius around each view centre.
  double view_radius = 2.0;
  double noise_sigma = 0.0;
  double max_angle = 0.0;
  double max_translation = 0.0;
  /// When false view 0 keeps the reference pose and only the others move.
  bool perturb_reference = true;
  int max_retries = 64;
};

struct SceneSpec {
  SceneKind kind = SceneKind::Room;
  int object_count = 6;
  /// Surface sampling step of the dense scene cloud.
  double point_spacing = 0.04;
  std::uint64_t rng_seed = 0;
  ViewSpec views;

  void validate() const;
};

struct ViewSet {
  /// View points in their local frames.
  std::vector<PointCloud> views;
  GroundTruth ground_truth;
  std::vector<RigidTransform> perturbations;
  std::vector<Eigen::Vector3d> centers;
  /// overlap(i, k): fraction of view-i points with a view-k point within the
  /// overlap radius, under ground-truth alignment.
  Eigen::MatrixXd overlap;
};

struct Scene {
  SceneCloud scene;
  ViewSet views;
};

SceneCloud generate_scene_cloud(SceneKind kind, int object_count, double point_spacing,
                                std::uint64_t seed);

/// Crops overlapping views; retries with closer centres until every pair
/// meets the target. Throws InvalidArgument when that fails.
ViewSet sample_views(const SceneCloud& scene, const ViewSpec& spec, std::uint64_t seed);

Scene generate_scene(const SceneSpec& spec);

/// Fraction of `a` with a point of `b` within `radius`.
double overlap_fraction(const PointCloud& a, const PointCloud& b, double radius);

}  // namespace rllreg
