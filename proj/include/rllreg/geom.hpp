#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace rllreg {

using Point3 = Eigen::Vector3d;
/// Column-per-point storage used throughout the library.
using PointCloud = Eigen::Matrix3Xd;

/// Proper rigid motion p -> R p + t.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);
  static RigidTransform from_axis_angle(const Eigen::Vector3d& axis, double angle,
                                        const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

  Eigen::Matrix4d matrix() const;

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  PointCloud apply(const PointCloud& points) const;

  /// Max of ||R^T R - I||_F and |det R - 1|.
  double orthonormality_error() const;
  /// Projects the rotation back onto SO(3) when drift exceeds `tolerance`.
  RigidTransform orthonormalized(double tolerance = 1e-9) const;
};

Point3 apply(const RigidTransform& t, const Point3& p);

/// apply(compose(a, b), p) == apply(a, apply(b, p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);

/// Geodesic angle between the two rotations, in radians.
double rotation_error(const RigidTransform& a, const RigidTransform& b);
double translation_error(const RigidTransform& a, const RigidTransform& b);

/// Nearest rotation in the Frobenius sense, with det = +1.
Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m);

/// One centroid per occupied voxel. Cells are keyed by floor(c / side) per
/// axis, so boundary points fall into the lower cell. Output order follows
/// the lexicographic order of cell keys.
PointCloud voxel_downsample(const PointCloud& points, double voxel_side);

/// At most `target` point indices spread evenly over space: one point per
/// occupied cell (the one nearest the cell centroid) of the finest cubic grid,
/// found by bisection on the cell side, that has no more than `target` cells.
/// Indices are ascending; everything is returned when the cloud is small.
std::vector<Eigen::Index> spatial_subsample(const PointCloud& points, Eigen::Index target);

struct PerturbationSpec {
  double max_angle = 0.0;        // radians, in [0, pi]
  double max_translation = 0.0;  // scene units
  std::uint64_t rng_seed = 0;
};

/// Axis uniform on S^2, angle uniform in [0, max_angle]; translation
/// direction uniform on S^2 with norm uniform in [0, max_translation].
RigidTransform sample_perturbation(const PerturbationSpec& spec);
RigidTransform sample_perturbation(double max_angle, double max_translation,
                                   std::mt19937_64& rng);

Eigen::Vector3d random_unit_vector(std::mt19937_64& rng);

}  // namespace rllreg
