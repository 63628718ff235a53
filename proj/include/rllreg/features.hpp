#pragma once

// Per-point features and attention weights. A fixed, rotation-invariant local
// shape descriptor feeds two small trainable heads: an affine map followed by
// L2 normalisation (features) and an affine map followed by softplus
// (attention weights).

#include <cstdint>

#include <Eigen/Dense>

#include "rllreg/geom.hpp"

namespace rllreg {

/// Descriptor layout, one row each:
///   0-2  eigenvalues of the neighbourhood covariance, descending, summing to 1
///   3    linearity   (l1 - l2) / l1
///   4    planarity   (l2 - l3) / l2
///   5    sphericity  l3 / l1
///   6    log density relative to the view median, log(r_median / r)
///   7    height above the local plane, |n.(p - c)| / r
///   8    normal agreement with a neighbourhood twice as large, |n_k . n_2k|
///   9    centroid offset, |p - c| / r
/// where r is the RMS neighbour distance and c the neighbourhood centroid.
inline constexpr int kRawDescriptorDim = 10;
inline constexpr int kDefaultNeighborhood = 32;
inline constexpr int kDefaultFeatureDim = 16;

/// D_raw x N descriptors from the k nearest neighbours of every point.
/// Throws InvalidArgument when N <= k.
Eigen::MatrixXd compute_descriptors(const PointCloud& points, int k = kDefaultNeighborhood);

/// Per-row z-score within one view; constant rows become zero.
Eigen::MatrixXd standardize_descriptors(const Eigen::MatrixXd& raw);

struct FeatureHeadParams {
  Eigen::MatrixXd feature_matrix;   // D x D_raw
  Eigen::VectorXd feature_bias;     // D
  Eigen::VectorXd attention_vector; // D_raw
  double attention_bias = 0.0;

  Eigen::Index dim() const { return feature_matrix.rows(); }
  Eigen::Index raw_dim() const { return feature_matrix.cols(); }
  Eigen::Index parameter_count() const { return dim() * raw_dim() + dim() + raw_dim() + 1; }

  /// Gaussian feature matrix scaled by 1/sqrt(D_raw), zero bias, and an
  /// attention head that outputs exactly 1 everywhere.
  static FeatureHeadParams initial(Eigen::Index dim, Eigen::Index raw_dim, std::uint64_t seed);

  /// Row-major feature matrix, feature bias, attention vector, attention bias.
  Eigen::VectorXd flatten() const;
  static FeatureHeadParams unflatten(const Eigen::VectorXd& flat, Eigen::Index dim,
                                     Eigen::Index raw_dim);
  /// Index range [begin, end) of the attention parameters in flatten().
  Eigen::Index attention_offset() const { return dim() * raw_dim() + dim(); }

  void validate() const;
};

struct FeatureOutput {
  Eigen::VectorXd feature;
  bool degenerate = false;
};

/// normalize(feature_matrix * raw + feature_bias); e_1 when the
/// pre-normalisation norm is below 1e-12.
FeatureOutput feature_head(const Eigen::VectorXd& raw, const FeatureHeadParams& params);

/// softplus(attention_vector . raw + attention_bias).
double attention_head(const Eigen::VectorXd& raw, const FeatureHeadParams& params);

double softplus(double z);

/// Column-wise heads over a whole view. `degenerate` counts e_1 fallbacks.
Eigen::MatrixXd apply_feature_head(const Eigen::MatrixXd& raw, const FeatureHeadParams& params,
                                   int* degenerate = nullptr);
Eigen::VectorXd apply_attention_head(const Eigen::MatrixXd& raw, const FeatureHeadParams& params);

/// Gaussian kernel sums sum_j exp(-|x_i - x_j|^2 / (2 h^2)), self included.
Eigen::VectorXd kernel_density(const PointCloud& points, double bandwidth);

/// Inverse density 1 / (eps + kde), rescaled to mean 1.
Eigen::VectorXd density_weights(const PointCloud& points, double bandwidth);

inline constexpr double kDensityEpsilon = 1e-9;

}  // namespace rllreg
