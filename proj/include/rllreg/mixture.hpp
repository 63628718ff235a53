#pragma once

// Joint spatial/feature mixture: isotropic Gaussian components in the common
// frame, each carrying a von Mises-Fisher mean direction for the point
// features. Mixing weights are fixed and uniform; there is no outlier class.

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "rllreg/geom.hpp"

namespace rllreg {

/// One view: points in its local frame, optional unit features (D x N) and
/// positive attention weights.
struct PointSetView {
  PointCloud points;
  std::optional<Eigen::MatrixXd> features;
  Eigen::VectorXd weights;
  int id = 0;

  static PointSetView unweighted(PointCloud points, int id = 0);

  Eigen::Index size() const { return points.cols(); }
  bool has_features() const { return features.has_value(); }
  /// Throws InvalidArgument when lengths disagree, weights are not positive
  /// or features are not unit length.
  void validate() const;
};

struct MixtureState {
  Eigen::Matrix3Xd means;                        // 3 x K
  Eigen::VectorXd variances;                     // K
  Eigen::VectorXd mixing_weights;                // K, sums to 1
  std::optional<Eigen::MatrixXd> feature_means;  // D x K, unit columns
  double feature_scale = 0.4;
  double variance_floor = 0.0;

  Eigen::Index num_components() const { return means.cols(); }
};

/// Row-major N_i x K responsibilities for one view.
using Responsibilities = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PosteriorMatrix {
  std::vector<Responsibilities> views;
  /// Rows that had to fall back to 1/K; stays zero in practice.
  std::size_t uniform_fallback_rows = 0;
};

/// alpha_ijk proportional to pi_k N(T_i x_ij; mu_k, sigma_k^2 I) exp(nu_k' y_ij / s^2).
/// The feature factor is used only when `use_features` is set and both the
/// views and the state carry features.
PosteriorMatrix e_step(const std::vector<PointSetView>& views,
                       const std::vector<RigidTransform>& transforms, const MixtureState& state,
                       bool use_features);

struct TransformUpdate {
  std::vector<RigidTransform> transforms;
  std::vector<bool> degenerate;

  bool any_degenerate() const;
};

/// Closed-form weighted Procrustes per view against the per-point virtual
/// targets m_ij = sum_k (alpha/sigma^2) mu_k / sum_k (alpha/sigma^2).
/// Views whose weighted cross-covariance has rank < 2 keep `previous`.
TransformUpdate update_transforms(const std::vector<PointSetView>& views,
                                  const PosteriorMatrix& posteriors, const MixtureState& state,
                                  const std::vector<RigidTransform>& previous);

/// Weighted mean and variance update. With `update_means` false the means are
/// held and only the variances move. Components with zero responsibility
/// keep their previous parameters.
MixtureState update_spatial(const std::vector<PointSetView>& views,
                            const std::vector<RigidTransform>& transforms,
                            const PosteriorMatrix& posteriors, const MixtureState& state,
                            bool update_means = true);

/// nu_k = sum w alpha y / |sum w alpha y|. Columns with an exactly vanishing
/// sum keep `previous` (or e_1 when there is none).
Eigen::MatrixXd update_feature_means(const std::vector<PointSetView>& views,
                                     const PosteriorMatrix& posteriors,
                                     const std::optional<Eigen::MatrixXd>& previous,
                                     Eigen::Index num_components);

/// Expected complete-data log-likelihood with every parameter-independent
/// constant dropped:
///   sum_ijk w_ij alpha_ijk [ -3/2 log sigma_k^2 - |T_i x_ij - mu_k|^2 / (2 sigma_k^2)
///                            + nu_k' y_ij / s^2 ]
/// The dropped terms are log pi_k (fixed), -3/2 log(2 pi) and the vMF
/// normaliser (s is fixed). The feature term is present only when
/// `use_features` is set and the state carries feature means.
double complete_data_objective(const std::vector<PointSetView>& views,
                               const std::vector<RigidTransform>& transforms,
                               const PosteriorMatrix& posteriors, const MixtureState& state,
                               bool use_features);

/// Weighted observed-data log-likelihood sum_ij w_ij log sum_k pi_k p(x, y | k),
/// same constant convention as complete_data_objective.
double log_likelihood(const std::vector<PointSetView>& views,
                      const std::vector<RigidTransform>& transforms, const MixtureState& state,
                      bool use_features);

}  // namespace rllreg
