#include "rllreg/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rllreg/error.hpp"
#include "rllreg/kernels.hpp"

namespace rllreg {
namespace {

using RowPoints = Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor>;

void check_shapes(const std::vector<PointSetView>& views,
                  const std::vector<RigidTransform>& transforms) {
  if (views.size() != transforms.size()) {
    throw Error(ErrorKind::InvalidArgument, "views and transforms differ in length");
  }
}

void check_shapes(const std::vector<PointSetView>& views, const PosteriorMatrix& posteriors,
                  Eigen::Index k) {
  if (posteriors.views.size() != views.size()) {
    throw Error(ErrorKind::InvalidArgument, "posteriors and views differ in length");
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (posteriors.views[i].rows() != views[i].size() || posteriors.views[i].cols() != k) {
      throw Error(ErrorKind::InvalidArgument, "posterior shape does not match view/state");
    }
  }
}

bool features_active(const std::vector<PointSetView>& views, const MixtureState& state,
                     bool use_features) {
  if (!use_features || !state.feature_means) return false;
  for (const auto& v : views) {
    if (!v.features) {
      throw Error(ErrorKind::InvalidArgument, "feature model requested but a view has no features");
    }
    if (v.features->rows() != state.feature_means->rows()) {
      throw Error(ErrorKind::InvalidArgument, "feature dimension mismatch");
    }
  }
  return true;
}

// |T x_j - mu_k|^2 for every j, k.
Eigen::MatrixXd squared_distances(const PointCloud& moved, const Eigen::Matrix3Xd& means) {
  Eigen::MatrixXd d2(moved.cols(), means.cols());
  for (Eigen::Index k = 0; k < means.cols(); ++k) {
    d2.col(k) = (moved.colwise() - means.col(k)).colwise().squaredNorm().transpose();
  }
  return d2;
}

}  // namespace

PointSetView PointSetView::unweighted(PointCloud points, int id) {
  PointSetView v;
  v.weights = Eigen::VectorXd::Ones(points.cols());
  v.points = std::move(points);
  v.id = id;
  return v;
}

void PointSetView::validate() const {
  if (weights.size() != points.cols()) {
    throw Error(ErrorKind::InvalidArgument, "view weights and points differ in length");
  }
  if (!points.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite point");
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (!(weights[j] > 0.0) || !std::isfinite(weights[j])) {
      throw Error(ErrorKind::InvalidArgument, "view weights must be positive and finite");
    }
  }
  if (features) {
    if (features->cols() != points.cols()) {
      throw Error(ErrorKind::InvalidArgument, "view features and points differ in length");
    }
    for (Eigen::Index j = 0; j < features->cols(); ++j) {
      if (std::abs(features->col(j).norm() - 1.0) > 1e-9) {
        throw Error(ErrorKind::InvalidArgument, "view features must be unit vectors");
      }
    }
  }
}

bool TransformUpdate::any_degenerate() const {
  return std::any_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
}

PosteriorMatrix e_step(const std::vector<PointSetView>& views,
                       const std::vector<RigidTransform>& transforms, const MixtureState& state,
                       bool use_features) {
  check_shapes(views, transforms);
  const Eigen::Index k = state.num_components();
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "mixture needs at least one component");
  const bool with_features = features_active(views, state, use_features);

  const RowPoints means = state.means;
  Eigen::VectorXd neg_half_inv_var(k), log_prior(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    neg_half_inv_var[c] = -0.5 / state.variances[c];
    log_prior[c] = std::log(state.mixing_weights[c]) - 1.5 * std::log(state.variances[c]);
  }
  const double inv_s2 = 1.0 / (state.feature_scale * state.feature_scale);
  Responsibilities nu_rows;
  if (with_features) nu_rows = *state.feature_means;

  PosteriorMatrix out;
  out.views.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const RowPoints moved = transforms[i].apply(views[i].points);
    Responsibilities alpha(views[i].size(), k);
    Responsibilities feature_logits;
    kernels::ResponsibilityArgs args;
    args.px = moved.row(0).data();
    args.py = moved.row(1).data();
    args.pz = moved.row(2).data();
    args.n = static_cast<std::size_t>(views[i].size());
    args.mx = means.row(0).data();
    args.my = means.row(1).data();
    args.mz = means.row(2).data();
    args.k = static_cast<std::size_t>(k);
    args.neg_half_inv_var = neg_half_inv_var.data();
    args.log_prior = log_prior.data();
    if (with_features) {
      feature_logits.resize(views[i].size(), k);
      kernels::FeatureArgs fa;
      fa.y = views[i].features->data();
      fa.n = static_cast<std::size_t>(views[i].size());
      fa.d = static_cast<std::size_t>(views[i].features->rows());
      fa.k = static_cast<std::size_t>(k);
      fa.nu = nu_rows.data();
      fa.scale = inv_s2;
      fa.out = feature_logits.data();
      kernels::feature_logits(fa);
      args.feature_logits = feature_logits.data();
    }
    args.out = alpha.data();
    out.uniform_fallback_rows += kernels::responsibilities(args);
    out.views.push_back(std::move(alpha));
  }
  return out;
}

TransformUpdate update_transforms(const std::vector<PointSetView>& views,
                                  const PosteriorMatrix& posteriors, const MixtureState& state,
                                  const std::vector<RigidTransform>& previous) {
  check_shapes(views, previous);
  check_shapes(views, posteriors, state.num_components());
  const Eigen::VectorXd inv_var = state.variances.cwiseInverse();
  const RowPoints means = state.means;

  TransformUpdate out;
  out.transforms = previous;
  out.degenerate.assign(views.size(), false);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const PointSetView& v = views[i];
    // Virtual targets, one per point.
    RowPoints targets(3, v.size());
    Eigen::VectorXd precision(v.size());
    kernels::TargetArgs args;
    args.alpha = posteriors.views[i].data();
    args.n = static_cast<std::size_t>(v.size());
    args.k = static_cast<std::size_t>(state.num_components());
    args.inv_var = inv_var.data();
    args.mx = means.row(0).data();
    args.my = means.row(1).data();
    args.mz = means.row(2).data();
    args.precision = precision.data();
    args.tx = targets.row(0).data();
    args.ty = targets.row(1).data();
    args.tz = targets.row(2).data();
    kernels::virtual_targets(args);

    const Eigen::VectorXd lambda = v.weights.cwiseProduct(precision);
    const double total = lambda.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
      out.degenerate[i] = true;
      continue;
    }
    const Eigen::Vector3d x_bar = v.points * lambda / total;
    const Eigen::Vector3d m_bar = targets * lambda / total;
    const Eigen::Matrix3Xd xc = v.points.colwise() - x_bar;
    const Eigen::Matrix3Xd mc = targets.colwise() - m_bar;
    const Eigen::Matrix3d cross = xc * lambda.asDiagonal() * mc.transpose();

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    // Rank test against the scale of the inputs, so that targets which only
    // differ by rounding (a single live component) count as rank 0.
    const double scale = std::sqrt((xc.colwise().squaredNorm() * lambda)(0) *
                                   (targets.colwise().squaredNorm() * lambda)(0));
    if (!cross.allFinite() || !(sv[0] > 1e-12 * scale) || sv[1] <= 1e-12 * std::max(sv[0], 1e-12 * scale)) {
      out.degenerate[i] = true;
      continue;
    }
    const Eigen::Matrix3d& u = svd.matrixU();
    const Eigen::Matrix3d& w = svd.matrixV();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    if ((w * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    RigidTransform t;
    t.rotation = w * d * u.transpose();
    t.translation = m_bar - t.rotation * x_bar;
    out.transforms[i] = t.orthonormalized();
  }
  return out;
}

MixtureState update_spatial(const std::vector<PointSetView>& views,
                            const std::vector<RigidTransform>& transforms,
                            const PosteriorMatrix& posteriors, const MixtureState& state,
                            bool update_means) {
  check_shapes(views, transforms);
  const Eigen::Index k = state.num_components();
  check_shapes(views, posteriors, k);

  std::vector<RowPoints> moved;
  moved.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) moved.emplace_back(transforms[i].apply(views[i].points));

  auto args_for = [&](std::size_t i) {
    kernels::MomentArgs a;
    a.alpha = posteriors.views[i].data();
    a.n = static_cast<std::size_t>(views[i].size());
    a.k = static_cast<std::size_t>(k);
    a.weights = views[i].weights.data();
    a.px = moved[i].row(0).data();
    a.py = moved[i].row(1).data();
    a.pz = moved[i].row(2).data();
    return a;
  };

  Eigen::VectorXd mass = Eigen::VectorXd::Zero(k);
  RowPoints first = RowPoints::Zero(3, k);
  for (std::size_t i = 0; i < views.size(); ++i) {
    kernels::MomentArgs a = args_for(i);
    a.mass = mass.data();
    a.fx = first.row(0).data();
    a.fy = first.row(1).data();
    a.fz = first.row(2).data();
    kernels::first_moments(a);
  }

  MixtureState next = state;
  std::vector<bool> alive(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    alive[c] = mass[c] > std::numeric_limits<double>::min() && std::isfinite(mass[c]);
    if (alive[c] && update_means) next.means.col(c) = first.col(c) / mass[c];
  }

  const RowPoints means = next.means;
  Eigen::VectorXd second = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < views.size(); ++i) {
    kernels::MomentArgs a = args_for(i);
    a.mx = means.row(0).data();
    a.my = means.row(1).data();
    a.mz = means.row(2).data();
    a.second = second.data();
    kernels::second_moments(a);
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (!alive[c]) continue;
    next.variances[c] = std::max(second[c] / (3.0 * mass[c]), state.variance_floor);
  }
  return next;
}

Eigen::MatrixXd update_feature_means(const std::vector<PointSetView>& views,
                                     const PosteriorMatrix& posteriors,
                                     const std::optional<Eigen::MatrixXd>& previous,
                                     Eigen::Index num_components) {
  check_shapes(views, posteriors, num_components);
  if (views.empty() || !views.front().features) {
    throw Error(ErrorKind::InvalidArgument, "update_feature_means requires features");
  }
  const Eigen::Index dim = views.front().features->rows();
  Responsibilities sums = Responsibilities::Zero(dim, num_components);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!views[i].features || views[i].features->rows() != dim) {
      throw Error(ErrorKind::InvalidArgument, "inconsistent view features");
    }
    kernels::FeatureArgs fa;
    fa.y = views[i].features->data();
    fa.n = static_cast<std::size_t>(views[i].size());
    fa.d = static_cast<std::size_t>(dim);
    fa.k = static_cast<std::size_t>(num_components);
    fa.alpha = posteriors.views[i].data();
    fa.weights = views[i].weights.data();
    fa.out = sums.data();
    kernels::feature_sums(fa);
  }
  Eigen::MatrixXd nu(dim, num_components);
  for (Eigen::Index c = 0; c < num_components; ++c) {
    const double n = sums.col(c).norm();
    if (n > 0.0 && std::isfinite(n)) {
      nu.col(c) = sums.col(c) / n;
    } else if (previous && previous->rows() == dim && previous->cols() == num_components) {
      nu.col(c) = previous->col(c);
    } else {
      nu.col(c) = Eigen::VectorXd::Unit(dim, 0);
    }
  }
  return nu;
}

double complete_data_objective(const std::vector<PointSetView>& views,
                               const std::vector<RigidTransform>& transforms,
                               const PosteriorMatrix& posteriors, const MixtureState& state,
                               bool use_features) {
  check_shapes(views, transforms);
  const Eigen::Index k = state.num_components();
  check_shapes(views, posteriors, k);
  const bool with_features = features_active(views, state, use_features);
  const double inv_s2 = 1.0 / (state.feature_scale * state.feature_scale);

  Eigen::VectorXd log_norm(k), neg_half_inv_var(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    log_norm[c] = -1.5 * std::log(state.variances[c]);
    neg_half_inv_var[c] = -0.5 / state.variances[c];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Eigen::MatrixXd d2 = squared_distances(transforms[i].apply(views[i].points), state.means);
    Eigen::MatrixXd logp = (d2 * neg_half_inv_var.asDiagonal()).rowwise() + log_norm.transpose();
    if (with_features) logp += inv_s2 * (views[i].features->transpose() * *state.feature_means);
    const Eigen::MatrixXd wa = views[i].weights.asDiagonal() * posteriors.views[i];
    total += wa.cwiseProduct(logp).sum();
  }
  return total;
}

double log_likelihood(const std::vector<PointSetView>& views,
                      const std::vector<RigidTransform>& transforms, const MixtureState& state,
                      bool use_features) {
  check_shapes(views, transforms);
  const Eigen::Index k = state.num_components();
  const bool with_features = features_active(views, state, use_features);
  const double inv_s2 = 1.0 / (state.feature_scale * state.feature_scale);
  double total = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Eigen::MatrixXd d2 = squared_distances(transforms[i].apply(views[i].points), state.means);
    Eigen::MatrixXd feat;
    if (with_features) feat = inv_s2 * (views[i].features->transpose() * *state.feature_means);
    for (Eigen::Index j = 0; j < views[i].size(); ++j) {
      double best = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd row(k);
      for (Eigen::Index c = 0; c < k; ++c) {
        row[c] = std::log(state.mixing_weights[c]) - 1.5 * std::log(state.variances[c]) -
                 0.5 * d2(j, c) / state.variances[c] + (with_features ? feat(j, c) : 0.0);
        best = std::max(best, row[c]);
      }
      total += views[i].weights[j] * (best + std::log((row.array() - best).exp().sum()));
    }
  }
  return total;
}

}  // namespace rllreg
