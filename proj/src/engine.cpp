#include "rllreg/engine.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rllreg/error.hpp"

namespace rllreg {

void EngineConfig::validate() const {
  if (num_components < 1) throw Error(ErrorKind::Config, "num_components must be >= 1");
  if (num_iterations < 1) throw Error(ErrorKind::Config, "num_iterations must be >= 1");
  if (!(feature_scale > 0.0)) throw Error(ErrorKind::Config, "feature_scale must be > 0");
  if (mu_freeze_iters < 0 || feature_warmup_iters < 0) {
    throw Error(ErrorKind::Config, "freeze/warm-up counts must be non-negative");
  }
  if (std::abs(init_rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorKind::Config, "init_rotation must be a rotation");
  }
}

double max_pairwise_distance(const PointCloud& points) {
  double best = 0.0;
  for (Eigen::Index a = 0; a < points.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < points.cols(); ++b) {
      best = std::max(best, (points.col(a) - points.col(b)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

Initialization initialize(const std::vector<PointSetView>& views, const EngineConfig& config) {
  config.validate();
  Eigen::Index total = 0;
  for (const auto& v : views) {
    if (v.size() == 0) throw Error(ErrorKind::InvalidArgument, "initialize: empty view");
    total += v.size();
  }
  if (total < 4) throw Error(ErrorKind::Degenerate, "initialize: fewer than 4 points in total");

  PointCloud pooled(3, total);
  Eigen::Index offset = 0;
  for (const auto& v : views) {
    pooled.middleCols(offset, v.size()) = v.points;
    offset += v.size();
  }

  Initialization init;
  init.centroid = pooled.rowwise().mean();
  init.radius = std::sqrt((pooled.colwise() - init.centroid).colwise().squaredNorm().mean());

  double sigma = 0.0;
  if (total <= kExactDiameterLimit) {
    sigma = max_pairwise_distance(pooled);
  } else {
    sigma = (pooled.rowwise().maxCoeff() - pooled.rowwise().minCoeff()).norm();
  }
  if (!(sigma > 0.0)) throw Error(ErrorKind::Degenerate, "initialize: all points coincide");

  const Eigen::Index k = config.num_components;
  std::mt19937_64 rng(config.rng_seed);
  MixtureState& s = init.state;
  s.means.resize(3, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    s.means.col(c) = init.centroid + init.radius * (config.init_rotation * random_unit_vector(rng));
  }
  s.variances = Eigen::VectorXd::Constant(k, sigma * sigma);
  s.mixing_weights = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  s.feature_scale = config.feature_scale;
  const double sigma_min = 1e-4 * sigma;
  s.variance_floor = sigma_min * sigma_min;
  init.transforms.assign(views.size(), RigidTransform::identity());
  return init;
}

RegistrationResult register_views(const std::vector<PointSetView>& views,
                                  const EngineConfig& config) {
  if (views.size() < 2) throw Error(ErrorKind::InvalidArgument, "register: need at least 2 views");
  const bool features = config.use_features &&
                        std::all_of(views.begin(), views.end(),
                                    [](const PointSetView& v) { return v.has_features(); });

  Initialization init = initialize(views, config);
  MixtureState state = std::move(init.state);
  std::vector<RigidTransform> transforms = std::move(init.transforms);

  RegistrationResult result;
  if (config.record_trajectory) result.trajectory.reserve(config.num_iterations);
  PosteriorMatrix posteriors;
  for (int n = 1; n <= config.num_iterations; ++n) {
    const bool feature_e_step = features && n > config.feature_warmup_iters &&
                                state.feature_means.has_value();
    posteriors = e_step(views, transforms, state, feature_e_step);
    result.uniform_fallback_rows += posteriors.uniform_fallback_rows;

    ObjectiveSample sample;
    sample.iteration = n;
    if (config.record_objective) {
      sample.after_e_step = complete_data_objective(views, transforms, posteriors, state, features);
    }

    const std::vector<RigidTransform> before = transforms;
    TransformUpdate tu = update_transforms(views, posteriors, state, transforms);
    transforms = std::move(tu.transforms);
    result.degenerate_updates +=
        static_cast<int>(std::count(tu.degenerate.begin(), tu.degenerate.end(), true));
    if (config.record_objective) {
      sample.after_transforms = complete_data_objective(views, transforms, posteriors, state, features);
    }

    state = update_spatial(views, transforms, posteriors, state, n > config.mu_freeze_iters);
    if (config.record_objective) {
      sample.after_spatial = complete_data_objective(views, transforms, posteriors, state, features);
    }

    if (features) {
      state.feature_means =
          update_feature_means(views, posteriors, state.feature_means, state.num_components());
    }
    if (config.record_objective) {
      sample.after_features = complete_data_objective(views, transforms, posteriors, state, features);
      result.objective_trace.push_back(sample);
    }
    if (config.record_trajectory) result.trajectory.push_back(transforms);
    result.iterations_run = n;

    if (config.early_stop_angle > 0.0 && config.early_stop_translation > 0.0) {
      bool settled = true;
      for (std::size_t i = 0; i < transforms.size() && settled; ++i) {
        settled = rotation_error(before[i], transforms[i]) < config.early_stop_angle &&
                  translation_error(before[i], transforms[i]) < config.early_stop_translation;
      }
      if (settled) break;
    }
  }
  result.final_transforms = std::move(transforms);
  result.final_state = std::move(state);
  result.posteriors = std::move(posteriors);
  return result;
}

RigidTransform relative_transform(const RegistrationResult& result, std::size_t i, std::size_t k,
                                  std::optional<int> iteration) {
  const std::vector<RigidTransform>* set = &result.final_transforms;
  if (iteration) {
    if (result.trajectory.empty()) {
      throw Error(ErrorKind::InvalidArgument, "relative_transform: trajectory was not recorded");
    }
    if (*iteration < 1 || *iteration > static_cast<int>(result.trajectory.size())) {
      throw Error(ErrorKind::InvalidArgument, "relative_transform: iteration out of range");
    }
    set = &result.trajectory[static_cast<std::size_t>(*iteration - 1)];
  }
  if (i >= set->size() || k >= set->size()) {
    throw Error(ErrorKind::InvalidArgument, "relative_transform: view index out of range");
  }
  if (i == k) return RigidTransform::identity();
  return compose(inverse((*set)[i]), (*set)[k]);
}

}  // namespace rllreg
