#include "rllreg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <numeric>
#include <random>

#include "rllreg/error.hpp"

namespace rllreg {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a simple combination.
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void PreprocessConfig::validate() const {
  if (!(voxel > 0.0)) throw Error(ErrorKind::Config, "voxel side must be positive");
  if (max_points < 0) throw Error(ErrorKind::Config, "max_points must be non-negative");
  if (neighborhood_k < 3) throw Error(ErrorKind::Config, "neighborhood k must be at least 3");
}

PreparedView prepare_view(const PointCloud& points, const PreprocessConfig& config) {
  config.validate();
  PreparedView out;
  auto t0 = std::chrono::steady_clock::now();
  const PointCloud down = voxel_downsample(points, config.voxel);
  out.downsample_seconds = seconds_since(t0);
  if (down.cols() <= config.neighborhood_k) {
    throw Error(ErrorKind::Degenerate, "view has " + std::to_string(down.cols()) +
                                           " points after downsampling, need more than " +
                                           std::to_string(config.neighborhood_k));
  }

  t0 = std::chrono::steady_clock::now();
  const Eigen::MatrixXd desc = standardize_descriptors(compute_descriptors(down, config.neighborhood_k));
  out.descriptor_seconds = seconds_since(t0);

  if (config.max_points > 0 && down.cols() > config.max_points) {
    std::vector<Eigen::Index> idx;
    if (config.cap == CapMode::Even) {
      idx = spatial_subsample(down, config.max_points);
    } else {
      idx.resize(static_cast<std::size_t>(down.cols()));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      std::mt19937_64 rng(config.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(config.max_points));
      std::sort(idx.begin(), idx.end());
    }
    const auto kept = static_cast<Eigen::Index>(idx.size());
    out.points.resize(3, kept);
    out.descriptors.resize(desc.rows(), kept);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.points.col(static_cast<Eigen::Index>(j)) = down.col(idx[j]);
      out.descriptors.col(static_cast<Eigen::Index>(j)) = desc.col(idx[j]);
    }
  } else {
    out.points = down;
    out.descriptors = desc;
  }
  return out;
}

const char* to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::Uniform: return "uniform";
    case WeightMode::Learned: return "learned";
    case WeightMode::Density: return "density";
  }
  return "uniform";
}

void MethodConfig::validate() const {
  engine.validate();
  if (use_features || weights == WeightMode::Learned) head.validate();
  if (weights == WeightMode::Density && !(density_bandwidth > 0.0)) {
    throw Error(ErrorKind::Config, "density bandwidth must be positive");
  }
}

std::vector<PointSetView> make_views(const std::vector<PreparedView>& views,
                                     const MethodConfig& method) {
  method.validate();
  std::vector<PointSetView> out;
  out.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    PointSetView v = PointSetView::unweighted(views[i].points, static_cast<int>(i));
    if (method.use_features) v.features = apply_feature_head(views[i].descriptors, method.head);
    if (method.weights == WeightMode::Learned) {
      v.weights = apply_attention_head(views[i].descriptors, method.head);
    } else if (method.weights == WeightMode::Density) {
      v.weights = density_weights(views[i].points, method.density_bandwidth);
    }
    out.push_back(std::move(v));
  }
  return out;
}

TrainingSample make_training_sample(const std::vector<PreparedView>& views,
                                    const GroundTruth& ground_truth, std::uint64_t seed) {
  if (views.size() != ground_truth.poses.size()) {
    throw Error(ErrorKind::InvalidArgument, "views and ground-truth poses differ in length");
  }
  TrainingSample s;
  for (const auto& v : views) {
    s.points.push_back(v.points);
    s.descriptors.push_back(v.descriptors);
  }
  s.ground_truth = ground_truth;
  s.perturbations.assign(views.size(), RigidTransform::identity());
  s.seed = seed;
  return s;
}

TrainingSample augment(const TrainingSample& base, double max_angle, double max_translation,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainingSample s = base;
  s.seed = seed;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const RigidTransform a = sample_perturbation(max_angle, max_translation, rng);
    // Motions are applied about the view centroid so the rotation does not
    // also swing the cloud around the local origin.
    const Eigen::Vector3d c = s.points[i].rowwise().mean();
    RigidTransform about = a;
    about.translation = a.translation + c - a.rotation * c;
    s.points[i] = about.apply(s.points[i]);
    s.ground_truth.poses[i] = compose(s.ground_truth.poses[i], inverse(about));
    s.perturbations[i] = compose(about, s.perturbations[i]);
  }
  return s;
}

SampleProvider augmented_provider(std::vector<TrainingSample> base, int samples_per_epoch,
                                  double max_angle, double max_translation, std::uint64_t seed) {
  if (base.empty()) throw Error(ErrorKind::InvalidArgument, "training corpus is empty");
  if (samples_per_epoch < 1) throw Error(ErrorKind::Config, "samples_per_epoch must be positive");
  auto shared = std::make_shared<const std::vector<TrainingSample>>(std::move(base));
  return [shared, samples_per_epoch, max_angle, max_translation, seed](int epoch, int index) {
    const auto n = static_cast<int>(shared->size());
    // Each pass over the base set uses its own shuffled order.
    const long flat = static_cast<long>(epoch) * samples_per_epoch + index;
    const long pass = flat / n;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(pass)));
    std::shuffle(order.begin(), order.end(), rng);
    const TrainingSample& b = (*shared)[static_cast<std::size_t>(order[static_cast<std::size_t>(flat % n)])];
    return augment(b, max_angle, max_translation,
                   mix_seed(seed ^ 0xa5a5a5a5ULL, static_cast<std::uint64_t>(flat)));
  };
}

}  // namespace rllreg
