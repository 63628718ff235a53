#pragma once

// Preprocessing shared by registration, training and evaluation: voxel
// downsampling, descriptors, an optional seeded point cap, and assembly of the
// mixture views for a given method (which heads and weights are in use).

#include <cstdint>
#include <string>
#include <vector>

#include "rllreg/engine.hpp"
#include "rllreg/features.hpp"
#include "rllreg/rll.hpp"
#include "rllreg/scene.hpp"

namespace rllreg {

enum class CapMode {
  /// spatial_subsample: evenly spread, deterministic.
  Even,
  /// Seeded uniform random subset.
  Random,
};

struct PreprocessConfig {
  double voxel = 0.05;
  /// Keep at most this many points (in original order); 0 keeps everything.
  /// Descriptors are computed on the full downsampled view, before the cap.
  int max_points = 0;
  CapMode cap = CapMode::Even;
  int neighborhood_k = kDefaultNeighborhood;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PreparedView {
  PointCloud points;
  /// Standardized raw descriptors, D_raw x N.
  Eigen::MatrixXd descriptors;
  double downsample_seconds = 0.0;
  double descriptor_seconds = 0.0;
};

PreparedView prepare_view(const PointCloud& points, const PreprocessConfig& config);

enum class WeightMode { Uniform, Learned, Density };

const char* to_string(WeightMode mode);

struct MethodConfig {
  std::string name = "baseline";
  bool use_features = false;
  WeightMode weights = WeightMode::Uniform;
  FeatureHeadParams head;
  /// Gaussian bandwidth for density weights.
  double density_bandwidth = 0.1;
  EngineConfig engine;

  HeadUsage usage() const { return {use_features, weights == WeightMode::Learned}; }
  void validate() const;
};

std::vector<PointSetView> make_views(const std::vector<PreparedView>& views,
                                     const MethodConfig& method);

/// Training sample from prepared views of one scene and its ground truth.
TrainingSample make_training_sample(const std::vector<PreparedView>& views,
                                    const GroundTruth& ground_truth, std::uint64_t seed);

/// Applies a fresh random motion A_i to every view: points become A_i(x),
/// poses become P_i o A_i^{-1}; descriptors are motion invariant and kept.
TrainingSample augment(const TrainingSample& base, double max_angle, double max_translation,
                       std::uint64_t seed);

/// Samples served per epoch in a seeded shuffled order over a fixed base
/// set, each freshly augmented. Deterministic given the seed.
SampleProvider augmented_provider(std::vector<TrainingSample> base, int samples_per_epoch,
                                  double max_angle, double max_translation, std::uint64_t seed);

/// Mixes 64-bit values into a well-spread seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace rllreg
