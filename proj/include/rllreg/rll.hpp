#pragma once

// Registration loss learning: a robust loss over the EM trajectory against
// known relative poses, finite-difference gradients of that loss with respect
// to the feature/attention head, and an Adam training loop.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rllreg/engine.hpp"
#include "rllreg/features.hpp"
#include "rllreg/geom.hpp"

namespace rllreg {

enum class LossForm { GemanMcClure, L2 };

/// How each unordered view pair {i, k} contributes.
enum class PairConvention {
  /// Points of view i only, 1/N_i (literal form, not relabeling invariant).
  FirstIndex,
  /// Mean of both directions, each with its own 1/N.
  Symmetric,
};

struct LossConfig {
  double scale_c = 0.1;
  int iteration_weight_offset = 40;
  int n_iter_train = 23;
  LossForm form = LossForm::GemanMcClure;
  PairConvention pairs = PairConvention::Symmetric;

  void validate() const;
};

/// rho(r) = r^2 / (1 + r^2).
double geman_mcclure(double r);
double penalty(double r, LossForm form);
/// v_n = 1 / (offset - n), n is 1-based.
double iteration_weight(int n, int offset);

/// Ground-truth poses P_i (view-local to a common frame); T^gt_ik = P_i^{-1} P_k.
struct GroundTruth {
  std::vector<RigidTransform> poses;

  RigidTransform relative(std::size_t i, std::size_t k) const;
};

/// sum_n v_n sum_{i<k} (1/N_i) sum_j rho(|T^n_ik(x_ij) - T^gt_ik(x_ij)| / c)
/// over a per-iteration trajectory of absolute transforms.
double sample_loss(const std::vector<std::vector<RigidTransform>>& trajectory,
                   const GroundTruth& ground_truth, const std::vector<PointCloud>& views,
                   const LossConfig& config);

/// Which head outputs enter the registration.
struct HeadUsage {
  bool features = true;
  bool attention = false;
};

/// One registration problem with known answer; descriptors are precomputed
/// because they do not depend on the trainable parameters.
struct TrainingSample {
  std::vector<PointCloud> points;
  std::vector<Eigen::MatrixXd> descriptors;
  GroundTruth ground_truth;
  std::vector<RigidTransform> perturbations;
  std::uint64_t seed = 0;
};

/// Builds the mixture views for a sample under the given head.
std::vector<PointSetView> build_views(const TrainingSample& sample, const FeatureHeadParams& params,
                                      const HeadUsage& usage);

/// Runs the registration with a recorded trajectory and returns its loss.
/// The engine seed is combined with the sample seed.
double registration_loss(const TrainingSample& sample, const FeatureHeadParams& params,
                         const HeadUsage& usage, const EngineConfig& engine,
                         const LossConfig& loss);

struct GradientEstimate {
  Eigen::VectorXd gradient;
  double value = 0.0;
  /// Coordinates zeroed because a probe returned a non-finite value.
  int flagged = 0;
};

/// Central differences, step fd_step * max(|x_p|, 1). Coordinates with
/// mask[p] == false are skipped (gradient 0). `value` is f(x).
GradientEstimate finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double fd_step,
                                            const std::vector<bool>& mask = {});

/// Gradient of registration_loss with respect to the flattened head. Every
/// probe reuses the engine seed.
GradientEstimate estimate_gradient(const TrainingSample& sample, const FeatureHeadParams& params,
                                   const HeadUsage& usage, const EngineConfig& engine,
                                   const LossConfig& loss, double fd_step);

/// Parameters that can influence the loss under `usage`.
std::vector<bool> trainable_mask(const FeatureHeadParams& params, const HeadUsage& usage);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, AdamState& state,
               double learning_rate);

struct TrainerConfig {
  double learning_rate = 0.004;
  int batch_size = 6;
  int epochs = 20;
  int samples_per_epoch = 200;
  double lr_decay = 0.2;
  int lr_decay_every = 40;
  double fd_step = 1e-3;
  std::uint64_t rng_seed = 0;

  void validate() const;
  /// Learning rate used during `epoch` (0-based).
  double rate_at(int epoch) const;
};

using SampleProvider = std::function<TrainingSample(int epoch, int index)>;

struct EpochReport {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  int skipped_batches = 0;
};

struct TrainResult {
  FeatureHeadParams params;
  std::vector<EpochReport> history;
  int skipped_batches = 0;
  int flagged_probes = 0;
};

using EpochCallback = std::function<void(const EpochReport&, const FeatureHeadParams&)>;

TrainResult train(const SampleProvider& samples, const FeatureHeadParams& initial,
                  const HeadUsage& usage, const TrainerConfig& trainer,
                  const EngineConfig& engine, const LossConfig& loss,
                  const EpochCallback& on_epoch = {});

/// Text checkpoint: a header line with format version, D, D_raw and a
/// 64-bit config hash, followed by the flattened parameters in hex-float.
void write_checkpoint(const std::string& path, const FeatureHeadParams& params,
                      std::uint64_t config_hash);

struct Checkpoint {
  FeatureHeadParams params;
  std::uint64_t config_hash = 0;
};

Checkpoint read_checkpoint(const std::string& path);

/// FNV-1a, used for config hashes.
std::uint64_t fnv1a(const std::string& text);

}  // namespace rllreg
