#pragma once

// The method-variant grid: an untrained-feature run, heads trained with the
// registration loss (with and without attention weights, robust or squared
// loss) and a sweep over the number of EM iterations used during training,
// all scored on the same held-out samples.

#include <functional>
#include <string>
#include <vector>

#include "rllreg/corpus.hpp"
#include "rllreg/eval.hpp"

namespace rllreg {

struct TrainingSetup {
  TrainerConfig trainer;
  EngineConfig engine;  // K = 50 during training
  LossConfig loss;
  PreprocessConfig preprocess;
  /// Per-view augmentation drawn fresh for every served sample.
  double augment_angle = 0.39269908169872414;  // pi / 8
  double augment_translation = 0.8;
  /// Seed of the initial head.
  std::uint64_t head_seed = 7;
  int feature_dim = kDefaultFeatureDim;

  TrainingSetup();
  void validate() const;
  std::uint64_t hash(const HeadUsage& usage) const;
};

/// Descriptors and point caps for every corpus sample (views in local frames).
std::vector<TrainingSample> prepare_training_set(const Corpus& corpus,
                                                 const PreprocessConfig& preprocess);

using EpochLogger = std::function<void(const std::string& run, const EpochReport&,
                                       const FeatureHeadParams&)>;

/// Trains a head under `usage`; the loss form and N_iter come from `setup`.
TrainResult train_head(const std::vector<TrainingSample>& base, const TrainingSetup& setup,
                       const HeadUsage& usage, const std::string& run_name = "train",
                       const EpochLogger& log = {});

struct AblationVariant {
  std::string name;
  bool use_features = false;
  WeightMode weights = WeightMode::Uniform;
  /// Trained with the registration loss; otherwise the initial head is used.
  bool trained = false;
  LossForm loss = LossForm::GemanMcClure;
  int train_iterations = 23;
};

/// baseline, features, RLL, RLL+weights, RLL-L2, RLL N_iter in {9, 15, 23, 29}
/// (+weights). The N_iter = 23 entry shares its head with RLL+weights.
std::vector<AblationVariant> default_variants();

struct AblationConfig {
  TrainingSetup training;
  EngineConfig eval_engine;  // K = 100, N_iter = 100
  PreprocessConfig eval_preprocess;
  EvalThresholds thresholds;
  std::vector<AblationVariant> variants = default_variants();
  /// When set, trained heads are written here as <slug>.ckpt, with the loss
  /// history and training time in <slug>.train.json.
  std::string checkpoint_dir;
  /// Reuse a head from checkpoint_dir whose config hash matches instead of
  /// training it again.
  bool reuse_checkpoints = false;
  /// Store the training wall-clock time next to each head.
  bool store_timings = true;
  int jobs = 1;
};

struct AblationRow {
  AblationVariant variant;
  EvalReport report;
  std::vector<EpochReport> history;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  /// The head came from an earlier run with the same configuration.
  bool reused = false;
};

/// Progress messages go to `log_line` when set.
std::vector<AblationRow> run_ablation(const Corpus& train_corpus, const Corpus& test_corpus,
                                      const AblationConfig& config,
                                      const std::function<void(const std::string&)>& log_line = {},
                                      const EpochLogger& epoch_log = {});

/// Fixed-width text table: variant, success rate, mean successful errors.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows, bool include_timings = true);

/// Lower-case file-name friendly form, e.g. "rll-weights-iter15".
std::string variant_slug(const AblationVariant& v);

}  // namespace rllreg
