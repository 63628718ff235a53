#pragma once

// Pairwise evaluation: every unordered view pair of every sample is scored by
// rotation/translation error against ground truth, using success thresholds
// (default 4 degrees / 0.1 scene units), plus recall curves and stage timings.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rllreg/pipeline.hpp"

namespace rllreg {

struct EvalThresholds {
  double rotation_deg = 4.0;
  double translation = 0.1;
};

struct PairRecord {
  std::string sample;
  int i = 0;
  int k = 0;
  double rotation_error_deg = 0.0;
  double translation_error = 0.0;
  bool success = false;
};

struct StageTimings {
  double load = 0.0;
  double downsample = 0.0;
  double descriptor = 0.0;
  double registration = 0.0;
};

struct RecallPoint {
  double threshold = 0.0;
  double recall = 0.0;
};

/// Recall curves: rotation (degrees), translation (scene units) and a joint
/// curve over a common scale s of both thresholds; at s = 1 the joint recall
/// is exactly the success rate.
struct RecallCurves {
  std::vector<RecallPoint> rotation;
  std::vector<RecallPoint> translation;
  std::vector<RecallPoint> joint;
};

struct EvalReport {
  std::string method;
  EvalThresholds thresholds;
  std::vector<PairRecord> pairs;
  std::size_t successes = 0;
  double success_rate = 0.0;
  /// Mean errors over successful pairs (0 when there are none).
  double mean_success_rotation_deg = 0.0;
  double mean_success_translation = 0.0;
  RecallCurves recall;
  StageTimings timings;
  int degenerate_updates = 0;
};

/// One evaluation problem: views in their local frames and the true poses.
/// With `estimates` set, registration is skipped and those absolute
/// transforms are scored instead.
struct EvalSample {
  std::string name;
  std::vector<PointCloud> views;
  GroundTruth ground_truth;
  std::optional<std::vector<RigidTransform>> estimates;
  double load_seconds = 0.0;
};

/// Fills success flags, rates, means and recall curves from `pairs`.
void summarize(EvalReport& report);

RecallCurves recall_curves(const std::vector<PairRecord>& pairs, const EvalThresholds& thresholds);

/// Scores all pairs of one sample from absolute transforms.
std::vector<PairRecord> score_pairs(const std::string& name, const std::vector<RigidTransform>& estimates,
                                    const GroundTruth& ground_truth, const EvalThresholds& thresholds);

/// Runs every sample (in parallel over `jobs` threads; results merged in
/// sample order) and returns the summarized report. The engine seed of sample
/// s is mix_seed(method.engine.rng_seed, s), the point cap seed likewise.
EvalReport evaluate(const std::vector<EvalSample>& samples, const MethodConfig& method,
                    const PreprocessConfig& preprocess, const EvalThresholds& thresholds,
                    int jobs = 1);

nlohmann::json to_json(const EvalReport& report, bool include_timings = true);
EvalReport report_from_json(const nlohmann::json& j);

/// "curve,threshold,recall" rows.
std::string recall_csv(const RecallCurves& curves);

/// Default worker count: RLLREG_JOBS if set and positive, else 1.
int default_jobs();

}  // namespace rllreg
