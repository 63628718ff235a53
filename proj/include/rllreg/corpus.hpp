#pragma once

// On-disk sample collections: a directory with manifest.json plus one point
// file per view and one transforms file with the ground-truth poses (and,
// optionally, one with estimated poses to be scored as-is).

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rllreg/eval.hpp"
#include "rllreg/io.hpp"

namespace rllreg {

struct CorpusSample {
  std::string name;
  std::vector<PointCloud> views;
  GroundTruth ground_truth;
  std::optional<std::vector<RigidTransform>> estimates;
};

struct Corpus {
  std::vector<CorpusSample> samples;
  /// Free-form generation parameters, stored verbatim.
  nlohmann::json meta = nlohmann::json::object();
  double load_seconds = 0.0;
};

/// Writes views as XYZ (17 significant digits) and poses as transform files.
void write_corpus(const std::string& dir, const Corpus& corpus);

/// Throws Io for missing files and Parse for a malformed manifest.
Corpus read_corpus(const std::string& dir);

std::vector<EvalSample> to_eval_samples(const Corpus& corpus);

}  // namespace rllreg
