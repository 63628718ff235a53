#include "rllreg/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "rllreg/error.hpp"

namespace rllreg {
namespace {

constexpr int kCurveSteps = 50;   // scale grid i / 20, i = 0..50
constexpr double kCurveDivisor = 20.0;

double recall_at(const std::vector<PairRecord>& pairs, double rot_deg, double trans) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (p.rotation_error_deg < rot_deg && p.translation_error < trans) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

struct SampleResult {
  std::vector<PairRecord> pairs;
  StageTimings timings;
  int degenerate = 0;
};

}  // namespace

RecallCurves recall_curves(const std::vector<PairRecord>& pairs, const EvalThresholds& t) {
  const double inf = std::numeric_limits<double>::infinity();
  RecallCurves c;
  for (int i = 0; i <= kCurveSteps; ++i) {
    const double s = i / kCurveDivisor;
    c.rotation.push_back({s * t.rotation_deg, recall_at(pairs, s * t.rotation_deg, inf)});
    c.translation.push_back({s * t.translation, recall_at(pairs, inf, s * t.translation)});
    c.joint.push_back({s, recall_at(pairs, s * t.rotation_deg, s * t.translation)});
  }
  return c;
}

std::vector<PairRecord> score_pairs(const std::string& name, const std::vector<RigidTransform>& estimates,
                                    const GroundTruth& ground_truth, const EvalThresholds& thresholds) {
  if (estimates.size() != ground_truth.poses.size()) {
    throw Error(ErrorKind::InvalidArgument, "sample '" + name + "': estimate/pose count mismatch");
  }
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    for (std::size_t k = i + 1; k < estimates.size(); ++k) {
      const RigidTransform est = compose(inverse(estimates[i]), estimates[k]);
      const RigidTransform gt = ground_truth.relative(i, k);
      PairRecord r;
      r.sample = name;
      r.i = static_cast<int>(i);
      r.k = static_cast<int>(k);
      r.rotation_error_deg = rotation_error(est, gt) * 180.0 / std::numbers::pi;
      r.translation_error = translation_error(est, gt);
      r.success = r.rotation_error_deg < thresholds.rotation_deg &&
                  r.translation_error < thresholds.translation;
      out.push_back(r);
    }
  }
  return out;
}

void summarize(EvalReport& report) {
  report.successes = 0;
  double rot = 0.0, trans = 0.0;
  for (auto& p : report.pairs) {
    p.success = p.rotation_error_deg < report.thresholds.rotation_deg &&
                p.translation_error < report.thresholds.translation;
    if (p.success) {
      ++report.successes;
      rot += p.rotation_error_deg;
      trans += p.translation_error;
    }
  }
  const auto n = report.pairs.size();
  report.success_rate = n ? static_cast<double>(report.successes) / static_cast<double>(n) : 0.0;
  report.mean_success_rotation_deg = report.successes ? rot / static_cast<double>(report.successes) : 0.0;
  report.mean_success_translation = report.successes ? trans / static_cast<double>(report.successes) : 0.0;
  report.recall = recall_curves(report.pairs, report.thresholds);
}

EvalReport evaluate(const std::vector<EvalSample>& samples, const MethodConfig& method,
                    const PreprocessConfig& preprocess, const EvalThresholds& thresholds, int jobs) {
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "evaluate: no samples");
  if (jobs < 1) throw Error(ErrorKind::Config, "jobs must be positive");
  method.validate();
  preprocess.validate();

  std::vector<SampleResult> results(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  std::atomic<std::size_t> next{0};

  auto run_one = [&](std::size_t s) {
    const EvalSample& sample = samples[s];
    SampleResult& res = results[s];
    res.timings.load = sample.load_seconds;
    if (sample.estimates) {
      res.pairs = score_pairs(sample.name, *sample.estimates, sample.ground_truth, thresholds);
      return;
    }
    std::vector<PreparedView> prepared;
    for (std::size_t i = 0; i < sample.views.size(); ++i) {
      PreprocessConfig pc = preprocess;
      pc.seed = mix_seed(mix_seed(preprocess.seed, s), i);
      prepared.push_back(prepare_view(sample.views[i], pc));
      res.timings.downsample += prepared.back().downsample_seconds;
      res.timings.descriptor += prepared.back().descriptor_seconds;
    }
    MethodConfig m = method;
    m.engine.rng_seed = mix_seed(method.engine.rng_seed, s);
    const auto t0 = std::chrono::steady_clock::now();
    const RegistrationResult r = register_views(make_views(prepared, m), m.engine);
    res.timings.registration =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.degenerate = r.degenerate_updates;
    res.pairs = score_pairs(sample.name, r.final_transforms, sample.ground_truth, thresholds);
  };
  auto worker = [&]() {
    for (std::size_t s = next++; s < samples.size(); s = next++) {
      try {
        run_one(s);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  };

  const int threads = std::min<int>(jobs, static_cast<int>(samples.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport report;
  report.method = method.name;
  report.thresholds = thresholds;
  for (const auto& r : results) {
    report.pairs.insert(report.pairs.end(), r.pairs.begin(), r.pairs.end());
    report.timings.load += r.timings.load;
    report.timings.downsample += r.timings.downsample;
    report.timings.descriptor += r.timings.descriptor;
    report.timings.registration += r.timings.registration;
    report.degenerate_updates += r.degenerate;
  }
  summarize(report);
  return report;
}

namespace {

nlohmann::json curve_json(const std::vector<RecallPoint>& c) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : c) a.push_back({{"threshold", p.threshold}, {"recall", p.recall}});
  return a;
}

std::vector<RecallPoint> curve_from(const nlohmann::json& a) {
  std::vector<RecallPoint> c;
  for (const auto& p : a) c.push_back({p.at("threshold").get<double>(), p.at("recall").get<double>()});
  return c;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r, bool include_timings) {
  nlohmann::json j;
  j["format"] = "rllreg-eval";
  j["version"] = 1;
  j["method"] = r.method;
  j["thresholds"] = {{"rotation_deg", r.thresholds.rotation_deg}, {"translation", r.thresholds.translation}};
  j["num_pairs"] = r.pairs.size();
  j["successes"] = r.successes;
  j["success_rate"] = r.success_rate;
  j["mean_success_rotation_deg"] = r.mean_success_rotation_deg;
  j["mean_success_translation"] = r.mean_success_translation;
  j["degenerate_updates"] = r.degenerate_updates;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    pairs.push_back({{"sample", p.sample},
                     {"i", p.i},
                     {"k", p.k},
                     {"rotation_error_deg", p.rotation_error_deg},
                     {"translation_error", p.translation_error},
                     {"success", p.success}});
  }
  j["pairs"] = pairs;
  j["recall"] = {{"rotation", curve_json(r.recall.rotation)},
                 {"translation", curve_json(r.recall.translation)},
                 {"joint", curve_json(r.recall.joint)}};
  if (include_timings) {
    j["timings"] = {{"load_s", r.timings.load},
                    {"downsample_s", r.timings.downsample},
                    {"descriptor_s", r.timings.descriptor},
                    {"register_s", r.timings.registration}};
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "rllreg-eval") {
      throw Error(ErrorKind::Parse, "not an rllreg evaluation report");
    }
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.thresholds.rotation_deg = j.at("thresholds").at("rotation_deg").get<double>();
    r.thresholds.translation = j.at("thresholds").at("translation").get<double>();
    r.successes = j.at("successes").get<std::size_t>();
    r.success_rate = j.at("success_rate").get<double>();
    r.mean_success_rotation_deg = j.at("mean_success_rotation_deg").get<double>();
    r.mean_success_translation = j.at("mean_success_translation").get<double>();
    r.degenerate_updates = j.at("degenerate_updates").get<int>();
    for (const auto& p : j.at("pairs")) {
      PairRecord rec;
      rec.sample = p.at("sample").get<std::string>();
      rec.i = p.at("i").get<int>();
      rec.k = p.at("k").get<int>();
      rec.rotation_error_deg = p.at("rotation_error_deg").get<double>();
      rec.translation_error = p.at("translation_error").get<double>();
      rec.success = p.at("success").get<bool>();
      r.pairs.push_back(rec);
    }
    r.recall.rotation = curve_from(j.at("recall").at("rotation"));
    r.recall.translation = curve_from(j.at("recall").at("translation"));
    r.recall.joint = curve_from(j.at("recall").at("joint"));
    if (j.contains("timings")) {
      const auto& t = j.at("timings");
      r.timings = {t.at("load_s").get<double>(), t.at("downsample_s").get<double>(),
                   t.at("descriptor_s").get<double>(), t.at("register_s").get<double>()};
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed evaluation report: ") + e.what());
  }
}

std::string recall_csv(const RecallCurves& c) {
  std::ostringstream out;
  out.precision(17);
  out << "curve,threshold,recall\n";
  auto dump = [&](const char* name, const std::vector<RecallPoint>& pts) {
    for (const auto& p : pts) out << name << ',' << p.threshold << ',' << p.recall << '\n';
  };
  dump("rotation_deg", c.rotation);
  dump("translation", c.translation);
  dump("joint_scale", c.joint);
  return out.str();
}

int default_jobs() {
  if (const char* env = std::getenv("RLLREG_JOBS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

}  // namespace rllreg
