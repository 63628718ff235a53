#include "rllreg/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "rllreg/error.hpp"

namespace rllreg {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct StoredHead {
  TrainResult result;
  double seconds = 0.0;
};

void write_head(const std::filesystem::path& stem, const StoredHead& head, std::uint64_t hash, bool timings) {
  write_checkpoint(stem.string() + ".ckpt", head.result.params, hash);
  nlohmann::json j;
  j["config_hash"] = hash;
  if (timings) j["train_s"] = head.seconds;
  j["skipped_batches"] = head.result.skipped_batches;
  j["flagged_probes"] = head.result.flagged_probes;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : head.result.history) {
    hist.push_back({{"epoch", h.epoch}, {"mean_loss", h.mean_loss}, {"learning_rate", h.learning_rate},
                    {"skipped_batches", h.skipped_batches}});
  }
  j["history"] = hist;
  std::ofstream out(stem.string() + ".train.json");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "cannot write " + stem.string() + ".train.json");
}

// A stored head is used only when both files exist and agree on the hash.
std::optional<StoredHead> read_head(const std::filesystem::path& stem, std::uint64_t hash) {
  const std::string ckpt = stem.string() + ".ckpt", meta = stem.string() + ".train.json";
  if (!std::filesystem::exists(ckpt) || !std::filesystem::exists(meta)) return std::nullopt;
  const Checkpoint c = read_checkpoint(ckpt);
  std::ifstream in(meta);
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || c.config_hash != hash || j.value("config_hash", std::uint64_t{0}) != hash) {
    return std::nullopt;
  }
  StoredHead h;
  h.result.params = c.params;
  h.seconds = j.value("train_s", 0.0);
  h.result.skipped_batches = j.value("skipped_batches", 0);
  h.result.flagged_probes = j.value("flagged_probes", 0);
  for (const auto& e : j.at("history")) {
    h.result.history.push_back({e.at("epoch").get<int>(), e.at("mean_loss").get<double>(),
                                e.at("learning_rate").get<double>(), e.at("skipped_batches").get<int>()});
  }
  return h;
}

}  // namespace

TrainingSetup::TrainingSetup() {
  engine.num_components = 50;
  engine.num_iterations = 23;
  preprocess.max_points = 150;
}

void TrainingSetup::validate() const {
  trainer.validate();
  engine.validate();
  loss.validate();
  preprocess.validate();
  if (!(augment_angle >= 0.0 && augment_angle <= 3.141592653589793) || !(augment_translation >= 0.0)) {
    throw Error(ErrorKind::Config, "augmentation must have angle in [0, pi] and translation >= 0");
  }
  if (feature_dim < 1) throw Error(ErrorKind::Config, "feature dimension must be positive");
}

std::uint64_t TrainingSetup::hash(const HeadUsage& usage) const {
  std::ostringstream s;
  s.precision(17);
  s << trainer.learning_rate << ' ' << trainer.batch_size << ' ' << trainer.epochs << ' '
    << trainer.samples_per_epoch << ' ' << trainer.lr_decay << ' ' << trainer.lr_decay_every << ' '
    << trainer.fd_step << ' ' << trainer.rng_seed << ' ' << engine.num_components << ' '
    << engine.feature_scale << ' ' << engine.mu_freeze_iters << ' ' << engine.feature_warmup_iters
    << ' ' << engine.rng_seed << ' ' << loss.scale_c << ' ' << loss.iteration_weight_offset << ' '
    << loss.n_iter_train << ' ' << static_cast<int>(loss.form) << ' '
    << static_cast<int>(loss.pairs) << ' ' << preprocess.voxel << ' ' << preprocess.max_points
    << ' ' << static_cast<int>(preprocess.cap) << ' ' << preprocess.neighborhood_k << ' ' << preprocess.seed << ' ' << augment_angle << ' '
    << augment_translation << ' ' << head_seed << ' ' << feature_dim << ' ' << usage.features
    << ' ' << usage.attention;
  return fnv1a(s.str());
}

std::vector<TrainingSample> prepare_training_set(const Corpus& corpus,
                                                 const PreprocessConfig& preprocess) {
  std::vector<TrainingSample> out;
  out.reserve(corpus.samples.size());
  for (std::size_t s = 0; s < corpus.samples.size(); ++s) {
    const CorpusSample& cs = corpus.samples[s];
    std::vector<PreparedView> views;
    for (std::size_t i = 0; i < cs.views.size(); ++i) {
      PreprocessConfig pc = preprocess;
      pc.seed = mix_seed(mix_seed(preprocess.seed, s), i);
      views.push_back(prepare_view(cs.views[i], pc));
    }
    out.push_back(make_training_sample(views, cs.ground_truth, mix_seed(preprocess.seed ^ 0x7f4a7c15ULL, s)));
  }
  return out;
}

TrainResult train_head(const std::vector<TrainingSample>& base, const TrainingSetup& setup,
                       const HeadUsage& usage, const std::string& run_name, const EpochLogger& log) {
  setup.validate();
  const SampleProvider provider =
      augmented_provider(base, setup.trainer.samples_per_epoch, setup.augment_angle,
                         setup.augment_translation, setup.trainer.rng_seed);
  const FeatureHeadParams initial = FeatureHeadParams::initial(
      setup.feature_dim, base.front().descriptors.front().rows(), setup.head_seed);
  EpochCallback cb;
  if (log) cb = [&](const EpochReport& r, const FeatureHeadParams& p) { log(run_name, r, p); };
  return train(provider, initial, usage, setup.trainer, setup.engine, setup.loss, cb);
}

std::vector<AblationVariant> default_variants() {
  std::vector<AblationVariant> v;
  v.push_back({"baseline", false, WeightMode::Uniform, false, LossForm::GemanMcClure, 23});
  v.push_back({"features", true, WeightMode::Uniform, false, LossForm::GemanMcClure, 23});
  v.push_back({"RLL", true, WeightMode::Uniform, true, LossForm::GemanMcClure, 23});
  v.push_back({"RLL+weights", true, WeightMode::Learned, true, LossForm::GemanMcClure, 23});
  v.push_back({"RLL-L2+weights", true, WeightMode::Learned, true, LossForm::L2, 23});
  for (int n : {9, 15, 23, 29}) {
    v.push_back({"RLL N_iter=" + std::to_string(n) + "+weights", true, WeightMode::Learned, true,
                 LossForm::GemanMcClure, n});
  }
  return v;
}

std::string variant_slug(const AblationVariant& v) {
  if (!v.trained) return v.use_features ? "features" : (v.weights == WeightMode::Density ? "density" : "baseline");
  std::string s = "rll";
  if (v.weights == WeightMode::Learned) s += "-weights";
  if (v.loss == LossForm::L2) s += "-l2";
  s += "-iter" + std::to_string(v.train_iterations);
  return s;
}

std::vector<AblationRow> run_ablation(const Corpus& train_corpus, const Corpus& test_corpus,
                                      const AblationConfig& config,
                                      const std::function<void(const std::string&)>& log_line,
                                      const EpochLogger& epoch_log) {
  config.training.validate();
  config.eval_engine.validate();
  config.eval_preprocess.validate();
  if (config.variants.empty()) throw Error(ErrorKind::Config, "no ablation variants selected");
  auto say = [&](const std::string& m) {
    if (log_line) log_line(m);
  };

  // Prepared on first use: every head may come from storage.
  std::vector<TrainingSample> base;
  const std::vector<EvalSample> test = to_eval_samples(test_corpus);

  const Eigen::Index raw_dim = kRawDescriptorDim;
  const FeatureHeadParams initial =
      FeatureHeadParams::initial(config.training.feature_dim, raw_dim, config.training.head_seed);

  // Heads keyed by everything that changes the training run.
  using Key = std::tuple<bool, bool, int, int>;
  std::map<Key, std::pair<StoredHead, bool>> heads;

  std::vector<AblationRow> rows;
  for (const auto& v : config.variants) {
    AblationRow row;
    row.variant = v;
    MethodConfig method;
    method.name = v.name;
    method.use_features = v.use_features;
    method.weights = v.weights;
    method.head = initial;
    method.engine = config.eval_engine;

    if (v.trained) {
      const HeadUsage usage{v.use_features, v.weights == WeightMode::Learned};
      const Key key{usage.features, usage.attention, static_cast<int>(v.loss), v.train_iterations};
      auto it = heads.find(key);
      if (it == heads.end()) {
        TrainingSetup setup = config.training;
        setup.loss.form = v.loss;
        setup.loss.n_iter_train = v.train_iterations;
        setup.engine.num_iterations = v.train_iterations;
        const std::uint64_t hash = setup.hash(usage);
        const std::filesystem::path stem =
            config.checkpoint_dir.empty() ? std::filesystem::path() : std::filesystem::path(config.checkpoint_dir) / variant_slug(v);
        std::optional<StoredHead> stored;
        if (config.reuse_checkpoints && !config.checkpoint_dir.empty()) stored = read_head(stem, hash);
        const bool reused = stored.has_value();
        if (reused) {
          say("reusing " + v.name + " from " + stem.string() + ".ckpt");
        } else {
          say("training " + v.name);
          if (base.empty()) base = prepare_training_set(train_corpus, config.training.preprocess);
          const auto t0 = std::chrono::steady_clock::now();
          stored = StoredHead{train_head(base, setup, usage, v.name, epoch_log), 0.0};
          stored->seconds = seconds_since(t0);
          if (!config.checkpoint_dir.empty()) {
            std::filesystem::create_directories(config.checkpoint_dir);
            write_head(stem, *stored, hash, config.store_timings);
          }
        }
        it = heads.emplace(key, std::make_pair(std::move(*stored), reused)).first;
      }
      method.head = it->second.first.result.params;
      row.history = it->second.first.result.history;
      row.train_seconds = it->second.first.seconds;
      row.reused = it->second.second;
    }

    say("evaluating " + v.name);
    const auto t0 = std::chrono::steady_clock::now();
    row.report = evaluate(test, method, config.eval_preprocess, config.thresholds, config.jobs);
    row.eval_seconds = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s success %.1f%% (%zu/%zu)", v.name.c_str(),
                  100.0 * row.report.success_rate, row.report.successes, row.report.pairs.size());
    say(buf);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-24s %10s %8s %14s %14s\n", "variant", "success_%", "pairs",
                "mean_rot_deg", "mean_trans");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %10.3f %8zu %14.4f %14.5f\n", r.variant.name.c_str(),
                  100.0 * r.report.success_rate, r.report.pairs.size(),
                  r.report.mean_success_rotation_deg, r.report.mean_success_translation);
    out << buf;
  }
  return out.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows, bool include_timings) {
  nlohmann::json j;
  j["format"] = "rllreg-ablation";
  j["version"] = 1;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e;
    e["variant"] = r.variant.name;
    e["slug"] = variant_slug(r.variant);
    e["use_features"] = r.variant.use_features;
    e["weights"] = to_string(r.variant.weights);
    e["trained"] = r.variant.trained;
    e["loss"] = r.variant.loss == LossForm::L2 ? "l2" : "geman-mcclure";
    e["train_iterations"] = r.variant.train_iterations;
    e["success_rate"] = r.report.success_rate;
    e["successes"] = r.report.successes;
    e["num_pairs"] = r.report.pairs.size();
    e["mean_success_rotation_deg"] = r.report.mean_success_rotation_deg;
    e["mean_success_translation"] = r.report.mean_success_translation;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : r.history) hist.push_back({{"epoch", h.epoch}, {"mean_loss", h.mean_loss}});
    e["loss_history"] = hist;
    if (include_timings) e["timings"] = {{"train_s", r.train_seconds}, {"eval_s", r.eval_seconds}};
    list.push_back(e);
  }
  j["rows"] = list;
  return j;
}

}  // namespace rllreg
