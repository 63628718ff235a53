// rllreg command line: synth, register, train, eval, ablate.
//
// Failures print one JSON object on stderr,
//   {"error": {"kind": ..., "message": ..., "exit_code": ...}}
// and exit with a code that identifies the failure class.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rllreg/ablation.hpp"
#include "rllreg/corpus.hpp"
#include "rllreg/error.hpp"
#include "rllreg/eval.hpp"
#include "rllreg/io.hpp"
#include "rllreg/pipeline.hpp"
#include "rllreg/scene.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rllreg;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kConfig = 4,
  kParse = 5,
  kRuntime = 6,
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return kIo;
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument: return kConfig;
    case ErrorKind::Parse: return kParse;
    case ErrorKind::Degenerate: return kRuntime;
  }
  return kInternal;
}

int fail(const std::string& kind, const std::string& message, int code) {
  json j;
  j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
  return code;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// "indoor" (0.05), "lidar" (0.30) or a positive number.
double parse_voxel(const std::string& v) {
  if (v == "indoor") return 0.05;
  if (v == "lidar") return 0.30;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0' || !(x > 0.0) || !std::isfinite(x)) {
    throw Error(ErrorKind::Config, "--voxel expects 'indoor', 'lidar' or a positive number, got '" + v + "'");
  }
  return x;
}

double rad(double d) { return d * std::numbers::pi / 180.0; }

// Options shared by the commands that run registrations.
struct PreprocessOptions {
  std::string voxel = "indoor";
  int max_points = 1000;
  std::string cap = "even";
  int neighborhood_k = kDefaultNeighborhood;
  std::uint64_t seed = 0;

  void add(CLI::App* app, int default_cap) {
    max_points = default_cap;
    app->add_option("--voxel", voxel, "Voxel side: 'indoor' (0.05), 'lidar' (0.30) or a number")
        ->capture_default_str();
    app->add_option("--max-points", max_points, "Point cap per view after downsampling (0 = none)")
        ->capture_default_str();
    app->add_option("--cap", cap, "Point cap selection")
        ->check(CLI::IsMember({"even", "random"}))
        ->capture_default_str();
    app->add_option("--neighbors", neighborhood_k, "Descriptor neighbourhood size")->capture_default_str();
  }

  PreprocessConfig build() const {
    PreprocessConfig p;
    p.voxel = parse_voxel(voxel);
    p.max_points = max_points;
    p.cap = cap == "random" ? CapMode::Random : CapMode::Even;
    p.neighborhood_k = neighborhood_k;
    p.seed = seed;
    p.validate();
    return p;
  }
};

struct MethodOptions {
  bool features = false;
  std::string weights = "uniform";
  std::string checkpoint;
  std::uint64_t head_seed = 7;
  int feature_dim = kDefaultFeatureDim;
  double density_bandwidth = 0.1;
  int components = 100;
  int iterations = 100;
  double feature_scale = 0.4;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_flag("--features", features, "Use the vMF feature model");
    app->add_option("--weights", weights, "Per-point weights")
        ->check(CLI::IsMember({"uniform", "learned", "density"}))
        ->capture_default_str();
    app->add_option("--checkpoint", checkpoint, "Trained head (otherwise the seeded initial head)");
    app->add_option("--head-seed", head_seed, "Seed of the initial head")->capture_default_str();
    app->add_option("--feature-dim", feature_dim, "Feature channels of the initial head")->capture_default_str();
    app->add_option("--density-bandwidth", density_bandwidth, "Kernel bandwidth for density weights")
        ->capture_default_str();
    app->add_option("-K,--components", components, "Mixture components")->capture_default_str();
    app->add_option("--iterations", iterations, "EM iterations")->capture_default_str();
    app->add_option("--feature-scale", feature_scale, "vMF scale s")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
  }

  MethodConfig build(const std::string& name) const {
    MethodConfig m;
    m.name = name;
    m.use_features = features;
    m.weights = weights == "learned" ? WeightMode::Learned
                : weights == "density" ? WeightMode::Density
                                       : WeightMode::Uniform;
    if (!checkpoint.empty()) {
      m.head = read_checkpoint(checkpoint).params;
    } else {
      if (feature_dim < 1) throw Error(ErrorKind::Config, "--feature-dim must be positive");
      m.head = FeatureHeadParams::initial(feature_dim, kRawDescriptorDim, head_seed);
    }
    m.density_bandwidth = density_bandwidth;
    m.engine.num_components = components;
    m.engine.num_iterations = iterations;
    m.engine.feature_scale = feature_scale;
    m.engine.rng_seed = seed;
    m.validate();
    return m;
  }

  json describe(const MethodConfig& m) const {
    return {{"features", m.use_features},
            {"weights", to_string(m.weights)},
            {"checkpoint", checkpoint},
            {"components", m.engine.num_components},
            {"iterations", m.engine.num_iterations},
            {"feature_scale", m.engine.feature_scale},
            {"seed", m.engine.rng_seed}};
  }
};

struct TrainOptions {
  int epochs = 20;
  int samples_per_epoch = 200;
  int batch_size = 6;
  double learning_rate = 0.004;
  double lr_decay = 0.2;
  int lr_decay_every = 40;
  double fd_step = 1e-3;
  std::uint64_t seed = 0;
  int components = 50;
  int iterations = 23;
  std::string loss = "geman-mcclure";
  double scale_c = 0.1;
  int weight_offset = 40;
  bool attention = false;
  bool no_features = false;
  double augment_angle_deg = 22.5;
  double augment_translation = 0.8;
  std::uint64_t head_seed = 7;
  int feature_dim = kDefaultFeatureDim;
  PreprocessOptions pre;

  void add(CLI::App* app, bool usage_flags) {
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--samples-per-epoch", samples_per_epoch)->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--lr", learning_rate, "Initial Adam learning rate")->capture_default_str();
    app->add_option("--lr-decay", lr_decay, "Learning-rate factor per decay step")->capture_default_str();
    app->add_option("--lr-decay-every", lr_decay_every, "Epochs between decay steps")->capture_default_str();
    app->add_option("--fd-step", fd_step, "Relative finite-difference step")->capture_default_str();
    app->add_option("--train-seed", seed, "Training seed (sample order, augmentation, engine)")
        ->capture_default_str();
    app->add_option("--train-components", components, "Mixture components during training")
        ->capture_default_str();
    app->add_option("--train-iterations", iterations, "EM iterations during training")->capture_default_str();
    app->add_option("--loss", loss, "Penalty on point errors")
        ->check(CLI::IsMember({"geman-mcclure", "l2"}))
        ->capture_default_str();
    app->add_option("--scale-c", scale_c, "Loss scale c")->capture_default_str();
    app->add_option("--weight-offset", weight_offset, "Iteration weights 1/(offset - n)")->capture_default_str();
    if (usage_flags) {
      app->add_flag("--attention", attention, "Train the attention head as well (learned weights)");
      app->add_flag("--no-features", no_features, "Leave the feature head out (attention only)");
    }
    app->add_option("--augment-angle", augment_angle_deg, "Max augmentation angle, degrees")->capture_default_str();
    app->add_option("--augment-translation", augment_translation, "Max augmentation translation")
        ->capture_default_str();
    app->add_option("--head-seed", head_seed, "Seed of the initial head")->capture_default_str();
    app->add_option("--feature-dim", feature_dim, "Feature channels")->capture_default_str();
    app->add_option("--train-max-points", pre.max_points, "Point cap per view during training")
        ->capture_default_str();
  }

  TrainingSetup build(const std::string& voxel, int neighbors) const {
    TrainingSetup s;
    s.trainer.epochs = epochs;
    s.trainer.samples_per_epoch = samples_per_epoch;
    s.trainer.batch_size = batch_size;
    s.trainer.learning_rate = learning_rate;
    s.trainer.lr_decay = lr_decay;
    s.trainer.lr_decay_every = lr_decay_every;
    s.trainer.fd_step = fd_step;
    s.trainer.rng_seed = seed;
    s.engine.num_components = components;
    s.engine.num_iterations = iterations;
    s.engine.rng_seed = seed;
    s.loss.form = loss == "l2" ? LossForm::L2 : LossForm::GemanMcClure;
    s.loss.scale_c = scale_c;
    s.loss.n_iter_train = iterations;
    s.loss.iteration_weight_offset = weight_offset;
    s.augment_angle = rad(augment_angle_deg);
    s.augment_translation = augment_translation;
    s.head_seed = head_seed;
    s.feature_dim = feature_dim;
    PreprocessOptions p = pre;
    p.voxel = voxel;
    p.neighborhood_k = neighbors;
    s.preprocess = p.build();
    s.validate();
    return s;
  }
};

void write_loss_csv(const std::string& path, const std::vector<EpochReport>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss,learning_rate,skipped_batches\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << h.mean_loss << ',' << h.learning_rate << ',' << h.skipped_batches << '\n';
  }
  write_text(path, out.str());
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string kind = "room";
  int samples = 10;
  int views = 2;
  int objects = 6;
  double spacing = 0.04;
  double noise = 0.005;
  double overlap = 0.5;
  double view_radius = 2.0;
  double max_angle_deg = 22.5;
  double max_translation = 0.8;
  bool keep_reference = false;
  std::string voxel;
  bool raw = false;
  bool with_estimates = false;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthOptions& o) {
  const SceneKind kind = scene_kind_from_string(o.kind);
  const std::string voxel_text = o.voxel.empty() ? (kind == SceneKind::LidarRing ? "lidar" : "indoor") : o.voxel;
  const double voxel = parse_voxel(voxel_text);
  if (o.samples < 1) throw Error(ErrorKind::Config, "--samples must be positive");

  Corpus corpus;
  corpus.meta = {{"generator", to_string(kind)},
                 {"samples", o.samples},
                 {"views", o.views},
                 {"objects", o.objects},
                 {"spacing", o.spacing},
                 {"noise", o.noise},
                 {"overlap_target", o.overlap},
                 {"overlap_radius", voxel},
                 {"view_radius", o.view_radius},
                 {"max_angle_deg", o.max_angle_deg},
                 {"max_translation", o.max_translation},
                 {"perturb_reference", !o.keep_reference},
                 {"stored_voxel", o.raw ? 0.0 : voxel},
                 {"seed", o.seed}};
  json overlaps = json::array();
  for (int s = 0; s < o.samples; ++s) {
    SceneSpec spec;
    spec.kind = kind;
    spec.object_count = o.objects;
    spec.point_spacing = o.spacing;
    spec.rng_seed = mix_seed(o.seed, static_cast<std::uint64_t>(s));
    spec.views.num_views = o.views;
    spec.views.overlap_target = o.overlap;
    spec.views.overlap_radius = voxel;
    spec.views.view_radius = o.view_radius;
    spec.views.noise_sigma = o.noise;
    spec.views.max_angle = rad(o.max_angle_deg);
    spec.views.max_translation = o.max_translation;
    spec.views.perturb_reference = !o.keep_reference;
    const Scene scene = generate_scene(spec);

    CorpusSample cs;
    char name[32];
    std::snprintf(name, sizeof name, "s%04d", s);
    cs.name = name;
    for (const auto& v : scene.views.views) cs.views.push_back(o.raw ? v : voxel_downsample(v, voxel));
    cs.ground_truth = scene.views.ground_truth;
    if (o.with_estimates) cs.estimates = scene.views.ground_truth.poses;
    double min_overlap = 1.0;
    for (Eigen::Index i = 0; i < scene.views.overlap.rows(); ++i) {
      for (Eigen::Index k = 0; k < scene.views.overlap.cols(); ++k) {
        if (i != k) min_overlap = std::min(min_overlap, scene.views.overlap(i, k));
      }
    }
    overlaps.push_back(min_overlap);
    corpus.samples.push_back(std::move(cs));
  }
  corpus.meta["min_pair_overlap"] = overlaps;
  write_corpus(o.out, corpus);
  std::cout << "wrote " << o.samples << " samples to " << o.out << "\n";
  return kOk;
}

// ------------------------------------------------------------- register

int run_register(const std::vector<std::string>& clouds, PreprocessOptions pre, const MethodOptions& mo,
                 const std::string& out_path, const std::string& summary_path, bool timings) {
  if (clouds.size() < 2) throw Error(ErrorKind::Config, "register needs at least two point sets");
  MethodConfig method = mo.build("register");
  pre.seed = mo.seed;
  const PreprocessConfig pc = pre.build();

  std::vector<PreparedView> prepared;
  StageTimings t;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    auto t0 = std::chrono::steady_clock::now();
    const PointCloud raw = load_point_set(clouds[i]);
    t.load += seconds_since(t0);
    PreprocessConfig p = pc;
    p.seed = mix_seed(pc.seed, i);
    prepared.push_back(prepare_view(raw, p));
    t.downsample += prepared.back().downsample_seconds;
    t.descriptor += prepared.back().descriptor_seconds;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const RegistrationResult r = register_views(make_views(prepared, method), method.engine);
  t.registration = seconds_since(t0);

  // Every view expressed in the frame of the first one.
  std::vector<RigidTransform> to_first;
  for (std::size_t i = 0; i < clouds.size(); ++i) to_first.push_back(relative_transform(r, 0, i));
  if (out_path.empty() || out_path == "-") {
    std::cout << format_transforms(to_first);
  } else {
    write_transforms(out_path, to_first);
  }

  if (!summary_path.empty()) {
    json j;
    j["format"] = "rllreg-register";
    j["version"] = 1;
    j["inputs"] = clouds;
    json counts = json::array();
    for (const auto& p : prepared) counts.push_back(p.points.cols());
    j["points_per_view"] = counts;
    j["method"] = mo.describe(method);
    j["voxel"] = pc.voxel;
    j["max_points"] = pc.max_points;
    j["iterations_run"] = r.iterations_run;
    j["degenerate_updates"] = r.degenerate_updates;
    j["uniform_fallback_rows"] = r.uniform_fallback_rows;
    json rel = json::array();
    for (const auto& T : to_first) {
      const Eigen::Matrix4d m = T.matrix();
      json rows = json::array();
      for (int a = 0; a < 4; ++a) rows.push_back({m(a, 0), m(a, 1), m(a, 2), m(a, 3)});
      rel.push_back(rows);
    }
    j["transforms_to_view0"] = rel;
    if (timings) {
      j["timings"] = {{"load_s", t.load},
                      {"downsample_s", t.downsample},
                      {"descriptor_s", t.descriptor},
                      {"register_s", t.registration}};
    }
    write_json(summary_path, j);
  }
  return kOk;
}

// ---------------------------------------------------------------- train

int run_train(const std::string& corpus_dir, const std::string& out_dir, const TrainOptions& o,
              const std::string& voxel, int neighbors) {
  const TrainingSetup setup = o.build(voxel, neighbors);
  const HeadUsage usage{!o.no_features, o.attention};
  if (!usage.features && !usage.attention) {
    throw Error(ErrorKind::Config, "--no-features without --attention leaves nothing to train");
  }
  const Corpus corpus = read_corpus(corpus_dir);
  const std::vector<TrainingSample> base = prepare_training_set(corpus, setup.preprocess);
  fs::create_directories(out_dir);
  const std::uint64_t hash = setup.hash(usage);

  std::vector<EpochReport> history;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train_head(base, setup, usage, "train",
                                   [&](const std::string&, const EpochReport& e, const FeatureHeadParams& p) {
                                     history.push_back(e);
                                     char name[48];
                                     std::snprintf(name, sizeof name, "epoch_%03d.ckpt", e.epoch + 1);
                                     write_checkpoint((fs::path(out_dir) / name).string(), p, hash);
                                     write_loss_csv((fs::path(out_dir) / "loss_history.csv").string(), history);
                                     std::fprintf(stderr, "epoch %d/%d  loss %.6f  lr %.6g  %.0fs\n", e.epoch + 1,
                                                  setup.trainer.epochs, e.mean_loss, e.learning_rate,
                                                  seconds_since(t0));
                                   });
  write_checkpoint((fs::path(out_dir) / "final.ckpt").string(), r.params, hash);
  write_loss_csv((fs::path(out_dir) / "loss_history.csv").string(), r.history);
  std::cout << "trained " << r.history.size() << " epochs; final checkpoint "
            << (fs::path(out_dir) / "final.ckpt").string() << "\n";
  return kOk;
}

// ----------------------------------------------------------------- eval

int run_eval(const std::string& corpus_dir, PreprocessOptions pre, const MethodOptions& mo,
             EvalThresholds th, std::optional<double> trans_thresh, const std::string& name,
             const std::string& out_path, const std::string& recall_path, int jobs, bool timings) {
  if (trans_thresh) {
    th.translation = *trans_thresh;
  } else if (pre.voxel == "lidar") {
    th.translation = 0.3;
  }
  const MethodConfig method = mo.build(name);
  pre.seed = mo.seed;
  const PreprocessConfig pc = pre.build();
  const Corpus corpus = read_corpus(corpus_dir);
  const EvalReport report = evaluate(to_eval_samples(corpus), method, pc, th, jobs);
  json j = to_json(report, timings);
  j["config"] = mo.describe(method);
  j["config"]["voxel"] = pc.voxel;
  j["config"]["max_points"] = pc.max_points;
  if (out_path.empty() || out_path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json(out_path, j);
    std::printf("%s: success %.2f%% (%zu/%zu pairs)\n", name.c_str(), 100.0 * report.success_rate,
                report.successes, report.pairs.size());
  }
  if (!recall_path.empty()) write_text(recall_path, recall_csv(report.recall));
  return kOk;
}

// --------------------------------------------------------------- ablate

int run_ablate(const std::string& train_dir, const std::string& test_dir, const std::string& out_dir,
               const TrainOptions& to, PreprocessOptions pre, const MethodOptions& mo, EvalThresholds th,
               std::vector<std::string> names, int jobs, bool timings, bool resume) {
  AblationConfig cfg;
  cfg.training = to.build(pre.voxel, pre.neighborhood_k);
  pre.seed = mo.seed;
  cfg.eval_preprocess = pre.build();
  cfg.eval_engine.num_components = mo.components;
  cfg.eval_engine.num_iterations = mo.iterations;
  cfg.eval_engine.feature_scale = mo.feature_scale;
  cfg.eval_engine.rng_seed = mo.seed;
  cfg.training.engine.feature_scale = mo.feature_scale;
  cfg.thresholds = th;
  cfg.jobs = jobs;
  cfg.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();
  cfg.reuse_checkpoints = resume;
  cfg.store_timings = timings;
  if (!names.empty()) {
    std::vector<AblationVariant> picked;
    for (const auto& n : names) {
      bool found = false;
      for (const auto& v : default_variants()) {
        if (v.name == n || variant_slug(v) == n) {
          picked.push_back(v);
          found = true;
          break;
        }
      }
      if (!found) throw Error(ErrorKind::Config, "unknown ablation variant '" + n + "'");
    }
    cfg.variants = picked;
  }
  const Corpus train_corpus = read_corpus(train_dir);
  const Corpus test_corpus = read_corpus(test_dir);
  fs::create_directories(out_dir);
  const auto rows = run_ablation(
      train_corpus, test_corpus, cfg, [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); },
      [](const std::string& run, const EpochReport& e, const FeatureHeadParams&) {
        std::fprintf(stderr, "  %s: epoch %d loss %.6f\n", run.c_str(), e.epoch + 1, e.mean_loss);
      });
  const std::string table = format_ablation_table(rows);
  write_text((fs::path(out_dir) / "ablation.txt").string(), table);
  write_json((fs::path(out_dir) / "ablation.json").string(), ablation_json(rows, timings));
  for (const auto& r : rows) {
    write_json((fs::path(out_dir) / (variant_slug(r.variant) + ".json")).string(), to_json(r.report, timings));
    write_text((fs::path(out_dir) / (variant_slug(r.variant) + "_recall.csv")).string(), recall_csv(r.report.recall));
    if (!r.history.empty()) {
      write_loss_csv((fs::path(out_dir) / (variant_slug(r.variant) + "_loss.csv")).string(), r.history);
    }
  }
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view probabilistic point-set registration with learned features and weights"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rllreg 1.0.0");

  int jobs = default_jobs();
  bool no_timings = false;

  // synth
  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with ground-truth poses");
  synth->add_option("--kind", so.kind, "room | corridor | lidar-ring")->capture_default_str();
  synth->add_option("--samples", so.samples)->capture_default_str();
  synth->add_option("--views", so.views, "Views per sample")->capture_default_str();
  synth->add_option("--objects", so.objects)->capture_default_str();
  synth->add_option("--spacing", so.spacing, "Surface sampling step")->capture_default_str();
  synth->add_option("--noise", so.noise, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--overlap", so.overlap, "Pairwise overlap target in (0, 1]")->capture_default_str();
  synth->add_option("--view-radius", so.view_radius)->capture_default_str();
  synth->add_option("--max-angle", so.max_angle_deg, "Per-view perturbation angle, degrees")->capture_default_str();
  synth->add_option("--max-translation", so.max_translation)->capture_default_str();
  synth->add_flag("--keep-reference", so.keep_reference, "Leave view 0 at the reference pose");
  synth->add_option("--voxel", so.voxel, "Storage voxel and overlap radius (default by kind)");
  synth->add_flag("--raw", so.raw, "Store views without downsampling");
  synth->add_flag("--with-estimates", so.with_estimates, "Also store the true poses as estimates");
  synth->add_option("--seed", so.seed)->capture_default_str();
  synth->add_option("-o,--out", so.out, "Output corpus directory")->required();

  // register
  std::vector<std::string> clouds;
  PreprocessOptions reg_pre;
  MethodOptions reg_m;
  std::string reg_out, reg_summary;
  auto* reg = app.add_subcommand("register", "Register two or more point sets (PLY ASCII or XYZ)");
  reg->add_option("clouds", clouds, "Input point sets")->required();
  reg_pre.add(reg, 1000);
  reg_m.add(reg);
  reg->add_option("-o,--out", reg_out, "Transforms mapping each view into view 0 ('-' = stdout)");
  reg->add_option("--summary", reg_summary, "JSON summary path");
  reg->add_flag("--no-timings", no_timings, "Leave wall-clock fields out of JSON");

  // train
  std::string tr_corpus, tr_out;
  TrainOptions tr_o;
  std::string tr_voxel = "indoor";
  int tr_neighbors = kDefaultNeighborhood;
  auto* trn = app.add_subcommand("train", "Train the feature/attention head with the registration loss");
  trn->add_option("--corpus", tr_corpus, "Training corpus directory")->required();
  trn->add_option("-o,--out", tr_out, "Output directory for checkpoints and loss history")->required();
  tr_o.pre.max_points = 150;
  tr_o.add(trn, true);
  trn->add_option("--voxel", tr_voxel, "'indoor', 'lidar' or a number")->capture_default_str();
  trn->add_option("--neighbors", tr_neighbors)->capture_default_str();

  // eval
  std::string ev_corpus, ev_out, ev_recall, ev_name = "method";
  PreprocessOptions ev_pre;
  MethodOptions ev_m;
  EvalThresholds ev_th;
  std::optional<double> ev_trans;
  auto* ev = app.add_subcommand("eval", "Score a method (or stored estimates) on a corpus");
  ev->add_option("--corpus", ev_corpus, "Corpus directory")->required();
  ev_pre.add(ev, 1000);
  ev_m.add(ev);
  ev->add_option("--name", ev_name, "Method name in the report")->capture_default_str();
  ev->add_option("--rot-thresh", ev_th.rotation_deg, "Success threshold, degrees")->capture_default_str();
  ev->add_option("--trans-thresh", ev_trans, "Success threshold (default 0.1, 0.3 with --voxel lidar)");
  ev->add_option("-o,--out", ev_out, "Report JSON ('-' = stdout)");
  ev->add_option("--recall", ev_recall, "Recall-curve CSV");
  ev->add_option("-j,--jobs", jobs, "Worker threads (default $RLLREG_JOBS or 1)")->capture_default_str();
  ev->add_flag("--no-timings", no_timings, "Leave wall-clock fields out of JSON");

  // ablate
  std::string ab_train, ab_test, ab_out;
  std::vector<std::string> ab_variants;
  TrainOptions ab_to;
  PreprocessOptions ab_pre;
  MethodOptions ab_m;
  EvalThresholds ab_th;
  auto* ab = app.add_subcommand("ablate", "Train and score the method-variant grid");
  ab->add_option("--train-corpus", ab_train)->required();
  ab->add_option("--test-corpus", ab_test)->required();
  ab->add_option("-o,--out", ab_out, "Output directory")->required();
  ab->add_option("--variants", ab_variants, "Subset of variants (names or slugs, comma separated)")->delimiter(',');
  ab_to.pre.max_points = 150;
  ab_to.add(ab, false);
  ab_pre.add(ab, 1000);
  ab->add_option("-K,--components", ab_m.components, "Mixture components at evaluation")->capture_default_str();
  ab->add_option("--iterations", ab_m.iterations, "EM iterations at evaluation")->capture_default_str();
  ab->add_option("--feature-scale", ab_m.feature_scale, "vMF scale s")->capture_default_str();
  ab->add_option("--seed", ab_m.seed, "Evaluation seed")->capture_default_str();
  ab->add_option("--rot-thresh", ab_th.rotation_deg)->capture_default_str();
  ab->add_option("--trans-thresh", ab_th.translation)->capture_default_str();
  ab->add_option("-j,--jobs", jobs)->capture_default_str();
  ab->add_flag("--no-timings", no_timings, "Leave wall-clock fields out of JSON");
  bool ab_resume = false;
  ab->add_flag("--resume", ab_resume, "Reuse heads in <out>/checkpoints trained with the same settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (jobs < 1) throw Error(ErrorKind::Config, "--jobs must be positive");
    if (*synth) return run_synth(so);
    if (*reg) return run_register(clouds, reg_pre, reg_m, reg_out, reg_summary, !no_timings);
    if (*trn) return run_train(tr_corpus, tr_out, tr_o, tr_voxel, tr_neighbors);
    if (*ev) {
      return run_eval(ev_corpus, ev_pre, ev_m, ev_th, ev_trans, ev_name, ev_out, ev_recall, jobs, !no_timings);
    }
    if (*ab) return run_ablate(ab_train, ab_test, ab_out, ab_to, ab_pre, ab_m, ab_th, ab_variants, jobs, !no_timings, ab_resume);
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), kIo);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kInternal);
  }
  return kInternal;
}
