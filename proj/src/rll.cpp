#include "rllreg/rll.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rllreg/error.hpp"

namespace rllreg {

void LossConfig::validate() const {
  if (!(scale_c > 0.0)) throw Error(ErrorKind::Config, "loss scale c must be positive");
  if (n_iter_train < 1) throw Error(ErrorKind::Config, "n_iter_train must be >= 1");
  if (iteration_weight_offset <= n_iter_train) {
    throw Error(ErrorKind::Config, "iteration_weight_offset must exceed n_iter_train");
  }
}

double geman_mcclure(double r) {
  const double r2 = r * r;
  return r2 / (1.0 + r2);
}

double penalty(double r, LossForm form) {
  return form == LossForm::GemanMcClure ? geman_mcclure(r) : r * r;
}

double iteration_weight(int n, int offset) { return 1.0 / static_cast<double>(offset - n); }

RigidTransform GroundTruth::relative(std::size_t i, std::size_t k) const {
  return compose(inverse(poses.at(i)), poses.at(k));
}

namespace {

double pair_term(const RigidTransform& estimate, const RigidTransform& truth,
                 const PointCloud& points, const LossConfig& config) {
  if (points.cols() == 0) return 0.0;
  const PointCloud diff = estimate.apply(points) - truth.apply(points);
  double s = 0.0;
  for (Eigen::Index j = 0; j < diff.cols(); ++j) {
    s += penalty(diff.col(j).norm() / config.scale_c, config.form);
  }
  return s / static_cast<double>(points.cols());
}

}  // namespace

double sample_loss(const std::vector<std::vector<RigidTransform>>& trajectory,
                   const GroundTruth& ground_truth, const std::vector<PointCloud>& views,
                   const LossConfig& config) {
  config.validate();
  if (static_cast<int>(trajectory.size()) != config.n_iter_train) {
    throw Error(ErrorKind::InvalidArgument,
                "sample_loss: trajectory has " + std::to_string(trajectory.size()) +
                    " iterations, expected " + std::to_string(config.n_iter_train));
  }
  if (ground_truth.poses.size() != views.size()) {
    throw Error(ErrorKind::InvalidArgument, "sample_loss: ground truth and views differ in length");
  }
  const std::size_t m = views.size();
  double total = 0.0;
  for (int n = 1; n <= config.n_iter_train; ++n) {
    const auto& step = trajectory[static_cast<std::size_t>(n - 1)];
    if (step.size() != m) throw Error(ErrorKind::InvalidArgument, "sample_loss: trajectory width");
    double at_n = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      for (std::size_t k = i + 1; k < m; ++k) {
        const RigidTransform est_ik = compose(inverse(step[i]), step[k]);
        const RigidTransform gt_ik = ground_truth.relative(i, k);
        if (config.pairs == PairConvention::FirstIndex) {
          at_n += pair_term(est_ik, gt_ik, views[i], config);
        } else {
          at_n += 0.5 * (pair_term(est_ik, gt_ik, views[i], config) +
                         pair_term(inverse(est_ik), inverse(gt_ik), views[k], config));
        }
      }
    }
    total += iteration_weight(n, config.iteration_weight_offset) * at_n;
  }
  return total;
}

std::vector<PointSetView> build_views(const TrainingSample& sample, const FeatureHeadParams& params,
                                      const HeadUsage& usage) {
  std::vector<PointSetView> views;
  views.reserve(sample.points.size());
  for (std::size_t i = 0; i < sample.points.size(); ++i) {
    PointSetView v = PointSetView::unweighted(sample.points[i], static_cast<int>(i));
    if (usage.features) v.features = apply_feature_head(sample.descriptors[i], params);
    if (usage.attention) v.weights = apply_attention_head(sample.descriptors[i], params);
    views.push_back(std::move(v));
  }
  return views;
}

double registration_loss(const TrainingSample& sample, const FeatureHeadParams& params,
                         const HeadUsage& usage, const EngineConfig& engine,
                         const LossConfig& loss) {
  EngineConfig cfg = engine;
  cfg.num_iterations = loss.n_iter_train;
  cfg.rng_seed = engine.rng_seed ^ sample.seed;
  cfg.record_trajectory = true;
  cfg.record_objective = false;
  cfg.use_features = usage.features;
  cfg.early_stop_angle = cfg.early_stop_translation = 0.0;
  const RegistrationResult r = register_views(build_views(sample, params, usage), cfg);
  return sample_loss(r.trajectory, sample.ground_truth, sample.points, loss);
}

GradientEstimate finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double fd_step,
                                            const std::vector<bool>& mask) {
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != x.size()) {
    throw Error(ErrorKind::InvalidArgument, "gradient mask has the wrong length");
  }
  GradientEstimate g;
  g.gradient = Eigen::VectorXd::Zero(x.size());
  g.value = f(x);
  Eigen::VectorXd probe = x;
  for (Eigen::Index p = 0; p < x.size(); ++p) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(p)]) continue;
    const double h = fd_step * std::max(std::abs(x[p]), 1.0);
    probe[p] = x[p] + h;
    const double up = f(probe);
    probe[p] = x[p] - h;
    const double down = f(probe);
    probe[p] = x[p];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      ++g.flagged;
      continue;
    }
    g.gradient[p] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<bool> trainable_mask(const FeatureHeadParams& params, const HeadUsage& usage) {
  std::vector<bool> mask(static_cast<std::size_t>(params.parameter_count()), false);
  const auto att = static_cast<std::size_t>(params.attention_offset());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    mask[p] = p < att ? usage.features : usage.attention;
  }
  return mask;
}

GradientEstimate estimate_gradient(const TrainingSample& sample, const FeatureHeadParams& params,
                                   const HeadUsage& usage, const EngineConfig& engine,
                                   const LossConfig& loss, double fd_step) {
  const Eigen::Index dim = params.dim(), raw = params.raw_dim();
  auto f = [&](const Eigen::VectorXd& flat) {
    try {
      return registration_loss(sample, FeatureHeadParams::unflatten(flat, dim, raw), usage, engine,
                               loss);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  return finite_difference_gradient(f, params.flatten(), fd_step, trainable_mask(params, usage));
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, AdamState& s,
               double learning_rate) {
  if (s.m.size() != params.size()) {
    s.m = Eigen::VectorXd::Zero(params.size());
    s.v = Eigen::VectorXd::Zero(params.size());
    s.step = 0;
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * gradient;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (Eigen::Index p = 0; p < params.size(); ++p) {
    params[p] -= learning_rate * (s.m[p] / c1) / (std::sqrt(s.v[p] / c2) + s.epsilon);
  }
}

void TrainerConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error(ErrorKind::Config, "learning_rate must be >= 0");
  if (batch_size < 1 || epochs < 1 || samples_per_epoch < 1) {
    throw Error(ErrorKind::Config, "batch_size, epochs and samples_per_epoch must be positive");
  }
  if (!(lr_decay > 0.0) || lr_decay_every < 1) throw Error(ErrorKind::Config, "invalid lr schedule");
  if (!(fd_step > 0.0)) throw Error(ErrorKind::Config, "fd_step must be positive");
}

double TrainerConfig::rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
}

TrainResult train(const SampleProvider& samples, const FeatureHeadParams& initial,
                  const HeadUsage& usage, const TrainerConfig& trainer,
                  const EngineConfig& engine, const LossConfig& loss,
                  const EpochCallback& on_epoch) {
  trainer.validate();
  loss.validate();
  initial.validate();
  const Eigen::Index dim = initial.dim(), raw = initial.raw_dim();

  TrainResult result;
  Eigen::VectorXd flat = initial.flatten();
  AdamState adam;
  for (int epoch = 0; epoch < trainer.epochs; ++epoch) {
    EpochReport report;
    report.epoch = epoch;
    report.learning_rate = trainer.rate_at(epoch);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int start = 0; start < trainer.samples_per_epoch; start += trainer.batch_size) {
      const int end = std::min(trainer.samples_per_epoch, start + trainer.batch_size);
      const FeatureHeadParams current = FeatureHeadParams::unflatten(flat, dim, raw);
      Eigen::VectorXd batch_grad = Eigen::VectorXd::Zero(flat.size());
      int good = 0;
      for (int s = start; s < end; ++s) {
        const TrainingSample sample = samples(epoch, s);
        const GradientEstimate g = estimate_gradient(sample, current, usage, engine, loss,
                                                     trainer.fd_step);
        result.flagged_probes += g.flagged;
        if (!std::isfinite(g.value)) continue;
        batch_grad += g.gradient;
        loss_sum += g.value;
        ++loss_count;
        ++good;
      }
      if (good == 0) {
        ++report.skipped_batches;
        continue;
      }
      batch_grad /= static_cast<double>(good);
      adam_step(flat, batch_grad, adam, report.learning_rate);
    }
    report.mean_loss = loss_count > 0 ? loss_sum / loss_count
                                      : std::numeric_limits<double>::quiet_NaN();
    result.skipped_batches += report.skipped_batches;
    result.history.push_back(report);
    if (on_epoch) on_epoch(report, FeatureHeadParams::unflatten(flat, dim, raw));
  }
  result.params = FeatureHeadParams::unflatten(flat, dim, raw);
  return result;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& token, const std::string& path, int line) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw ParseError(path, line, "bad number '" + token + "'");
  }
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const FeatureHeadParams& params,
                      std::uint64_t config_hash) {
  params.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
  out << "rllreg-head 1\n";
  out << "dim " << params.dim() << " raw_dim " << params.raw_dim() << " config_hash " << hash << "\n";
  out << "feature_matrix\n";
  for (Eigen::Index r = 0; r < params.dim(); ++r) {
    for (Eigen::Index c = 0; c < params.raw_dim(); ++c) {
      out << (c ? " " : "") << hexfloat(params.feature_matrix(r, c));
    }
    out << "\n";
  }
  out << "feature_bias\n";
  for (Eigen::Index r = 0; r < params.dim(); ++r) out << (r ? " " : "") << hexfloat(params.feature_bias[r]);
  out << "\nattention_vector\n";
  for (Eigen::Index c = 0; c < params.raw_dim(); ++c) {
    out << (c ? " " : "") << hexfloat(params.attention_vector[c]);
  }
  out << "\nattention_bias\n" << hexfloat(params.attention_bias) << "\n";
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path);
  int line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError(path, line_no + 1, "unexpected end of file");
    ++line_no;
    return line;
  };
  auto expect = [&](const std::string& word) {
    if (next_line() != word) throw ParseError(path, line_no, "expected '" + word + "'");
  };
  auto numbers = [&](Eigen::Index count) {
    std::istringstream ss(next_line());
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) v.push_back(parse_double(tok, path, line_no));
    if (static_cast<Eigen::Index>(v.size()) != count) {
      throw ParseError(path, line_no, "expected " + std::to_string(count) + " values");
    }
    return v;
  };

  expect("rllreg-head 1");
  std::istringstream header(next_line());
  std::string k1, k2, k3, hash;
  long dim = 0, raw = 0;
  if (!(header >> k1 >> dim >> k2 >> raw >> k3 >> hash) || k1 != "dim" || k2 != "raw_dim" ||
      k3 != "config_hash" || dim < 1 || raw < 1) {
    throw ParseError(path, line_no, "malformed header");
  }
  Checkpoint ck;
  ck.config_hash = std::stoull(hash, nullptr, 16);
  FeatureHeadParams& p = ck.params;
  p.feature_matrix.resize(dim, raw);
  expect("feature_matrix");
  for (long r = 0; r < dim; ++r) {
    const auto row = numbers(raw);
    for (long c = 0; c < raw; ++c) p.feature_matrix(r, c) = row[static_cast<std::size_t>(c)];
  }
  expect("feature_bias");
  p.feature_bias = Eigen::Map<const Eigen::VectorXd>(numbers(dim).data(), dim);
  expect("attention_vector");
  p.attention_vector = Eigen::Map<const Eigen::VectorXd>(numbers(raw).data(), raw);
  expect("attention_bias");
  p.attention_bias = numbers(1)[0];
  return ck;
}

}  // namespace rllreg
