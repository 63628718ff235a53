#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "rllreg/error.hpp"
#include "rllreg/pipeline.hpp"
#include "rllreg/rll.hpp"

using namespace rllreg;

namespace {

// Two overlapping room crops, the second moved by a known motion.
TrainingSample small_sample(std::uint64_t seed, Eigen::Index n = 120) {
  std::mt19937_64 rng(seed);
  const PointCloud a = testing::room_crop(seed, n);
  const RigidTransform g = sample_perturbation(0.2, 0.15, rng);
  const PointCloud b = testing::transformed(g, a);
  PreprocessConfig pre;
  pre.voxel = 0.01;  // already evenly spread
  pre.neighborhood_k = 16;
  GroundTruth gt;
  gt.poses = {RigidTransform::identity(), inverse(g)};
  return make_training_sample({prepare_view(a, pre), prepare_view(b, pre)}, gt, seed);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rllreg_test_" + name)).string();
}

}  // namespace

TEST_CASE("Geman-McClure penalty") {
  CHECK(geman_mcclure(0.0) == 0.0);
  CHECK(geman_mcclure(1.0) == 0.5);
  CHECK(geman_mcclure(1e3) > 0.999999);
  CHECK(geman_mcclure(1e3) < 1.0);
  double prev = 0.0;
  for (double r = 0.01; r < 100.0; r *= 1.3) {
    const double v = geman_mcclure(r);
    CHECK(v > prev);
    CHECK(v <= r * r);
    CHECK(penalty(r, LossForm::L2) == r * r);
    CHECK(penalty(r, LossForm::GemanMcClure) == v);
    prev = v;
  }
}

TEST_CASE("iteration weights follow 1/(40 - n)") {
  for (int n = 1; n <= 39; ++n) CHECK(iteration_weight(n, 40) == 1.0 / (40 - n));
  CHECK(iteration_weight(23, 40) == 1.0 / 17.0);
  CHECK(iteration_weight(23, 40) == doctest::Approx(0.0588).epsilon(1e-3));
  CHECK(iteration_weight(1, 40) == 1.0 / 39.0);
  CHECK(iteration_weight(23, 40) / iteration_weight(1, 40) == doctest::Approx(39.0 / 17.0));

  LossConfig bad;
  bad.n_iter_train = 40;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = LossConfig{};
  bad.scale_c = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("sample_loss: zero on the ground truth and a hand-computed case") {
  std::mt19937_64 rng(1);
  GroundTruth gt;
  for (int i = 0; i < 3; ++i) gt.poses.push_back(testing::random_transform(rng));
  const std::vector<PointCloud> views{testing::random_cloud(rng, 10), testing::random_cloud(rng, 7),
                                      testing::random_cloud(rng, 12)};
  LossConfig cfg;
  cfg.n_iter_train = 5;
  // Absolute poses may differ from the ground truth by a common motion.
  const RigidTransform common = testing::random_transform(rng);
  std::vector<std::vector<RigidTransform>> perfect(5);
  for (auto& step : perfect)
    for (const auto& p : gt.poses) step.push_back(compose(common, p));
  CHECK(sample_loss(perfect, gt, views, cfg) < 1e-20);

  // Two points in view 0, one in view 1, one pair, one iteration, c = 1.
  PointCloud v0(3, 2), v1(3, 1);
  v0 << 1, 0, 0, 0, 0, 2;
  v1 << 0, 3, 0;
  GroundTruth id;
  id.poses = {RigidTransform::identity(), RigidTransform::identity()};
  const auto quarter = RigidTransform::from_axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi / 2);
  const std::vector<std::vector<RigidTransform>> one{{RigidTransform::identity(), quarter}};
  LossConfig hand;
  hand.n_iter_train = 1;
  hand.scale_c = 1.0;
  hand.pairs = PairConvention::FirstIndex;
  // (1,0,0) moves by sqrt(2): rho = 2/3; (0,0,2) is on the axis: rho = 0.
  const double first = (2.0 / 3.0 + 0.0) / 2.0 / 39.0;
  CHECK(sample_loss(one, id, {v0, v1}, hand) == doctest::Approx(first).epsilon(1e-14));
  hand.pairs = PairConvention::Symmetric;
  // (0,3,0) moves by 3 sqrt(2): rho = 18/19.
  const double sym = 0.5 * ((2.0 / 3.0) / 2.0 + 18.0 / 19.0) / 39.0;
  CHECK(sample_loss(one, id, {v0, v1}, hand) == doctest::Approx(sym).epsilon(1e-14));
  hand.form = LossForm::L2;
  CHECK(sample_loss(one, id, {v0, v1}, hand) == doctest::Approx(0.5 * (2.0 / 2.0 + 18.0) / 39.0).epsilon(1e-14));

  CHECK_THROWS_AS(sample_loss(one, id, {v0, v1}, cfg), Error);  // 1 iteration, 5 expected
}

TEST_CASE("sample_loss: relabeling invariance and the L2 upper bound") {
  std::mt19937_64 rng(2);
  GroundTruth gt;
  std::vector<PointCloud> views;
  for (int i = 0; i < 4; ++i) {
    gt.poses.push_back(testing::random_transform(rng));
    views.push_back(testing::random_cloud(rng, 15 + 3 * i));
  }
  LossConfig cfg;
  cfg.n_iter_train = 3;
  std::vector<std::vector<RigidTransform>> traj(3);
  for (auto& step : traj)
    for (int i = 0; i < 4; ++i) step.push_back(testing::random_transform(rng, 0.3));
  const double base = sample_loss(traj, gt, views, cfg);
  CHECK(base > 0.0);

  const std::vector<int> perm{2, 0, 3, 1};
  GroundTruth pg;
  std::vector<PointCloud> pv;
  std::vector<std::vector<RigidTransform>> pt(3);
  for (int i : perm) {
    pg.poses.push_back(gt.poses[i]);
    pv.push_back(views[i]);
    for (int n = 0; n < 3; ++n) pt[n].push_back(traj[n][i]);
  }
  CHECK(sample_loss(pt, pg, pv, cfg) == doctest::Approx(base).epsilon(1e-12));

  LossConfig l2 = cfg;
  l2.form = LossForm::L2;
  CHECK(sample_loss(traj, gt, views, l2) >= base);
}

TEST_CASE("finite differences: analytic surrogate, dead and masked coordinates") {
  std::mt19937_64 rng(3);
  const int n = 12;
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
  const Eigen::MatrixXd q = a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd b = Eigen::VectorXd::Random(n);
  auto f = [&](const Eigen::VectorXd& x) {
    // Coordinate n-1 is dead.
    Eigen::VectorXd y = x;
    y[n - 1] = 0.0;
    return 0.5 * y.dot(q * y) + b.dot(y);
  };
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd x = 3.0 * Eigen::VectorXd::Random(n);
    Eigen::VectorXd y = x;
    y[n - 1] = 0.0;
    Eigen::VectorXd analytic = q * y + b;
    analytic[n - 1] = 0.0;
    const auto g = finite_difference_gradient(f, x, 1e-3);
    CHECK(g.value == f(x));
    CHECK(g.flagged == 0);
    CHECK((g.gradient - analytic).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, analytic.cwiseAbs().maxCoeff()));
    CHECK(g.gradient[n - 1] == 0.0);
  }
  std::vector<bool> mask(n, true);
  mask[0] = false;
  const auto gm = finite_difference_gradient(f, Eigen::VectorXd::Ones(n), 1e-3, mask);
  CHECK(gm.gradient[0] == 0.0);
  CHECK(gm.gradient[1] != 0.0);

  // Non-finite probes are zeroed and counted.
  auto g2 = [](const Eigen::VectorXd& x) {
    return x[1] > 0.5005 ? std::numeric_limits<double>::quiet_NaN() : x[0] * x[0] + x[1];
  };
  const auto gn = finite_difference_gradient(g2, Eigen::Vector2d(1.0, 0.5), 1e-3);
  CHECK(gn.flagged == 1);
  CHECK(gn.gradient[1] == 0.0);
  CHECK(gn.gradient[0] == doctest::Approx(2.0).epsilon(1e-9));

  // Zero loss at every probe gives an exactly zero gradient.
  const auto z = finite_difference_gradient([](const Eigen::VectorXd&) { return 0.0; }, Eigen::VectorXd::Ones(5), 1e-3);
  CHECK(z.gradient.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("estimate_gradient is exactly zero when every probe lands on the ground truth") {
  // The loss path sample_loss(ground truth) is zero for any parameters.
  std::mt19937_64 rng(4);
  GroundTruth gt;
  gt.poses = {testing::random_transform(rng), testing::random_transform(rng)};
  const std::vector<PointCloud> views{testing::random_cloud(rng, 8), testing::random_cloud(rng, 8)};
  LossConfig cfg;
  cfg.n_iter_train = 2;
  const std::vector<std::vector<RigidTransform>> traj(2, gt.poses);
  const auto g = finite_difference_gradient(
      [&](const Eigen::VectorXd&) { return sample_loss(traj, gt, views, cfg); },
      FeatureHeadParams::initial(4, 10, 1).flatten(), 1e-3);
  CHECK(g.gradient.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("registration-loss gradients pass the step-halving check") {
  const TrainingSample sample = small_sample(5);
  EngineConfig engine;
  engine.num_components = 15;
  engine.num_iterations = 8;
  LossConfig loss;
  loss.n_iter_train = 8;
  loss.scale_c = 0.1;
  std::mt19937_64 rng(6);
  FeatureHeadParams params = FeatureHeadParams::initial(4, kRawDescriptorDim, 3);
  params.attention_vector = 0.3 * Eigen::VectorXd::Random(kRawDescriptorDim);
  const HeadUsage usage{true, true};
  const auto h = estimate_gradient(sample, params, usage, engine, loss, 1e-3);
  const auto h2 = estimate_gradient(sample, params, usage, engine, loss, 5e-4);
  CHECK(std::isfinite(h.value));
  CHECK(h.value == h2.value);
  CHECK(h.flagged == 0);
  CHECK(h2.gradient.norm() > 0.0);
  const double rel = (h.gradient - h2.gradient).norm() / h2.gradient.norm();
  MESSAGE("step-halving relative difference " << rel);
  CHECK(rel < 1e-2);
  // Bit-identical on repetition.
  const auto again = estimate_gradient(sample, params, usage, engine, loss, 1e-3);
  CHECK(std::memcmp(again.gradient.data(), h.gradient.data(), sizeof(double) * h.gradient.size()) == 0);
}

TEST_CASE("trainable mask follows head usage") {
  const FeatureHeadParams p = FeatureHeadParams::initial(16, 10, 1);
  const Eigen::Index off = p.attention_offset();
  const auto feat = trainable_mask(p, {true, false});
  const auto att = trainable_mask(p, {false, true});
  const auto both = trainable_mask(p, {true, true});
  REQUIRE(feat.size() == static_cast<std::size_t>(p.parameter_count()));
  for (Eigen::Index i = 0; i < p.parameter_count(); ++i) {
    const bool in_att = i >= off;
    CHECK(feat[static_cast<std::size_t>(i)] == !in_att);
    CHECK(att[static_cast<std::size_t>(i)] == in_att);
    CHECK(both[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("Adam matches a scalar reference") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 9;
  Eigen::VectorXd x = Eigen::VectorXd::Random(n);
  std::vector<double> ref(x.data(), x.data() + n), m(n, 0.0), v(n, 0.0);
  AdamState state;
  for (int t = 1; t <= 25; ++t) {
    Eigen::VectorXd grad(n);
    for (int i = 0; i < n; ++i) grad[i] = g(rng);
    adam_step(x, grad, state, 0.004);
    for (int i = 0; i < n; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.004 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(ref[i]).epsilon(1e-14));
  }
  // The first step moves every coordinate with a nonzero gradient by ~lr.
  Eigen::VectorXd y = Eigen::VectorXd::Zero(3);
  AdamState fresh;
  adam_step(y, Eigen::Vector3d(5.0, -0.01, 0.0), fresh, 0.1);
  CHECK(y[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(y[2] == 0.0);
}

TEST_CASE("learning-rate schedule") {
  TrainerConfig t;
  CHECK(t.rate_at(0) == 0.004);
  CHECK(t.rate_at(39) == 0.004);
  CHECK(t.rate_at(40) == doctest::Approx(0.0008).epsilon(1e-14));
  CHECK(t.rate_at(80) == doctest::Approx(0.00016).epsilon(1e-14));
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("training: zero rate, determinism, checkpoints") {
  std::vector<TrainingSample> base{small_sample(11, 80), small_sample(12, 80)};
  const SampleProvider provider = augmented_provider(base, 3, 0.2, 0.2, 5);
  TrainerConfig trainer;
  trainer.epochs = 2;
  trainer.samples_per_epoch = 3;
  trainer.batch_size = 2;
  EngineConfig engine;
  engine.num_components = 8;
  engine.num_iterations = 4;
  LossConfig loss;
  loss.n_iter_train = 4;
  const FeatureHeadParams init = FeatureHeadParams::initial(3, kRawDescriptorDim, 2);

  TrainerConfig frozen = trainer;
  frozen.learning_rate = 0.0;
  const auto z = train(provider, init, {true, true}, frozen, engine, loss);
  CHECK((z.params.flatten() - init.flatten()).norm() == 0.0);
  CHECK(z.history.size() == 2);

  int callbacks = 0;
  const auto a = train(provider, init, {true, true}, trainer, engine, loss,
                       [&](const EpochReport& r, const FeatureHeadParams&) { CHECK(r.epoch == callbacks++); });
  const auto b = train(provider, init, {true, true}, trainer, engine, loss);
  CHECK(callbacks == 2);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(std::memcmp(&a.history[e].mean_loss, &b.history[e].mean_loss, sizeof(double)) == 0);
    CHECK(std::isfinite(a.history[e].mean_loss));
  }
  CHECK((a.params.flatten() - init.flatten()).norm() > 0.0);
  CHECK((a.params.flatten() - b.params.flatten()).norm() == 0.0);

  // Only the active head moves.
  const auto feat_only = train(provider, init, {true, false}, trainer, engine, loss);
  const Eigen::Index off = init.attention_offset();
  CHECK((feat_only.params.flatten().tail(init.parameter_count() - off) - init.flatten().tail(init.parameter_count() - off)).norm() == 0.0);

  const std::string path = temp_path("head.ckpt");
  write_checkpoint(path, a.params, 0xfeedbeefcafe1234ULL);
  const Checkpoint c = read_checkpoint(path);
  CHECK(c.config_hash == 0xfeedbeefcafe1234ULL);
  CHECK(c.params.dim() == 3);
  CHECK(c.params.raw_dim() == kRawDescriptorDim);
  const Eigen::VectorXd fa = a.params.flatten(), fc = c.params.flatten();
  CHECK(std::memcmp(fa.data(), fc.data(), sizeof(double) * fa.size()) == 0);
  std::filesystem::remove(path);

  const std::string junk = temp_path("junk.ckpt");
  std::ofstream(junk) << "not a checkpoint\n";
  CHECK_THROWS_AS(read_checkpoint(junk), Error);
  std::filesystem::remove(junk);
  CHECK_THROWS_AS(read_checkpoint(temp_path("missing.ckpt")), Error);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}
