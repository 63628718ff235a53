#include <doctest.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "rllreg/eval.hpp"

using namespace rllreg;

namespace {

std::vector<EvalSample> synthetic_samples(int count, int views, std::uint64_t seed) {
  std::vector<EvalSample> out;
  for (int s = 0; s < count; ++s) {
    SceneSpec spec;
    spec.kind = SceneKind::Room;
    spec.rng_seed = mix_seed(seed, static_cast<std::uint64_t>(s));
    spec.views.num_views = views;
    spec.views.overlap_target = 0.5;
    spec.views.noise_sigma = 0.005;
    spec.views.max_angle = 0.2;
    spec.views.max_translation = 0.3;
    const Scene sc = generate_scene(spec);
    EvalSample e;
    e.name = "s" + std::to_string(s);
    e.views = sc.views.views;
    e.ground_truth = sc.views.ground_truth;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("exact estimates succeed everywhere") {
  auto samples = synthetic_samples(3, 4, 1);
  for (auto& s : samples) s.estimates = s.ground_truth.poses;
  const EvalReport r = evaluate(samples, MethodConfig{}, PreprocessConfig{}, EvalThresholds{});
  CHECK(r.pairs.size() == 3 * 6);
  CHECK(r.successes == r.pairs.size());
  CHECK(r.success_rate == 1.0);
  CHECK(r.mean_success_rotation_deg < 1e-5);
  CHECK(r.mean_success_translation < 1e-12);
}

TEST_CASE("zero thresholds fail every noisy registration") {
  const auto samples = synthetic_samples(2, 2, 2);
  MethodConfig m;
  m.engine.num_components = 20;
  m.engine.num_iterations = 10;
  PreprocessConfig pre;
  pre.max_points = 200;
  const EvalReport r = evaluate(samples, m, pre, EvalThresholds{0.0, 0.0});
  CHECK(r.pairs.size() == 2);
  CHECK(r.successes == 0);
  CHECK(r.success_rate == 0.0);
  CHECK(r.mean_success_rotation_deg == 0.0);
  CHECK(r.timings.registration > 0.0);
  CHECK(r.timings.downsample > 0.0);
  CHECK(r.timings.descriptor > 0.0);
}

TEST_CASE("score_pairs counts all view pairs and multi-view samples give six") {
  std::mt19937_64 rng(3);
  GroundTruth gt;
  std::vector<RigidTransform> est;
  for (int i = 0; i < 4; ++i) {
    gt.poses.push_back(testing::random_transform(rng));
    est.push_back(compose(gt.poses.back(), sample_perturbation(0.05, 0.05, rng)));
  }
  const auto pairs = score_pairs("q", est, gt, EvalThresholds{});
  REQUIRE(pairs.size() == 6);
  std::set<std::pair<int, int>> seen;
  for (const auto& p : pairs) {
    CHECK(p.i < p.k);
    seen.insert({p.i, p.k});
    const RigidTransform e = compose(inverse(est[p.i]), est[p.k]);
    CHECK(p.rotation_error_deg == doctest::Approx(testing::deg(rotation_error(e, gt.relative(p.i, p.k)))));
    CHECK(p.translation_error == doctest::Approx(translation_error(e, gt.relative(p.i, p.k))));
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("summary recount, recall curves and success rate") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> rot(0.0, 10.0), tr(0.0, 0.3);
  EvalReport r;
  r.thresholds = EvalThresholds{};
  for (int i = 0; i < 500; ++i) r.pairs.push_back({"x", 0, 1, rot(rng), tr(rng), false});
  r.pairs.push_back({"x", 0, 1, 4.0, 0.1, false});  // on the boundary: not a success
  summarize(r);

  std::size_t recount = 0;
  double rs = 0.0, ts = 0.0;
  for (const auto& p : r.pairs) {
    const bool ok = p.rotation_error_deg < 4.0 && p.translation_error < 0.1;  // strictly below
    CHECK(p.success == ok);
    if (ok) ++recount, rs += p.rotation_error_deg, ts += p.translation_error;
  }
  CHECK(r.successes == recount);
  CHECK(r.success_rate == static_cast<double>(recount) / static_cast<double>(r.pairs.size()));
  CHECK(r.mean_success_rotation_deg == doctest::Approx(rs / recount));
  CHECK(r.mean_success_translation == doctest::Approx(ts / recount));

  for (const auto* curve : {&r.recall.rotation, &r.recall.translation, &r.recall.joint}) {
    REQUIRE(curve->size() > 2);
    for (std::size_t i = 1; i < curve->size(); ++i) {
      CHECK((*curve)[i].threshold > (*curve)[i - 1].threshold);
      CHECK((*curve)[i].recall >= (*curve)[i - 1].recall);
    }
  }
  bool hit = false;
  for (const auto& pt : r.recall.joint) {
    if (pt.threshold == 1.0) {
      hit = true;
      CHECK(pt.recall == r.success_rate);
    }
  }
  CHECK(hit);
}

TEST_CASE("JSON round trip and CSV") {
  auto samples = synthetic_samples(2, 2, 5);
  samples[0].estimates = samples[0].ground_truth.poses;
  samples[1].estimates = std::vector<RigidTransform>{RigidTransform::identity(), RigidTransform::identity()};
  EvalReport r = evaluate(samples, MethodConfig{}, PreprocessConfig{}, EvalThresholds{});
  r.method = "probe";
  const nlohmann::json j = to_json(r);
  const EvalReport back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.method == "probe");
  CHECK(back.pairs.size() == r.pairs.size());
  CHECK_FALSE(to_json(r, false).contains("timings"));

  const std::string csv = recall_csv(r.recall);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "curve,threshold,recall");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == static_cast<int>(r.recall.rotation.size() + r.recall.translation.size() + r.recall.joint.size()));
}

TEST_CASE("parallel evaluation matches serial evaluation") {
  const auto samples = synthetic_samples(3, 2, 6);
  MethodConfig m;
  m.engine.num_components = 15;
  m.engine.num_iterations = 8;
  PreprocessConfig pre;
  pre.max_points = 150;
  const EvalReport a = evaluate(samples, m, pre, EvalThresholds{}, 1);
  const EvalReport b = evaluate(samples, m, pre, EvalThresholds{}, 3);
  CHECK(to_json(a, false).dump() == to_json(b, false).dump());
}

TEST_CASE("default_jobs reads the environment") {
  ::setenv("RLLREG_JOBS", "3", 1);
  CHECK(default_jobs() == 3);
  ::setenv("RLLREG_JOBS", "zero", 1);
  CHECK(default_jobs() == 1);
  ::setenv("RLLREG_JOBS", "-2", 1);
  CHECK(default_jobs() == 1);
  ::unsetenv("RLLREG_JOBS");
  CHECK(default_jobs() == 1);
}
