#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "rllreg/engine.hpp"
#include "rllreg/io.hpp"

namespace fs = std::filesystem;
using namespace rllreg;

#ifndef RLLREG_CLI
#error "RLLREG_CLI must point at the rllreg executable"
#endif

namespace {

// Scratch directory for one test process, removed at exit.
struct WorkDir {
  fs::path path;
  WorkDir() : path(fs::temp_directory_path() / ("rllreg_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~WorkDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const fs::path& work() {
  static const WorkDir dir;
  return dir.path;
}

struct Run {
  int code = -1;
  std::string err;
};

// Runs the tool with stdout discarded unless redirected by the caller.
Run run(const std::string& args) {
  const fs::path err = work() / "stderr.txt";
  const std::string cmd = std::string(RLLREG_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Byte-compares every regular file below two directories.
void check_same_tree(const fs::path& a, const fs::path& b) {
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    REQUIRE(fs::exists(b / rel));
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
    ++files;
  }
  CHECK(files > 0);
}

std::string w(const std::string& name) { return (work() / name).string(); }

const std::string kTinyTrain =
    " --epochs 1 --samples-per-epoch 2 --batch-size 2 --train-components 8 --train-iterations 3"
    " --train-max-points 60 --feature-dim 4";

}  // namespace

TEST_CASE("synth writes a corpus and is deterministic") {
  for (const char* d : {"c1", "c2"}) {
    const Run r = run("synth --kind room --samples 2 --views 2 --with-estimates --seed 3 -o " + w(d));
    REQUIRE(r.code == 0);
  }
  const auto manifest = read_json(work() / "c1" / "manifest.json");
  CHECK(manifest["format"] == "rllreg-corpus");
  CHECK(manifest["samples"].size() == 2);
  check_same_tree(work() / "c1", work() / "c2");
  REQUIRE(run("synth --kind corridor --samples 2 --views 4 --seed 4 -o " + w("c4")).code == 0);
}

TEST_CASE("eval on stored exact estimates gives 100% success") {
  REQUIRE(run("eval --corpus " + w("c1") + " -o " + w("e1.json") + " --recall " + w("e1.csv") + " --no-timings").code == 0);
  REQUIRE(run("eval --corpus " + w("c1") + " -o " + w("e2.json") + " --recall " + w("e2.csv") + " --no-timings").code == 0);
  const auto j = read_json(work() / "e1.json");
  CHECK(j["success_rate"].get<double>() == 1.0);
  CHECK(j["successes"].get<int>() == 2);
  CHECK(slurp(work() / "e1.json") == slurp(work() / "e2.json"));
  CHECK(slurp(work() / "e1.csv") == slurp(work() / "e2.csv"));
  CHECK(slurp(work() / "e1.csv").rfind("curve,threshold,recall\n", 0) == 0);
}

TEST_CASE("eval with registration counts six pairs per four-view sample and is deterministic") {
  const std::string args = "eval --corpus " + w("c4") + " -K 20 --iterations 10 --max-points 150 --no-timings -o ";
  REQUIRE(run(args + w("m1.json")).code == 0);
  REQUIRE(run(args + w("m2.json")).code == 0);
  const auto j = read_json(work() / "m1.json");
  CHECK(j["pairs"].size() == 12);
  CHECK(slurp(work() / "m1.json") == slurp(work() / "m2.json"));
}

TEST_CASE("register a cloud against itself") {
  const auto manifest = read_json(work() / "c1" / "manifest.json");
  const std::string cloud = (work() / "c1" / manifest["samples"][0]["views"][0].get<std::string>()).string();
  const std::string args = "register " + cloud + " " + cloud + " -K 30 --iterations 50 --no-timings";
  REQUIRE(run(args + " -o " + w("t1.txt") + " --summary " + w("s1.json")).code == 0);
  REQUIRE(run(args + " -o " + w("t2.txt") + " --summary " + w("s2.json")).code == 0);
  const auto t = read_transforms(w("t1.txt"));
  REQUIRE(t.size() == 2);
  CHECK((t[0].matrix() - Eigen::Matrix4d::Identity()).norm() == 0.0);
  const PointCloud p = load_point_set(cloud);
  CHECK(rotation_error(t[1], RigidTransform::identity()) * 180.0 / 3.141592653589793 < 0.1);
  CHECK(t[1].translation.norm() < 1e-3 * max_pairwise_distance(p));
  CHECK(slurp(work() / "t1.txt") == slurp(work() / "t2.txt"));
  CHECK(slurp(work() / "s1.json") == slurp(work() / "s2.json"));
  CHECK(read_json(work() / "s1.json")["format"] == "rllreg-register");
}

TEST_CASE("train and ablate are deterministic") {
  for (const char* d : {"tr1", "tr2"}) {
    REQUIRE(run("train --corpus " + w("c1") + " --attention -o " + w(d) + kTinyTrain).code == 0);
  }
  CHECK(fs::exists(work() / "tr1" / "final.ckpt"));
  CHECK(fs::exists(work() / "tr1" / "epoch_001.ckpt"));
  check_same_tree(work() / "tr1", work() / "tr2");
  CHECK(run("eval --corpus " + w("c1") + " --features --weights learned --checkpoint " + w("tr1/final.ckpt") +
            " -K 10 --iterations 5 --max-points 100 -o " + w("ck.json")).code == 0);

  for (const char* d : {"ab1", "ab2"}) {
    const Run r = run("ablate --train-corpus " + w("c1") + " --test-corpus " + w("c1") +
                      " --variants baseline,RLL+weights -K 10 --iterations 5 --max-points 100 --no-timings -o " + w(d) +
                      kTinyTrain);
    REQUIRE(r.code == 0);
  }
  check_same_tree(work() / "ab1", work() / "ab2");
  const auto j = read_json(work() / "ab1" / "ablation.json");
  CHECK(j["rows"].size() == 2);

  // A resumed run reuses the stored head and reproduces the table.
  const std::string before = slurp(work() / "ab2" / "ablation.json");
  const Run resumed = run("ablate --train-corpus " + w("c1") + " --test-corpus " + w("c1") +
                          " --variants baseline,RLL+weights -K 10 --iterations 5 --max-points 100 --no-timings --resume -o " +
                          w("ab2") + kTinyTrain);
  REQUIRE(resumed.code == 0);
  CHECK(resumed.err.find("reusing RLL+weights") != std::string::npos);
  CHECK(slurp(work() / "ab2" / "ablation.json") == before);
  // A different training setting does not match the stored hash.
  const Run changed = run("ablate --train-corpus " + w("c1") + " --test-corpus " + w("c1") +
                          " --variants RLL+weights -K 10 --iterations 5 --max-points 100 --no-timings --resume --lr 0.01 -o " +
                          w("ab2") + kTinyTrain);
  REQUIRE(changed.code == 0);
  CHECK(changed.err.find("training RLL+weights") != std::string::npos);
}

TEST_CASE("ablate knows the full variant grid") {
  // An unknown variant is rejected with a config error and lists nothing.
  const Run r = run("ablate --train-corpus " + w("c1") + " --test-corpus " + w("c1") + " --variants nope -o " + w("abx"));
  CHECK(r.code == 4);
}

TEST_CASE("errors: distinct exit codes with a JSON body") {
  const Run unknown = run("eval --corpus " + w("c1") + " --frobnicate");
  CHECK(unknown.code == 2);
  CHECK(nlohmann::json::parse(unknown.err)["error"]["kind"] == "usage");

  const Run missing_arg = run("register");
  CHECK(missing_arg.code == 2);

  const Run missing = run("register " + w("nope.xyz") + " " + w("nope.xyz"));
  CHECK(missing.code == 3);
  CHECK(nlohmann::json::parse(missing.err)["error"]["exit_code"] == 3);
  CHECK(run("eval --corpus " + w("no_such_dir")).code == 3);

  const auto manifest = read_json(work() / "c1" / "manifest.json");
  const std::string cloud = (work() / "c1" / manifest["samples"][0]["views"][0].get<std::string>()).string();
  const Run bad_config = run("register " + cloud + " " + cloud + " -K 0");
  CHECK(bad_config.code == 4);
  CHECK(nlohmann::json::parse(bad_config.err)["error"].contains("message"));

  std::ofstream(work() / "bad.xyz") << "1 2 3\n4 5\n";
  const Run parse = run("register " + w("bad.xyz") + " " + cloud);
  CHECK(parse.code == 5);
  CHECK(parse.err.find("bad.xyz:2:") != std::string::npos);

  std::ofstream(work() / "tiny.xyz") << "0 0 0\n";
  const Run degenerate = run("register " + w("tiny.xyz") + " " + w("tiny.xyz") + " --voxel 0.001 --neighbors 1");
  CHECK(degenerate.code != 0);
  CHECK(degenerate.code != 2);
}
