#include "rllreg/corpus.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "rllreg/error.hpp"

namespace rllreg {

namespace fs = std::filesystem;

void write_corpus(const std::string& dir, const Corpus& corpus) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "rllreg-corpus";
  manifest["version"] = 1;
  manifest["meta"] = corpus.meta;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : corpus.samples) {
    nlohmann::json entry;
    entry["name"] = s.name;
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < s.views.size(); ++i) {
      const std::string file = s.name + "_v" + std::to_string(i) + ".xyz";
      write_xyz((fs::path(dir) / file).string(), s.views[i]);
      files.push_back(file);
    }
    entry["views"] = files;
    entry["poses"] = s.name + "_poses.txt";
    write_transforms((fs::path(dir) / entry["poses"].get<std::string>()).string(), s.ground_truth.poses);
    if (s.estimates) {
      entry["estimates"] = s.name + "_estimates.txt";
      write_transforms((fs::path(dir) / entry["estimates"].get<std::string>()).string(), *s.estimates);
    }
    list.push_back(entry);
  }
  manifest["samples"] = list;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << manifest.dump(2) << '\n';
}

Corpus read_corpus(const std::string& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }

  Corpus corpus;
  try {
    if (manifest.at("format").get<std::string>() != "rllreg-corpus") {
      throw Error(ErrorKind::Parse, path + ": not an rllreg corpus manifest");
    }
    if (manifest.contains("meta")) corpus.meta = manifest["meta"];
    for (const auto& entry : manifest.at("samples")) {
      CorpusSample s;
      s.name = entry.at("name").get<std::string>();
      for (const auto& f : entry.at("views")) {
        s.views.push_back(load_point_set((fs::path(dir) / f.get<std::string>()).string()));
      }
      s.ground_truth.poses = read_transforms((fs::path(dir) / entry.at("poses").get<std::string>()).string());
      if (s.ground_truth.poses.size() != s.views.size()) {
        throw Error(ErrorKind::Parse, path + ": sample '" + s.name + "' has " +
                                          std::to_string(s.views.size()) + " views but " +
                                          std::to_string(s.ground_truth.poses.size()) + " poses");
      }
      if (entry.contains("estimates")) {
        s.estimates = read_transforms((fs::path(dir) / entry["estimates"].get<std::string>()).string());
      }
      corpus.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }
  if (corpus.samples.empty()) throw Error(ErrorKind::InvalidArgument, path + ": corpus has no samples");
  corpus.load_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return corpus;
}

std::vector<EvalSample> to_eval_samples(const Corpus& corpus) {
  std::vector<EvalSample> out;
  const double share = corpus.load_seconds / static_cast<double>(std::max<std::size_t>(corpus.samples.size(), 1));
  for (const auto& s : corpus.samples) {
    EvalSample e;
    e.name = s.name;
    e.views = s.views;
    e.ground_truth = s.ground_truth;
    e.estimates = s.estimates;
    e.load_seconds = share;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace rllreg
