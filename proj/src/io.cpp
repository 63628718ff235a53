#include "rllreg/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rllreg/error.hpp"

namespace rllreg {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) != suffix[i]) {
      return false;
    }
  }
  return true;
}

CloudFormat resolve(const std::string& path, CloudFormat format) {
  if (format != CloudFormat::Auto) return format;
  if (ends_with(path, ".ply")) return CloudFormat::PlyAscii;
  return CloudFormat::Xyz;
}

double parse_number(const std::string& token, const std::string& path, int line) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (token.empty() || end != token.c_str() + token.size()) {
    throw ParseError(path, line, "non-numeric token '" + token + "'");
  }
  if (!std::isfinite(v)) throw ParseError(path, line, "non-finite coordinate '" + token + "'");
  return v;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

PointCloud from_vector(const std::vector<double>& xyz) {
  PointCloud out(3, static_cast<Eigen::Index>(xyz.size() / 3));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = Eigen::Vector3d(xyz[3 * j], xyz[3 * j + 1], xyz[3 * j + 2]);
  }
  return out;
}

PointCloud load_xyz(const std::string& path, std::istream& in) {
  std::vector<double> xyz;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 3) {
      throw ParseError(path, line_no, "expected 3 values, found " + std::to_string(t.size()));
    }
    for (const auto& tok : t) xyz.push_back(parse_number(tok, path, line_no));
  }
  return from_vector(xyz);
}

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<std::string> properties;
  bool has_list = false;
};

PointCloud load_ply(const std::string& path, std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next = [&](bool required) {
    if (!std::getline(in, line)) {
      if (required) throw ParseError(path, line_no + 1, "unexpected end of file");
      return false;
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  next(true);
  if (line != "ply") throw ParseError(path, line_no, "missing 'ply' magic");
  std::vector<PlyElement> elements;
  bool ascii = false;
  for (;;) {
    next(true);
    const auto t = tokens(line);
    if (t.empty()) continue;
    if (t[0] == "end_header") break;
    if (t[0] == "comment" || t[0] == "obj_info") continue;
    if (t[0] == "format") {
      if (t.size() < 2 || t[1] != "ascii") throw ParseError(path, line_no, "only ASCII PLY is supported");
      ascii = true;
    } else if (t[0] == "element") {
      if (t.size() != 3) throw ParseError(path, line_no, "malformed element line");
      PlyElement e;
      e.name = t[1];
      try {
        e.count = std::stol(t[2]);
      } catch (const std::exception&) {
        throw ParseError(path, line_no, "bad element count '" + t[2] + "'");
      }
      if (e.count < 0) throw ParseError(path, line_no, "negative element count");
      elements.push_back(e);
    } else if (t[0] == "property") {
      if (elements.empty() || t.size() < 3) throw ParseError(path, line_no, "malformed property line");
      if (t[1] == "list") {
        if (t.size() != 5) throw ParseError(path, line_no, "malformed list property");
        elements.back().has_list = true;
        elements.back().properties.push_back(t[4]);
      } else {
        elements.back().properties.push_back(t[2]);
      }
    } else {
      throw ParseError(path, line_no, "unknown header keyword '" + t[0] + "'");
    }
  }
  if (!ascii) throw ParseError(path, line_no, "missing format line");

  std::vector<double> xyz;
  bool seen_vertex = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (long r = 0; r < e.count; ++r) next(true);
      continue;
    }
    if (e.has_list) throw ParseError(path, line_no, "list properties on vertices are not supported");
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t p = 0; p < e.properties.size(); ++p) {
      if (e.properties[p] == "x") ix = static_cast<int>(p);
      if (e.properties[p] == "y") iy = static_cast<int>(p);
      if (e.properties[p] == "z") iz = static_cast<int>(p);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(path, line_no, "vertex element lacks x/y/z");
    seen_vertex = true;
    xyz.reserve(static_cast<std::size_t>(3 * e.count));
    for (long r = 0; r < e.count; ++r) {
      next(true);
      const auto t = tokens(line);
      if (t.size() != e.properties.size()) {
        throw ParseError(path, line_no, "expected " + std::to_string(e.properties.size()) +
                                            " values, found " + std::to_string(t.size()));
      }
      for (const auto& tok : t) parse_number(tok, path, line_no);
      xyz.push_back(parse_number(t[static_cast<std::size_t>(ix)], path, line_no));
      xyz.push_back(parse_number(t[static_cast<std::size_t>(iy)], path, line_no));
      xyz.push_back(parse_number(t[static_cast<std::size_t>(iz)], path, line_no));
    }
  }
  if (!seen_vertex) throw ParseError(path, line_no, "no vertex element");
  return from_vector(xyz);
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  return out;
}

}  // namespace

PointCloud load_point_set(const std::string& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return resolve(path, format) == CloudFormat::PlyAscii ? load_ply(path, in) : load_xyz(path, in);
}

void write_xyz(const std::string& path, const PointCloud& points) {
  auto out = open_out(path);
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    out << g17(points(0, j)) << ' ' << g17(points(1, j)) << ' ' << g17(points(2, j)) << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

void write_ply(const std::string& path, const PointCloud& points) {
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.cols()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    out << g17(points(0, j)) << ' ' << g17(points(1, j)) << ' ' << g17(points(2, j)) << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

void write_point_set(const std::string& path, const PointCloud& points, CloudFormat format) {
  if (resolve(path, format) == CloudFormat::PlyAscii) {
    write_ply(path, points);
  } else {
    write_xyz(path, points);
  }
}

std::string format_transforms(const std::vector<RigidTransform>& transforms) {
  std::string s;
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    if (i) s += '\n';
    const Eigen::Matrix4d m = transforms[i].matrix();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        s += g17(m(r, c));
        s += c == 3 ? '\n' : ' ';
      }
    }
  }
  return s;
}

void write_transforms(const std::string& path, const std::vector<RigidTransform>& transforms) {
  auto out = open_out(path);
  out << format_transforms(transforms);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

std::vector<RigidTransform> read_transforms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<RigidTransform> out;
  std::vector<double> rows;
  std::string line;
  int line_no = 0;
  auto flush = [&]() {
    if (rows.empty()) return;
    if (rows.size() != 16) throw ParseError(path, line_no, "transform block needs 4 rows of 4");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m(r, c) = rows[static_cast<std::size_t>(4 * r + c)];
    }
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
      throw ParseError(path, line_no, "last row of a transform must be 0 0 0 1");
    }
    RigidTransform t = RigidTransform::from_matrix(m);
    // Files with few digits are accepted and projected back onto SO(3).
    if (t.orthonormality_error() > 1e-6 || t.rotation.determinant() < 0.0) {
      throw ParseError(path, line_no, "transform block is not a rotation");
    }
    out.push_back(t.orthonormality_error() > 1e-9 ? t.orthonormalized() : t);
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = tokens(line);
    if (t.empty()) {
      flush();
      continue;
    }
    if (t.size() != 4) throw ParseError(path, line_no, "expected 4 values per row");
    for (const auto& tok : t) rows.push_back(parse_number(tok, path, line_no));
    if (rows.size() > 16) throw ParseError(path, line_no, "transform block has more than 4 rows");
  }
  flush();
  return out;
}

}  // namespace rllreg
