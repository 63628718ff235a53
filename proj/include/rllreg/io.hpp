#pragma once

#include <string>
#include <vector>

#include "rllreg/geom.hpp"

namespace rllreg {

enum class CloudFormat { Auto, PlyAscii, Xyz };

/// ASCII PLY (vertex x/y/z, other properties and elements ignored) or XYZ
/// (three numbers per line, '#' starts a comment). Auto picks by extension.
/// Throws ParseError with a line number on malformed input, Io when the
/// file cannot be opened.
PointCloud load_point_set(const std::string& path, CloudFormat format = CloudFormat::Auto);

/// Coordinates are written with 17 significant digits, so reading the file
/// back reproduces every double exactly.
void write_xyz(const std::string& path, const PointCloud& points);
void write_ply(const std::string& path, const PointCloud& points);
void write_point_set(const std::string& path, const PointCloud& points,
                     CloudFormat format = CloudFormat::Auto);

/// One 4x4 row-major matrix per transform, four space-separated values per
/// row, a blank line between transforms.
void write_transforms(const std::string& path, const std::vector<RigidTransform>& transforms);
std::string format_transforms(const std::vector<RigidTransform>& transforms);
std::vector<RigidTransform> read_transforms(const std::string& path);

}  // namespace rllreg
