#pragma once

// nlohmann/json adapters shared by the file formats. Internal header.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>

#include "annulus/geometry.hpp"
#include "annulus/image.hpp"

namespace annulus::detail {

nlohmann::json to_json(const SectorGeometry& geom);
SectorGeometry geometry_from_json(const nlohmann::json& j);

nlohmann::json point_or_null(const std::optional<Point>& p);
std::optional<Point> point_from_json(const nlohmann::json& j);

/// Parses a JSON file, converting parse and I/O failures into FormatError.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes pretty-printed JSON with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace annulus::detail
