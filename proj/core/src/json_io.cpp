#include "json_io.hpp"

#include <fstream>

#include "annulus/errors.hpp"

namespace annulus::detail {

nlohmann::json to_json(const SectorGeometry& geom) {
  return {{"apex_x", geom.apex.x},   {"apex_y", geom.apex.y}, {"half_angle", geom.half_angle},
          {"axis_angle", geom.axis_angle}, {"r_min", geom.r_min},   {"r_max", geom.r_max},
          {"height", geom.height},   {"width", geom.width}};
}

SectorGeometry geometry_from_json(const nlohmann::json& j) {
  try {
    SectorGeometry g;
    g.apex = {j.at("apex_x").get<double>(), j.at("apex_y").get<double>()};
    g.half_angle = j.at("half_angle").get<double>();
    g.axis_angle = j.at("axis_angle").get<double>();
    g.r_min = j.at("r_min").get<double>();
    g.r_max = j.at("r_max").get<double>();
    g.height = j.at("height").get<int>();
    g.width = j.at("width").get<int>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad geometry record: ") + e.what());
  }
}

nlohmann::json point_or_null(const std::optional<Point>& p) {
  if (!p) return nullptr;
  return {{"x", p->x}, {"y", p->y}};
}

std::optional<Point> point_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return Point{j.at("x").get<double>(), j.at("y").get<double>()};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace annulus::detail
