#include "annulus/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "annulus/errors.hpp"

namespace annulus {

double norm(Point p) { return std::hypot(p.x, p.y); }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

SectorGeometry SectorGeometry::fitted(int height, int width, double half_angle_deg) {
  if (height <= 0 || width <= 0) {
    throw ConfigError("sector geometry needs positive image dimensions");
  }
  SectorGeometry g;
  g.height = height;
  g.width = width;
  g.half_angle = half_angle_deg * std::numbers::pi / 180.0;
  g.apex = {width / 2.0, std::max(2.0, height / 32.0)};
  g.r_min = height / 16.0;
  const double lateral_room = width / 2.0 - 2.0;
  g.r_max = std::min(height - g.apex.y - 2.0, lateral_room / std::sin(g.half_angle));
  return g;
}

void validate(const SectorGeometry& geom) {
  if (!(geom.half_angle > 0.0 && geom.half_angle < std::numbers::pi / 2.0)) {
    throw ConfigError("sector half_angle must lie in (0, pi/2)");
  }
  if (!(geom.r_min >= 0.0 && geom.r_min < geom.r_max)) {
    throw ConfigError("sector radii must satisfy 0 <= r_min < r_max");
  }
  if (geom.height <= 0 || geom.width <= 0) {
    throw ConfigError("sector image dimensions must be positive");
  }
}

bool contains(const SectorGeometry& geom, Point p) {
  // r_min == r_max is a zero-area sector.
  if (!(geom.r_min < geom.r_max)) return false;
  const Point d = p - geom.apex;
  const double r = norm(d);
  if (r < geom.r_min || r > geom.r_max) return false;
  if (r == 0.0) return true;
  const double deviation =
      std::abs(std::remainder(std::atan2(d.y, d.x) - geom.axis_angle, 2.0 * std::numbers::pi));
  // Tolerance absorbs atan2 rounding for points constructed on the edge.
  return deviation <= geom.half_angle + 1e-12;
}

Mask sector_mask(const SectorGeometry& geom) {
  Mask mask(geom.height, geom.width, 0);
  for (int y = 0; y < geom.height; ++y) {
    for (int x = 0; x < geom.width; ++x) {
      mask.at(y, x) = contains(geom, {x + 0.5, y + 0.5}) ? 1 : 0;
    }
  }
  return mask;
}

Point apply(const SimilarityTransform& t, Point p) {
  const double c = std::cos(t.rotation);
  const double s = std::sin(t.rotation);
  const Point d = p - t.pivot;
  const Point rotated{c * d.x - s * d.y, s * d.x + c * d.y};
  return t.pivot + rotated * t.scale;
}

SimilarityTransform inverse(const SimilarityTransform& t) {
  if (!(t.scale > 0.0)) throw ConfigError("similarity transform scale must be positive");
  return {1.0 / t.scale, -t.rotation, t.pivot};
}

}  // namespace annulus
