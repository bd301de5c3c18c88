#pragma once

#include <numbers>

#include "annulus/image.hpp"

namespace annulus {

/// Sector-shaped imaging region of a phased-array probe.
///
/// Angles are measured in image coordinates (x right, y down), so an
/// `axis_angle` of pi/2 points straight down from the apex.
struct SectorGeometry {
  Point apex{64.0, 4.0};
  double half_angle = 37.5 * std::numbers::pi / 180.0;
  double axis_angle = std::numbers::pi / 2.0;
  double r_min = 8.0;
  double r_max = 100.0;
  int height = 128;
  int width = 128;

  friend bool operator==(const SectorGeometry&, const SectorGeometry&) = default;

  /// Largest sector with the default angles that fits an image of the given size.
  static SectorGeometry fitted(int height, int width, double half_angle_deg = 37.5);
};

/// Throws ConfigError when the invariants (0 < half_angle < pi/2, 0 <= r_min < r_max) fail.
void validate(const SectorGeometry& geom);

/// Boundary points count as inside. A sector with r_min == r_max is empty.
bool contains(const SectorGeometry& geom, Point p);

/// Pixel (x, y) is 1 iff its center (x + 0.5, y + 0.5) is inside the sector.
Mask sector_mask(const SectorGeometry& geom);

/// Rotation about `pivot` followed by scaling about `pivot`.
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;
  Point pivot{};

  bool is_identity() const { return scale == 1.0 && rotation == 0.0; }
  friend bool operator==(const SimilarityTransform&, const SimilarityTransform&) = default;
};

Point apply(const SimilarityTransform& t, Point p);
SimilarityTransform inverse(const SimilarityTransform& t);

}  // namespace annulus
