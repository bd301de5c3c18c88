#pragma once

#include <optional>
#include <vector>

#include "annulus/image.hpp"

namespace annulus {

/// Output lattice of the network: one cell per `stride` x `stride` patch.
struct PatchGrid {
  int stride = 32;
  int grid_h = 4;
  int grid_w = 4;

  int cells() const { return grid_h * grid_w; }
  int image_height() const { return stride * grid_h; }
  int image_width() const { return stride * grid_w; }
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Center of patch (row i, column j). Throws std::out_of_range outside the grid.
Point patch_center(const PatchGrid& grid, int i, int j);

/// sign(v) * ln(1 + |v|).
double signed_log(double v);
/// sign(r) * (exp(|r|) - 1).
double inverse_signed_log(double r);

/// Targets for a single landmark plane.
///
/// `reg` holds the x components of all cells followed by the y components,
/// matching the channel layout of the network's regression output.
struct LandmarkTargets {
  std::vector<float> cls;       // grid cells, {0, 1}
  std::vector<float> reg;       // 2 x grid cells, signed-log offsets
  std::vector<float> reg_mask;  // grid cells, {0, 1}
  bool present = false;
};

/// A present landmark owns the patch [k*stride, (k+1)*stride) it falls in.
/// Absent landmarks get all-zero classification and regression masks.
LandmarkTargets build_targets(const std::optional<Point>& landmark, const PatchGrid& grid);

/// Targets for several landmark planes of one frame, concatenated plane by plane.
struct TargetMaps {
  int n_landmarks = 0;
  PatchGrid grid;
  std::vector<float> cls;       // L x cells
  std::vector<float> reg;       // L x 2 x cells
  std::vector<float> reg_mask;  // L x cells
};

TargetMaps build_targets(const std::vector<std::optional<Point>>& landmarks, const PatchGrid& grid);

}  // namespace annulus
