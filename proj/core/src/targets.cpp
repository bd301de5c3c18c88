#include "annulus/targets.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "annulus/errors.hpp"

namespace annulus {

Point patch_center(const PatchGrid& grid, int i, int j) {
  if (i < 0 || i >= grid.grid_h || j < 0 || j >= grid.grid_w) {
    throw std::out_of_range("patch index (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside the grid");
  }
  return {(j + 0.5) * grid.stride, (i + 0.5) * grid.stride};
}

double signed_log(double v) { return std::copysign(std::log1p(std::abs(v)), v); }

double inverse_signed_log(double r) { return std::copysign(std::expm1(std::abs(r)), r); }

LandmarkTargets build_targets(const std::optional<Point>& landmark, const PatchGrid& grid) {
  const int n = grid.cells();
  LandmarkTargets t;
  t.cls.assign(n, 0.0f);
  t.reg.assign(2 * n, 0.0f);
  t.reg_mask.assign(n, 0.0f);
  if (!landmark) return t;

  const Point p = *landmark;
  if (!(p.x >= 0.0 && p.x < grid.image_width() && p.y >= 0.0 && p.y < grid.image_height())) {
    throw AnnotationError("landmark (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") lies outside the image");
  }
  t.present = true;
  const int col = static_cast<int>(std::floor(p.x / grid.stride));
  const int row = static_cast<int>(std::floor(p.y / grid.stride));
  t.cls[row * grid.grid_w + col] = 1.0f;
  for (int i = 0; i < grid.grid_h; ++i) {
    for (int j = 0; j < grid.grid_w; ++j) {
      const int cell = i * grid.grid_w + j;
      const Point d = p - patch_center(grid, i, j);
      t.reg[cell] = static_cast<float>(signed_log(d.x));
      t.reg[n + cell] = static_cast<float>(signed_log(d.y));
      t.reg_mask[cell] = 1.0f;
    }
  }
  return t;
}

TargetMaps build_targets(const std::vector<std::optional<Point>>& landmarks, const PatchGrid& grid) {
  TargetMaps maps;
  maps.n_landmarks = static_cast<int>(landmarks.size());
  maps.grid = grid;
  for (const auto& lm : landmarks) {
    LandmarkTargets t = build_targets(lm, grid);
    maps.cls.insert(maps.cls.end(), t.cls.begin(), t.cls.end());
    maps.reg.insert(maps.reg.end(), t.reg.begin(), t.reg.end());
    maps.reg_mask.insert(maps.reg_mask.end(), t.reg_mask.begin(), t.reg_mask.end());
  }
  return maps;
}

}  // namespace annulus
