#include "annulus/decode.hpp"

#include <algorithm>
#include <cmath>

#include "annulus/errors.hpp"

namespace annulus {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

Detection weighted_mean(std::span<const double> probs, std::span<const double> reg, const PatchGrid& grid) {
  const std::size_t cells = static_cast<std::size_t>(grid.cells());
  if (probs.size() != cells || reg.size() != 2 * cells) throw ShapeError("weighted_mean: grid mismatch");
  Detection d;
  double wsum = 0.0;
  double sx = 0.0;
  double sy = 0.0;
  for (int i = 0; i < grid.grid_h; ++i) {
    for (int j = 0; j < grid.grid_w; ++j) {
      const std::size_t c = static_cast<std::size_t>(i) * grid.grid_w + j;
      const double p = probs[c];
      d.max_prob = std::max(d.max_prob, p);
      if (p == 0.0) continue;
      const Point center = patch_center(grid, i, j);
      wsum += p;
      sx += p * (center.x + inverse_signed_log(reg[c]));
      sy += p * (center.y + inverse_signed_log(reg[cells + c]));
    }
  }
  if (wsum < 1e-12) return {std::nullopt, 0.0};
  d.point = Point{sx / wsum, sy / wsum};
  return d;
}

template <class T>
Detection weighted_mean(const PredictionMaps<T>& maps, int landmark) {
  const std::size_t cells = maps.cells();
  std::vector<double> probs(cells);
  std::vector<double> reg(2 * cells);
  for (std::size_t c = 0; c < cells; ++c) {
    probs[c] = sigmoid(static_cast<double>(maps.cls_logits[landmark * cells + c]));
    reg[c] = maps.reg[maps.reg_index(landmark, 0, static_cast<int>(c))];
    reg[cells + c] = maps.reg[maps.reg_index(landmark, 1, static_cast<int>(c))];
  }
  return weighted_mean(probs, reg, maps.grid);
}

template <class T>
Detection detect(const PredictionMaps<T>& maps, int landmark, double tau) {
  Detection d = weighted_mean(maps, landmark);
  if (d.max_prob < tau) d.point.reset();
  return d;
}

Threshold calibrate(std::span<const double> max_probs, std::span<const int> present) {
  if (max_probs.empty()) throw CalibrationError("calibrate: no samples");
  if (max_probs.size() != present.size()) throw CalibrationError("calibrate: score/label length mismatch");

  std::vector<double> sorted(max_probs.begin(), max_probs.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{0.0, 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  std::sort(candidates.begin(), candidates.end());

  const double n = static_cast<double>(max_probs.size());
  Threshold best{0.0, -1.0};
  for (double tau : candidates) {
    int correct = 0;
    for (std::size_t i = 0; i < max_probs.size(); ++i) {
      const bool predicted = max_probs[i] >= tau;
      correct += predicted == (present[i] != 0) ? 1 : 0;
    }
    const double acc = correct / n;
    if (acc > best.accuracy) best = {tau, acc};
  }
  return best;
}

template Detection weighted_mean<float>(const PredictionMaps<float>&, int);
template Detection weighted_mean<double>(const PredictionMaps<double>&, int);
template Detection detect<float>(const PredictionMaps<float>&, int, double);
template Detection detect<double>(const PredictionMaps<double>&, int, double);

}  // namespace annulus
