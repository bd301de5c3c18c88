#pragma once

#include <optional>
#include <span>
#include <vector>

#include "annulus/model.hpp"
#include "annulus/targets.hpp"

namespace annulus {

struct Detection {
  std::optional<Point> point;
  double max_prob = 0.0;
};

struct Threshold {
  double tau = 0.5;
  double accuracy = 0.0;
};

double sigmoid(double x);

/// Probability-weighted mean of per-patch locations
/// patch_center + inverse_signed_log(reg). `probs` has one value per cell and
/// `reg` is [2][cells]. Returns an absent point with max_prob 0 when the
/// probabilities sum to less than 1e-12.
Detection weighted_mean(std::span<const double> probs, std::span<const double> reg, const PatchGrid& grid);

template <class T>
Detection weighted_mean(const PredictionMaps<T>& maps, int landmark);

/// Present (with the weighted-mean point) iff max_prob >= tau.
template <class T>
Detection detect(const PredictionMaps<T>& maps, int landmark, double tau);

/// Picks tau among {0, 1} and the midpoints between sorted distinct scores
/// maximizing (TP + TN) / N, preferring the smallest tau on ties.
/// Throws CalibrationError on empty or mismatched input.
Threshold calibrate(std::span<const double> max_probs, std::span<const int> present);

}  // namespace annulus
