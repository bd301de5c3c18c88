#pragma once

#include <span>
#include <vector>

#include "annulus/model.hpp"
#include "annulus/targets.hpp"

namespace annulus {

/// How temp_loss averages over patches.
enum class TempWeighting {
  uniform,
  /// Each landmark's patches weighted by the current frame's (constant,
  /// non-differentiated) classification probabilities, normalised to sum 1.
  probability,
};

struct LossWeights {
  double beta = 0.5;
  TempWeighting temp_weighting = TempWeighting::uniform;
};

struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double temp = 0.0;
  double total = 0.0;
};

// Each loss returns its value and, when a gradient buffer is supplied, adds
// `scale * d(loss)/d(input)` into it.

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets, in
/// the overflow-free form max(x, 0) - x t + log(1 + exp(-|x|)).
template <class T>
double cls_loss(std::span<const T> logits, std::span<const float> target, std::span<T> grad = {},
                double scale = 1.0);

/// Sum of absolute component errors, averaged over masked patches.
/// Layouts: pred/target [L][2][cells], mask [L][cells]. All-zero mask gives 0.
template <class T>
double reg_loss(std::span<const T> pred, std::span<const float> target, std::span<const float> mask,
                int n_landmarks = 1, std::span<T> grad = {}, double scale = 1.0);

/// Neighbouring-frame consistency loss for frame t.
///
/// Per patch and landmark, the absolute location is
/// patch_center + inverse_signed_log(reg), with reg clamped to
/// +-signed_log(2 * image extent) (zero slope beyond). The loss sums, over
/// x and y, |loc_t + disp_fwd_t - loc_{t+1}| + |loc_t + disp_bwd_t - loc_{t-1}|
/// and averages over patches and landmarks. `cell_weights` ([L][cells],
/// mean 1 per landmark) replaces the uniform patch average when given. A
/// missing neighbour (nullptr) drops its term. Gradients go to every frame
/// whose grad pointer is non-null.
template <class T>
double temp_loss(const PredictionMaps<T>* prev, const PredictionMaps<T>& cur, const PredictionMaps<T>* next,
                 PredictionMaps<T>* grad_prev = nullptr, PredictionMaps<T>* grad_cur = nullptr,
                 PredictionMaps<T>* grad_next = nullptr, double scale = 1.0,
                 std::span<const double> cell_weights = {});

/// Per-patch weights for TempWeighting::probability: sigmoid of the logits,
/// normalised to mean 1 within each landmark plane (uniform when all zero).
template <class T>
std::vector<double> probability_weights(const PredictionMaps<T>& maps);

/// One frame of a clip: predictions, targets if the frame is annotated, and
/// an optional gradient buffer shaped like the predictions.
template <class T>
struct FrameLossInput {
  const PredictionMaps<T>* pred = nullptr;
  const TargetMaps* targets = nullptr;
  PredictionMaps<T>* grad = nullptr;
};

template <class T>
using VideoLossInput = std::vector<FrameLossInput<T>>;

/// L_total = <L_C + L_R> over annotated frames + beta * <L_temp> over all
/// frames, each averaged per video first and then across videos.
/// cls/reg average over videos that have annotated frames; temp averages
/// over all videos. Throws DegenerateBatchError when no video has annotated
/// frames and beta == 0, NumericError when a term is not finite.
template <class T>
LossBreakdown total_loss(std::span<const VideoLossInput<T>> batch, const LossWeights& weights);

}  // namespace annulus
