#pragma once

#include <random>

#include "annulus/geometry.hpp"
#include "annulus/synthvideo.hpp"

namespace annulus {

/// How the augmented frame is cropped.
enum class CropMode {
  /// Re-mask with the original sector: landmarks leaving the sector become absent.
  sector,
  /// Plain rectangular crop: only landmarks leaving the image become absent.
  rectangle,
};

struct FovAugmentConfig {
  double max_zoom = 1.5;
  double max_rotation = 15.0 * std::numbers::pi / 180.0;
  double probability = 1.0;
  CropMode crop = CropMode::sector;
};

void validate(const FovAugmentConfig& cfg);

/// scale ~ U[1, max_zoom], rotation ~ U[-max_rotation, max_rotation], pivot
/// at `pivot`; identity with probability 1 - cfg.probability. Always consumes
/// three draws so the stream position does not depend on the outcome.
SimilarityTransform sample_transform(const FovAugmentConfig& cfg, Point pivot, std::mt19937_64& rng);

/// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5); zero outside.
float sample_bilinear(const Image& img, Point p);

/// Inverse-warps `frame` through `t` and applies `mask` (if non-empty).
Image warp_frame(const Image& frame, const SimilarityTransform& t, const Mask& mask);

/// Applies one transform to every frame of the clip and maps the landmarks.
/// With CropMode::sector the output is re-masked by the clip's original
/// sector and any landmark outside it is marked absent.
Sample augment_clip(const VideoClip& clip, const GroundTruth& gt, const SimilarityTransform& t,
                    CropMode crop = CropMode::sector);

}  // namespace annulus
