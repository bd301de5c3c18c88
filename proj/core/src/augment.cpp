#include "annulus/augment.hpp"

#include <cmath>

#include "annulus/errors.hpp"

namespace annulus {

void validate(const FovAugmentConfig& cfg) {
  if (!(cfg.max_zoom >= 1.0)) throw ConfigError("augment: max_zoom must be >= 1");
  if (!(cfg.max_rotation >= 0.0)) throw ConfigError("augment: max_rotation must be >= 0");
  if (!(cfg.probability >= 0.0 && cfg.probability <= 1.0)) {
    throw ConfigError("augment: probability must lie in [0, 1]");
  }
}

SimilarityTransform sample_transform(const FovAugmentConfig& cfg, Point pivot, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double gate = unit(rng);
  const double s = unit(rng);
  const double r = unit(rng);
  SimilarityTransform t;
  t.pivot = pivot;
  if (gate >= cfg.probability) return t;
  t.scale = 1.0 + (cfg.max_zoom - 1.0) * s;
  t.rotation = cfg.max_rotation * (2.0 * r - 1.0);
  return t;
}

float sample_bilinear(const Image& img, Point p) {
  const double fx = p.x - 0.5;
  const double fy = p.y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0;
  const double ay = fy - y0;
  auto px = [&](int y, int x) -> double {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.0;
    return img.at(y, x);
  };
  const double top = (1.0 - ax) * px(y0, x0) + ax * px(y0, x0 + 1);
  const double bottom = (1.0 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

Image warp_frame(const Image& frame, const SimilarityTransform& t, const Mask& mask) {
  const SimilarityTransform back = inverse(t);
  Image out(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      if (!mask.data.empty() && !mask.at(y, x)) continue;
      out.at(y, x) = sample_bilinear(frame, apply(back, {x + 0.5, y + 0.5}));
    }
  }
  return out;
}

Sample augment_clip(const VideoClip& clip, const GroundTruth& gt, const SimilarityTransform& t,
                    CropMode crop) {
  if (t.is_identity()) return {clip, gt};

  const SectorGeometry& geom = clip.geometry;
  const Mask mask = crop == CropMode::sector ? sector_mask(geom) : Mask{};
  Sample out;
  out.video.spacing = clip.spacing;
  out.video.geometry = geom;
  out.video.frames.reserve(clip.frames.size());
  for (const Image& f : clip.frames) out.video.frames.push_back(warp_frame(f, t, mask));

  out.truth = gt;
  if (crop == CropMode::rectangle) {
    // The un-masked output shows the transformed sector.
    SectorGeometry moved = geom;
    moved.apex = apply(t, geom.apex);
    moved.axis_angle += t.rotation;
    moved.r_min *= t.scale;
    moved.r_max *= t.scale;
    out.video.geometry = moved;
    out.truth.geometry = moved;
  }
  auto visible = [&](Point p) {
    if (crop == CropMode::sector) return contains(geom, p);
    return p.x >= 0.0 && p.y >= 0.0 && p.x < clip.width() && p.y < clip.height();
  };
  for (FrameAnnotation& a : out.truth.frames) {
    for (int k = 0; k < 2; ++k) {
      auto& lm = a.landmark(k);
      if (!lm) continue;
      const Point mapped = apply(t, *lm);
      if (visible(mapped)) {
        lm = mapped;
      } else {
        lm.reset();
      }
    }
  }
  return out;
}

}  // namespace annulus
