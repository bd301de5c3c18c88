#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "annulus/geometry.hpp"
#include "annulus/image.hpp"

namespace annulus {

/// Parameters of the synthetic sector-video generator.
struct SynthConfig {
  int frames = 60;
  int height = 128;
  int width = 128;
  double cycles = 2.0;
  double spacing_mm = 0.5;
  double amplitude_mm = 8.0;
  double annulus_width_mm = 26.0;
  double speckle_strength = 0.5;
  /// AR(1) coefficient of the speckle field between consecutive frames.
  double speckle_correlation = 0.8;
  double speckle_blur_px = 1.0;
  double annotation_density = 0.1;
  double exit_fraction = 0.2;
  /// Systole length as a fraction of the cycle (1:2 systole:diastole).
  double systole_fraction = 1.0 / 3.0;
  double half_angle_deg = 37.5;
};

void validate(const SynthConfig& cfg);

struct VideoClip {
  std::vector<Image> frames;
  double spacing = 1.0;  // mm per px
  SectorGeometry geometry;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
};

struct FrameAnnotation {
  std::optional<Point> left;
  std::optional<Point> right;
  bool annotated = false;

  const std::optional<Point>& landmark(int index) const { return index == 0 ? left : right; }
  std::optional<Point>& landmark(int index) { return index == 0 ? left : right; }
};

struct GroundTruth {
  std::vector<FrameAnnotation> frames;
  std::vector<int> ed_frames;
  std::vector<int> es_frames;
  double spacing = 1.0;
  SectorGeometry geometry;

  int num_frames() const { return static_cast<int>(frames.size()); }
  std::vector<int> annotated_indices() const;
};

/// Throws AnnotationError if annotated/ED/ES indices are out of range or a
/// present landmark lies outside the sector.
void validate(const GroundTruth& gt);

struct LandmarkPair {
  Point left;
  Point right;
};

/// Per-video motion parameters. The annulus is rigid: both landmarks
/// translate together towards the apex during systole.
struct VideoMotion {
  Point center;            // annulus midpoint at end-diastole
  Point axis_dir{0, 1};    // unit vector pointing away from the apex
  double half_width_px = 26.0;
  double tilt = 0.0;       // rotation of the annulus line, radians
  double amplitude_px = 16.0;
  double wobble_px = 0.8;  // lateral wobble amplitude, < 10% of amplitude
  double phase_offset = 0.0;
  double systole_fraction = 1.0 / 3.0;
};

/// Nominal (unperturbed) motion for a configuration: annulus centered on the
/// sector axis at 70% depth, no tilt.
VideoMotion nominal_motion(const SynthConfig& cfg, const SectorGeometry& geom);

/// Randomized motion. When `exits` is set, the annulus is shifted laterally
/// so that one landmark leaves the sector half-way through systole.
VideoMotion sample_motion(const SynthConfig& cfg, const SectorGeometry& geom,
                          std::mt19937_64& rng, bool exits);

/// Eased raised-cosine systolic waveform: 0 at end-diastole (phase 0), 1 at
/// end-systole (phase = systole_fraction), C2 everywhere. `phase` is wrapped
/// to [0, 1).
double systolic_waveform(double phase, double systole_fraction);

LandmarkPair landmark_trajectory(const VideoMotion& motion, double phase);
LandmarkPair landmark_trajectory(const SynthConfig& cfg, double phase);

/// Temporally correlated, low-pass filtered, unit-variance noise fields.
class SpeckleProcess {
 public:
  SpeckleProcess(int height, int width, double correlation, double blur_px);
  /// Advances the AR(1) state and returns the filtered field for the new frame.
  Image next(std::mt19937_64& rng);

 private:
  int height_;
  int width_;
  double correlation_;
  std::vector<float> kernel_;
  double gain_;
  std::vector<float> state_;
  bool started_ = false;
};

/// Ridge between the landmarks, two blobs at the landmarks and the ventricle
/// walls, multiplied by (1 + strength * speckle), clipped and masked.
/// An empty `speckle` image means noise-free.
Image render_frame(const SynthConfig& cfg, const SectorGeometry& geom, const Mask& mask,
                   Point left, Point right, const Image& speckle);

struct Sample {
  VideoClip video;
  GroundTruth truth;
};

/// Deterministic in `seed`; video i uses an RNG stream derived from (seed, i).
std::vector<Sample> generate_dataset(const SynthConfig& cfg, int n_videos, std::uint64_t seed);
Sample generate_video(const SynthConfig& cfg, std::uint64_t seed, int index, bool exits);
/// Indices of the videos whose annulus leaves the sector.
std::vector<bool> exit_assignment(const SynthConfig& cfg, int n_videos, std::uint64_t seed);

// File formats ---------------------------------------------------------------

/// "AVF1" + u32 T,H,W + f32 spacing + T*H*W f32, all little-endian.
void write_video(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_video(const std::filesystem::path& path);

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::filesystem::path& path);

/// Writes video_NNNN.avf / video_NNNN.json pairs into `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
/// Every .avf file in `dir`, sorted by name.
std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& dir);
/// Loads every video_*.avf with its annotation file, in index order.
std::vector<Sample> read_dataset(const std::filesystem::path& dir);
Sample read_sample(const std::filesystem::path& video_path);

}  // namespace annulus
