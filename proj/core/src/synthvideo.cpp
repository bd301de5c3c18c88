#include "annulus/synthvideo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "annulus/errors.hpp"
#include "json_io.hpp"

namespace annulus {

namespace {

constexpr double kPi = std::numbers::pi;

// Rendering intensities. Their sum at a landmark stays below 1 so the
// noise-free maximum is not clipped into a plateau.
constexpr double kBackground = 0.06;
constexpr double kRidge = 0.25;
constexpr double kWall = 0.15;
constexpr double kBlob = 0.5;
constexpr double kRidgeSigma = 1.2;
constexpr double kWallSigma = 1.5;
constexpr double kBlobSigma = 2.5;

double distance_to_segment(Point p, Point a, Point b) {
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + ab * t));
}

Point lateral_of(Point axis) { return {axis.y, -axis.x}; }

double angular_deviation(const SectorGeometry& geom, Point p) {
  const Point d = p - geom.apex;
  return std::abs(std::remainder(std::atan2(d.y, d.x) - geom.axis_angle, 2.0 * kPi));
}

std::mt19937_64 video_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated video file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.frames < 3) throw ConfigError("synth: frames must be >= 3");
  if (cfg.height <= 0 || cfg.width <= 0) throw ConfigError("synth: image dimensions must be positive");
  if (!(cfg.cycles > 0.0)) throw ConfigError("synth: cycles must be positive");
  if (!(cfg.spacing_mm > 0.0)) throw ConfigError("synth: spacing must be positive");
  if (!(cfg.amplitude_mm > 0.0)) throw ConfigError("synth: amplitude must be positive");
  if (!(cfg.annulus_width_mm > 0.0)) throw ConfigError("synth: annulus width must be positive");
  if (!(cfg.annotation_density > 0.0 && cfg.annotation_density <= 1.0)) {
    throw ConfigError("synth: annotation density must lie in (0, 1]");
  }
  if (!(cfg.exit_fraction >= 0.0 && cfg.exit_fraction <= 1.0)) {
    throw ConfigError("synth: exit fraction must lie in [0, 1]");
  }
  if (!(cfg.speckle_strength >= 0.0)) throw ConfigError("synth: speckle strength must be >= 0");
  if (!(cfg.speckle_correlation >= 0.0 && cfg.speckle_correlation < 1.0)) {
    throw ConfigError("synth: speckle correlation must lie in [0, 1)");
  }
  if (!(cfg.systole_fraction > 0.0 && cfg.systole_fraction < 1.0)) {
    throw ConfigError("synth: systole fraction must lie in (0, 1)");
  }
}

std::vector<int> GroundTruth::annotated_indices() const {
  std::vector<int> out;
  for (int t = 0; t < num_frames(); ++t) {
    if (frames[t].annotated) out.push_back(t);
  }
  return out;
}

void validate(const GroundTruth& gt) {
  const int n = gt.num_frames();
  auto in_range = [n](int t) { return t >= 0 && t < n; };
  for (int t : gt.ed_frames) {
    if (!in_range(t)) throw AnnotationError("ED frame index out of range");
  }
  for (int t : gt.es_frames) {
    if (!in_range(t)) throw AnnotationError("ES frame index out of range");
  }
  for (int t = 0; t < n; ++t) {
    for (int k = 0; k < 2; ++k) {
      const auto& p = gt.frames[t].landmark(k);
      if (p && !contains(gt.geometry, *p)) {
        throw AnnotationError("landmark marked present outside the sector at frame " +
                              std::to_string(t));
      }
    }
  }
}

double systolic_waveform(double phase, double systole_fraction) {
  phase -= std::floor(phase);
  // Ease the phase with zero slope at both ends; composing with a raised
  // cosine then gives zero first and second derivatives at ED and ES.
  auto eased = [](double x) { return x - std::sin(2.0 * kPi * x) / (2.0 * kPi); };
  if (phase <= systole_fraction) {
    const double x = eased(phase / systole_fraction);
    return 0.5 * (1.0 - std::cos(kPi * x));
  }
  const double x = eased((phase - systole_fraction) / (1.0 - systole_fraction));
  return 0.5 * (1.0 + std::cos(kPi * x));
}

VideoMotion nominal_motion(const SynthConfig& cfg, const SectorGeometry& geom) {
  VideoMotion m;
  m.axis_dir = {std::cos(geom.axis_angle), std::sin(geom.axis_angle)};
  m.center = geom.apex + m.axis_dir * (0.7 * geom.r_max);
  m.half_width_px = 0.5 * cfg.annulus_width_mm / cfg.spacing_mm;
  m.tilt = 0.0;
  m.amplitude_px = cfg.amplitude_mm / cfg.spacing_mm;
  m.wobble_px = 0.05 * m.amplitude_px;
  m.phase_offset = 0.0;
  m.systole_fraction = cfg.systole_fraction;
  return m;
}

VideoMotion sample_motion(const SynthConfig& cfg, const SectorGeometry& geom,
                          std::mt19937_64& rng, bool exits) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  VideoMotion m = nominal_motion(cfg, geom);
  const Point lateral = lateral_of(m.axis_dir);
  const double depth = uniform(0.62, 0.74) * geom.r_max;
  m.half_width_px *= uniform(0.9, 1.1);
  m.tilt = uniform(-6.0, 6.0) * kPi / 180.0;
  m.phase_offset = unit(rng);
  m.center = geom.apex + m.axis_dir * depth + lateral * uniform(-3.0, 3.0);

  if (exits) {
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    // Shift laterally until the exiting landmark sits on the sector edge
    // half-way through systole (waveform value 0.5).
    const double mid_phase = 0.5 * m.systole_fraction;
    auto deviation_at = [&](double shift) {
      VideoMotion trial = m;
      trial.center = m.center + lateral * (side * shift);
      const LandmarkPair p = landmark_trajectory(trial, mid_phase);
      return angular_deviation(geom, side > 0 ? p.right : p.left);
    };
    double lo = 0.0;
    double hi = static_cast<double>(geom.width);
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (deviation_at(mid) < geom.half_angle ? lo : hi) = mid;
    }
    m.center = m.center + lateral * (side * 0.5 * (lo + hi));
  }
  return m;
}

LandmarkPair landmark_trajectory(const VideoMotion& m, double phase) {
  const Point lateral = lateral_of(m.axis_dir);
  const double w = systolic_waveform(phase, m.systole_fraction);
  const double wobble = m.wobble_px * std::sin(2.0 * kPi * phase);
  const Point c = m.center - m.axis_dir * (m.amplitude_px * w) + lateral * wobble;
  const Point u = lateral * std::cos(m.tilt) + m.axis_dir * std::sin(m.tilt);
  return {c - u * m.half_width_px, c + u * m.half_width_px};
}

LandmarkPair landmark_trajectory(const SynthConfig& cfg, double phase) {
  const SectorGeometry geom = SectorGeometry::fitted(cfg.height, cfg.width, cfg.half_angle_deg);
  return landmark_trajectory(nominal_motion(cfg, geom), phase);
}

SpeckleProcess::SpeckleProcess(int height, int width, double correlation, double blur_px)
    : height_(height), width_(width), correlation_(correlation) {
  if (blur_px > 0.0) {
    const int radius = static_cast<int>(std::ceil(3.0 * blur_px));
    kernel_.resize(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel_[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (blur_px * blur_px)));
      sum += kernel_[i + radius];
    }
    for (float& k : kernel_) k = static_cast<float>(k / sum);
  } else {
    kernel_ = {1.0f};
  }
  double sq = 0.0;
  for (float k : kernel_) sq += static_cast<double>(k) * k;
  // Separable blur of unit white noise has standard deviation sum(k^2).
  gain_ = 1.0 / sq;
  state_.assign(static_cast<std::size_t>(height) * width, 0.0f);
}

Image SpeckleProcess::next(std::mt19937_64& rng) {
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  const float keep = started_ ? static_cast<float>(correlation_) : 0.0f;
  const float fresh = started_ ? static_cast<float>(std::sqrt(1.0 - correlation_ * correlation_)) : 1.0f;
  for (float& s : state_) s = keep * s + fresh * gauss(rng);
  started_ = true;

  const int radius = static_cast<int>(kernel_.size() / 2);
  Image tmp(height_, width_);
  Image out(height_, width_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, width_ - 1);
        acc += kernel_[k + radius] * state_[static_cast<std::size_t>(y) * width_ + xx];
      }
      tmp.at(y, x) = acc;
    }
  }
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, height_ - 1);
        acc += kernel_[k + radius] * tmp.at(yy, x);
      }
      out.at(y, x) = static_cast<float>(acc * gain_);
    }
  }
  return out;
}

Image render_frame(const SynthConfig& cfg, const SectorGeometry& geom, const Mask& mask,
                   Point left, Point right, const Image& speckle) {
  const Point axis{std::cos(geom.axis_angle), std::sin(geom.axis_angle)};
  // Ventricular apex: the walls run from each landmark towards it.
  const Point lv_apex = geom.apex + axis * (geom.r_min + 0.15 * geom.r_max);
  const bool noisy = !speckle.data.empty() && cfg.speckle_strength > 0.0;

  Image frame(geom.height, geom.width);
  for (int y = 0; y < geom.height; ++y) {
    for (int x = 0; x < geom.width; ++x) {
      if (!mask.at(y, x)) continue;
      const Point p{x + 0.5, y + 0.5};
      const double dr = distance_to_segment(p, left, right);
      const double dw = std::min(distance_to_segment(p, left, lv_apex),
                                 distance_to_segment(p, right, lv_apex));
      const double dl2 = dot(p - left, p - left);
      const double dr2 = dot(p - right, p - right);
      double v = kBackground + kRidge * std::exp(-0.5 * dr * dr / (kRidgeSigma * kRidgeSigma)) +
                 kWall * std::exp(-0.5 * dw * dw / (kWallSigma * kWallSigma)) +
                 kBlob * (std::exp(-0.5 * dl2 / (kBlobSigma * kBlobSigma)) +
                          std::exp(-0.5 * dr2 / (kBlobSigma * kBlobSigma)));
      if (noisy) v *= 1.0 + cfg.speckle_strength * speckle.at(y, x);
      frame.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return frame;
}

std::vector<bool> exit_assignment(const SynthConfig& cfg, int n_videos, std::uint64_t seed) {
  std::vector<int> order(n_videos);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_exit = static_cast<int>(std::lround(cfg.exit_fraction * n_videos));
  std::vector<bool> exits(n_videos, false);
  for (int i = 0; i < n_exit; ++i) exits[order[i]] = true;
  return exits;
}

Sample generate_video(const SynthConfig& cfg, std::uint64_t seed, int index, bool exits) {
  validate(cfg);
  std::mt19937_64 rng = video_rng(seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const SectorGeometry geom = SectorGeometry::fitted(cfg.height, cfg.width, cfg.half_angle_deg);
  const Mask mask = sector_mask(geom);
  const VideoMotion motion = sample_motion(cfg, geom, rng, exits);
  SpeckleProcess speckle(cfg.height, cfg.width, cfg.speckle_correlation, cfg.speckle_blur_px);

  Sample s;
  // Spacing is stored as f32 on disk; keep the in-memory value identical.
  const double spacing = static_cast<float>(cfg.spacing_mm);
  s.video.spacing = spacing;
  s.video.geometry = geom;
  s.truth.spacing = spacing;
  s.truth.geometry = geom;

  const int T = cfg.frames;
  auto phase_of = [&](double t) { return motion.phase_offset + cfg.cycles * t / T; };
  for (int t = 0; t < T; ++t) {
    const LandmarkPair lm = landmark_trajectory(motion, phase_of(t));
    const Image noise = cfg.speckle_strength > 0.0 ? speckle.next(rng) : Image{};
    s.video.frames.push_back(render_frame(cfg, geom, mask, lm.left, lm.right, noise));
    FrameAnnotation a;
    if (contains(geom, lm.left)) a.left = lm.left;
    if (contains(geom, lm.right)) a.right = lm.right;
    s.truth.frames.push_back(a);
  }

  // ED/ES: waveform argmin/argmax per cycle, taken among the two frames
  // bracketing the continuous-time extremum.
  auto wave_at = [&](int t) { return systolic_waveform(phase_of(t), motion.systole_fraction); };
  const double first_cycle = std::floor(motion.phase_offset) - 1.0;
  const double last_cycle = std::ceil(phase_of(T)) + 1.0;
  for (double k = first_cycle; k <= last_cycle; k += 1.0) {
    for (int kind = 0; kind < 2; ++kind) {
      const double target_phase = k + (kind == 0 ? 0.0 : motion.systole_fraction);
      const double t_cont = (target_phase - motion.phase_offset) * T / cfg.cycles;
      const int lo = static_cast<int>(std::floor(t_cont));
      int best = -1;
      for (int cand : {lo, lo + 1}) {
        if (cand < 0 || cand >= T) continue;
        if (best < 0 || (kind == 0 ? wave_at(cand) < wave_at(best) : wave_at(cand) > wave_at(best))) {
          best = cand;
        }
      }
      // Only keep extrema whose bracketing pair is fully inside the video.
      if (best < 0 || lo < 0 || lo + 1 >= T) continue;
      (kind == 0 ? s.truth.ed_frames : s.truth.es_frames).push_back(best);
    }
  }
  std::sort(s.truth.ed_frames.begin(), s.truth.ed_frames.end());
  std::sort(s.truth.es_frames.begin(), s.truth.es_frames.end());

  for (int t = 0; t < T; ++t) {
    const bool key = std::binary_search(s.truth.ed_frames.begin(), s.truth.ed_frames.end(), t) ||
                     std::binary_search(s.truth.es_frames.begin(), s.truth.es_frames.end(), t);
    const double draw = unit(rng);
    s.truth.frames[t].annotated = key || cfg.annotation_density >= 1.0 || draw < cfg.annotation_density;
  }
  return s;
}

std::vector<Sample> generate_dataset(const SynthConfig& cfg, int n_videos, std::uint64_t seed) {
  validate(cfg);
  if (n_videos < 1) throw ConfigError("synth: n_videos must be >= 1");
  const std::vector<bool> exits = exit_assignment(cfg, n_videos, seed);
  std::vector<Sample> out;
  out.reserve(n_videos);
  for (int i = 0; i < n_videos; ++i) out.push_back(generate_video(cfg, seed, i, exits[i]));
  return out;
}

void write_video(const std::filesystem::path& path, const VideoClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("AVF1", 4);
  put_u32(out, static_cast<std::uint32_t>(clip.num_frames()));
  put_u32(out, static_cast<std::uint32_t>(clip.height()));
  put_u32(out, static_cast<std::uint32_t>(clip.width()));
  put_f32(out, static_cast<float>(clip.spacing));
  for (const Image& f : clip.frames) {
    for (float v : f.data) put_f32(out, v);
  }
  if (!out) throw Error("write failed for " + path.string());
}

VideoClip read_video(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "AVF1", 4) != 0) {
    throw FormatError(path.string() + ": not an AVF1 video");
  }
  const std::uint32_t T = get_u32(in);
  const std::uint32_t H = get_u32(in);
  const std::uint32_t W = get_u32(in);
  if (T == 0 || H == 0 || W == 0 || static_cast<std::uint64_t>(T) * H * W > (1ull << 31)) {
    throw FormatError(path.string() + ": implausible video dimensions");
  }
  VideoClip clip;
  clip.spacing = get_f32(in);
  clip.geometry = SectorGeometry::fitted(static_cast<int>(H), static_cast<int>(W));
  std::vector<unsigned char> raw(static_cast<std::size_t>(H) * W * 4);
  for (std::uint32_t t = 0; t < T; ++t) {
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError(path.string() + ": truncated frame data");
    }
    Image f(static_cast<int>(H), static_cast<int>(W));
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                              static_cast<std::uint32_t>(raw[4 * i + 1]) << 8 |
                              static_cast<std::uint32_t>(raw[4 * i + 2]) << 16 |
                              static_cast<std::uint32_t>(raw[4 * i + 3]) << 24;
      f.data[i] = std::bit_cast<float>(u);
    }
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt) {
  nlohmann::json frames = nlohmann::json::array();
  for (int t = 0; t < gt.num_frames(); ++t) {
    frames.push_back({{"index", t},
                      {"left", detail::point_or_null(gt.frames[t].left)},
                      {"right", detail::point_or_null(gt.frames[t].right)},
                      {"annotated", gt.frames[t].annotated}});
  }
  nlohmann::json j = {{"format", "annulus-annotation/1"},
                      {"spacing", gt.spacing},
                      {"geometry", detail::to_json(gt.geometry)},
                      {"ed", gt.ed_frames},
                      {"es", gt.es_frames},
                      {"frames", frames}};
  detail::write_json_file(path, j);
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  GroundTruth gt;
  try {
    gt.spacing = j.at("spacing").get<double>();
    gt.geometry = detail::geometry_from_json(j.at("geometry"));
    gt.ed_frames = j.at("ed").get<std::vector<int>>();
    gt.es_frames = j.at("es").get<std::vector<int>>();
    const auto& frames = j.at("frames");
    gt.frames.resize(frames.size());
    for (const auto& f : frames) {
      const int idx = f.at("index").get<int>();
      if (idx < 0 || idx >= static_cast<int>(frames.size())) {
        throw FormatError(path.string() + ": frame index out of range");
      }
      gt.frames[idx].left = detail::point_from_json(f.at("left"));
      gt.frames[idx].right = detail::point_from_json(f.at("right"));
      gt.frames[idx].annotated = f.at("annotated").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  validate(gt);
  return gt;
}

namespace {
std::string video_stem(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video_%04d", i);
  return buf;
}
}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = video_stem(static_cast<int>(i));
    write_video(dir / (stem + ".avf"), samples[i].video);
    write_ground_truth(dir / (stem + ".json"), samples[i].truth);
  }
}

Sample read_sample(const std::filesystem::path& video_path) {
  Sample s;
  s.video = read_video(video_path);
  std::filesystem::path gt_path = video_path;
  gt_path.replace_extension(".json");
  s.truth = read_ground_truth(gt_path);
  if (s.truth.num_frames() != s.video.num_frames()) {
    throw FormatError(gt_path.string() + ": frame count disagrees with the video");
  }
  s.video.geometry = s.truth.geometry;
  return s;
}

std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a dataset directory: " + dir.string());
  std::vector<std::filesystem::path> videos;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".avf") videos.push_back(entry.path());
  }
  std::sort(videos.begin(), videos.end());
  return videos;
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  std::vector<Sample> out;
  for (const auto& v : dataset_files(dir)) out.push_back(read_sample(v));
  return out;
}

}  // namespace annulus
