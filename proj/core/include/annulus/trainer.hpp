#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "annulus/augment.hpp"
#include "annulus/checkpoint.hpp"
#include "annulus/config.hpp"
#include "annulus/decode.hpp"
#include "annulus/loss.hpp"
#include "annulus/metrics.hpp"
#include "annulus/model.hpp"

namespace annulus {

/// Learning-rate schedule over the configured iterations.
enum class LrSchedule {
  constant,
  /// Half-cosine decay from learning_rate to zero at `iterations`.
  cosine,
};

struct TrainConfig {
  int iterations = 2000;
  int batch_videos = 4;
  int clip_length = 30;
  double learning_rate = 1e-4;
  LrSchedule lr_schedule = LrSchedule::constant;
  double beta = 0.5;
  TempWeighting temp_weighting = TempWeighting::uniform;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  FovAugmentConfig augmentation;
  ModelConfig model;
  std::filesystem::path train_dir;
  std::filesystem::path val_dir;   // empty: hold out validation_fraction of train_dir
  std::filesystem::path test_dir;  // empty: no per-seed test report
  std::filesystem::path out_dir = "runs";
  /// Iterations between intermediate checkpoints; 0 writes only the final one.
  int checkpoint_interval = 0;
  double validation_fraction = 0.1;
  int calibration_tta = 4;
  int threads = 1;
};

void validate(const TrainConfig& cfg);

/// Sets one field by name (keys as in train_config_values); unknown keys and
/// malformed values are a ConfigError.
void set_train_value(TrainConfig& cfg, const std::string& key, const std::string& value);
TrainConfig train_config_from(const KeyValues& kv);
KeyValues train_config_values(const TrainConfig& cfg);

/// Learning rate used for the update that completes step `step` + 1.
double learning_rate_at(const TrainConfig& cfg, std::uint64_t step);

/// A training clip cut from a video. Frame indices are [begin, end).
struct Clip {
  Sample sample;
  int begin = 0;
  int end = 0;
  int anchor = 0;        // the sampled annotated frame, in video coordinates
  bool clamped = false;  // the centered window was shifted to fit the video
};

/// Picks a random annotated frame a and cuts
/// [a - clip_length/2, a - clip_length/2 + clip_length), shifted to fit the
/// video (the whole video when shorter). Throws SamplingError when the video
/// has no annotated frame.
Clip sample_clip(const VideoClip& video, const GroundTruth& gt, int clip_length, std::mt19937_64& rng);

/// Adam moments share the parameter layout; `step` counts completed updates.
struct AdamState {
  ParameterSet<float> m;
  ParameterSet<float> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParameterSet<float>& params);
};

/// One bias-corrected Adam update. Throws NumericError naming the first
/// tensor with a non-finite gradient (nothing is modified in that case).
void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, AdamState& state, double lr);

/// Target maps for the first `n_landmarks` landmarks of an annotation.
TargetMaps frame_targets(const FrameAnnotation& a, int n_landmarks, const PatchGrid& grid);

/// Forward pass over every frame of every clip, total_loss with annotated
/// frames as T_A, and (if `grads` is given) backward accumulation into
/// `grads`. Videos run on up to `threads` workers; gradients are summed in
/// clip order so the result does not depend on the thread count.
template <class T>
LossBreakdown batch_loss(const Network<T>& net, const ParameterSet<T>& params, std::span<const Sample> clips,
                         const LossWeights& weights, ParameterSet<T>* grads = nullptr, int threads = 1);

struct TrainRun {
  std::uint64_t seed = 1;
  std::filesystem::path log_path;         // CSV; empty disables logging
  std::filesystem::path checkpoint_path;  // empty disables writing
  std::optional<Checkpoint> resume;
  std::function<void(std::uint64_t step, const LossBreakdown&)> on_step;
};

/// Runs iterations until the step counter reaches cfg.iterations. Each
/// iteration samples batch_videos clips, applies one augmentation per clip,
/// evaluates batch_loss and takes one Adam step. Deterministic given the
/// seed when threads == 1. A non-finite loss or gradient throws
/// NumericError mentioning the iteration.
Checkpoint train(const TrainConfig& cfg, std::span<const Sample> data, const TrainRun& run);

/// Splits off the last ceil(fraction * n) videos (at least one when n >= 2).
std::pair<std::vector<Sample>, std::vector<Sample>> holdout_split(std::vector<Sample> data, double fraction);

/// K randomly augmented copies of each video (the originals when K == 0).
std::vector<Sample> augmented_copies(std::span<const Sample> data, int k, const FovAugmentConfig& aug,
                                     std::uint64_t seed);

/// Per-frame detections on a full video (3-frame windows, edge duplication).
Trajectory infer_trajectory(const Network<float>& net, const ParameterSet<float>& params, const VideoClip& video,
                            double tau);

struct EvalResult {
  EvalReport report;
  std::vector<Trajectory> trajectories;
  std::vector<std::string> names;
};

/// Runs inference on every video and scores it. With `oracle` set the
/// ground truth is used as the prediction (for pipeline tests).
EvalResult evaluate(const Checkpoint& ckpt, std::span<const Sample> data, double tau,
                    std::span<const std::string> names = {}, bool oracle = false, int threads = 1);

/// Threshold maximizing presence accuracy on K augmented copies of `data`.
Threshold calibrate_threshold(const Checkpoint& ckpt, std::span<const Sample> data, int k,
                              const FovAugmentConfig& aug, std::uint64_t seed, int threads = 1);

void write_threshold(const std::filesystem::path& path, const Threshold& t);
Threshold read_threshold(const std::filesystem::path& path);

struct SeedResult {
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  Threshold threshold;
  std::optional<EvalReport> report;
};

/// Trains one model per seed under cfg.out_dir/seed_<s>/, calibrates tau on
/// the validation set and, with a test set, writes report.json. A summary
/// CSV with one row per seed goes to cfg.out_dir/summary.csv. A `resume`
/// checkpoint continues the (single) seed's run up to cfg.iterations.
std::vector<SeedResult> train_seeds(const TrainConfig& cfg, const std::filesystem::path& resume = {});

}  // namespace annulus
