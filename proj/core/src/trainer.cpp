#include "annulus/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "annulus/errors.hpp"
#include "json_io.hpp"

namespace annulus {

namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static
/// interleaved assignment. Exceptions are rethrown for the lowest index.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <class T>
bool all_zero(const PredictionMaps<T>& g) {
  auto zero = [](const std::vector<T>& v) { return std::all_of(v.begin(), v.end(), [](T x) { return x == T(0); }); };
  return zero(g.cls_logits) && zero(g.reg) && zero(g.disp_fwd) && zero(g.disp_bwd);
}

std::string crop_name(CropMode c) { return c == CropMode::sector ? "sector" : "rectangle"; }

void check_dimensions(const ModelConfig& model, std::span<const Sample> data) {
  for (const Sample& s : data) {
    if (s.video.height() != model.input_size || s.video.width() != model.input_size) {
      throw ShapeError("video is " + std::to_string(s.video.height()) + "x" + std::to_string(s.video.width()) +
                       " but the model expects " + std::to_string(model.input_size) + "x" +
                       std::to_string(model.input_size));
    }
  }
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

}  // namespace

// Configuration ---------------------------------------------------------------

double learning_rate_at(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.lr_schedule == LrSchedule::constant || cfg.iterations <= 0) return cfg.learning_rate;
  const double progress = std::min(1.0, static_cast<double>(step) / cfg.iterations);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void validate(const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (cfg.batch_videos < 1) throw ConfigError("train: batch_videos must be >= 1");
  if (cfg.clip_length < 3) throw ConfigError("train: clip_length must be >= 3");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) throw ConfigError("train: beta must be >= 0");
  if (cfg.seeds.empty()) throw ConfigError("train: at least one seed is required");
  if (cfg.checkpoint_interval < 0) throw ConfigError("train: checkpoint_interval must be >= 0");
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must lie in [0, 1)");
  }
  if (cfg.calibration_tta < 1) throw ConfigError("train: calibration_tta must be >= 1");
  if (cfg.threads < 1) throw ConfigError("train: threads must be >= 1");
  validate(cfg.augmentation);
  validate(cfg.model);
}

void set_train_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "iterations") cfg.iterations = parse_int(key, value);
  else if (key == "batch_videos") cfg.batch_videos = parse_int(key, value);
  else if (key == "clip_length") cfg.clip_length = parse_int(key, value);
  else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
  else if (key == "lr_schedule") {
    if (value == "constant") cfg.lr_schedule = LrSchedule::constant;
    else if (value == "cosine") cfg.lr_schedule = LrSchedule::cosine;
    else throw ConfigError("config: lr_schedule must be 'constant' or 'cosine'");
  } else if (key == "temp_weighting") {
    if (value == "uniform") cfg.temp_weighting = TempWeighting::uniform;
    else if (value == "probability") cfg.temp_weighting = TempWeighting::probability;
    else throw ConfigError("config: temp_weighting must be 'uniform' or 'probability'");
  } else if (key == "beta") cfg.beta = parse_double(key, value);
  else if (key == "seeds") cfg.seeds = parse_u64_list(key, value);
  else if (key == "augment.max_zoom") cfg.augmentation.max_zoom = parse_double(key, value);
  else if (key == "augment.max_rotation_rad") cfg.augmentation.max_rotation = parse_double(key, value);
  else if (key == "augment.max_rotation_deg") {
    cfg.augmentation.max_rotation = parse_double(key, value) * std::numbers::pi / 180.0;
  } else if (key == "augment.probability") cfg.augmentation.probability = parse_double(key, value);
  else if (key == "augment.crop") {
    if (value == "sector") cfg.augmentation.crop = CropMode::sector;
    else if (value == "rectangle") cfg.augmentation.crop = CropMode::rectangle;
    else throw ConfigError("config: augment.crop must be 'sector' or 'rectangle'");
  } else if (key == "model.input_size") cfg.model.input_size = parse_int(key, value);
  else if (key == "model.n_downsamples") cfg.model.n_downsamples = parse_int(key, value);
  else if (key == "model.base_channels") cfg.model.base_channels = parse_int(key, value);
  else if (key == "model.groups") cfg.model.groups = parse_int(key, value);
  else if (key == "model.n_landmarks") cfg.model.n_landmarks = parse_int(key, value);
  else if (key == "train_dir") cfg.train_dir = value;
  else if (key == "val_dir") cfg.val_dir = value;
  else if (key == "test_dir") cfg.test_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "checkpoint_interval") cfg.checkpoint_interval = parse_int(key, value);
  else if (key == "validation_fraction") cfg.validation_fraction = parse_double(key, value);
  else if (key == "calibration_tta") cfg.calibration_tta = parse_int(key, value);
  else if (key == "threads") cfg.threads = parse_int(key, value);
  else throw ConfigError("train config: unknown key '" + key + "'");
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig cfg;
  for (const auto& [k, v] : kv) set_train_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

KeyValues train_config_values(const TrainConfig& cfg) {
  return {{"iterations", std::to_string(cfg.iterations)},
          {"batch_videos", std::to_string(cfg.batch_videos)},
          {"clip_length", std::to_string(cfg.clip_length)},
          {"learning_rate", format_double(cfg.learning_rate)},
          {"lr_schedule", cfg.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
          {"beta", format_double(cfg.beta)},
          {"temp_weighting", cfg.temp_weighting == TempWeighting::probability ? "probability" : "uniform"},
          {"seeds", join_seeds(cfg.seeds)},
          {"augment.max_zoom", format_double(cfg.augmentation.max_zoom)},
          {"augment.max_rotation_rad", format_double(cfg.augmentation.max_rotation)},
          {"augment.probability", format_double(cfg.augmentation.probability)},
          {"augment.crop", crop_name(cfg.augmentation.crop)},
          {"model.input_size", std::to_string(cfg.model.input_size)},
          {"model.n_downsamples", std::to_string(cfg.model.n_downsamples)},
          {"model.base_channels", std::to_string(cfg.model.base_channels)},
          {"model.groups", std::to_string(cfg.model.groups)},
          {"model.n_landmarks", std::to_string(cfg.model.n_landmarks)},
          {"train_dir", cfg.train_dir.string()},
          {"val_dir", cfg.val_dir.string()},
          {"test_dir", cfg.test_dir.string()},
          {"out_dir", cfg.out_dir.string()},
          {"checkpoint_interval", std::to_string(cfg.checkpoint_interval)},
          {"validation_fraction", format_double(cfg.validation_fraction)},
          {"calibration_tta", std::to_string(cfg.calibration_tta)},
          {"threads", std::to_string(cfg.threads)}};
}

// Clips and optimizer ----------------------------------------------------------

Clip sample_clip(const VideoClip& video, const GroundTruth& gt, int clip_length, std::mt19937_64& rng) {
  if (clip_length < 1) throw ConfigError("sample_clip: clip_length must be >= 1");
  if (video.num_frames() != gt.num_frames()) throw ShapeError("sample_clip: video and annotation lengths differ");
  const std::vector<int> annotated = gt.annotated_indices();
  if (annotated.empty()) throw SamplingError("sample_clip: video has no annotated frame");
  const int T = video.num_frames();

  std::uniform_int_distribution<std::size_t> pick(0, annotated.size() - 1);
  Clip c;
  c.anchor = annotated[pick(rng)];
  const int len = std::min(clip_length, T);
  const int centered = c.anchor - clip_length / 2;
  c.begin = std::clamp(centered, 0, T - len);
  c.end = c.begin + len;
  c.clamped = c.begin != centered || len != clip_length;

  c.sample.video.spacing = video.spacing;
  c.sample.video.geometry = video.geometry;
  c.sample.video.frames.assign(video.frames.begin() + c.begin, video.frames.begin() + c.end);
  c.sample.truth.spacing = gt.spacing;
  c.sample.truth.geometry = gt.geometry;
  c.sample.truth.frames.assign(gt.frames.begin() + c.begin, gt.frames.begin() + c.end);
  for (int e : gt.ed_frames) {
    if (e >= c.begin && e < c.end) c.sample.truth.ed_frames.push_back(e - c.begin);
  }
  for (int e : gt.es_frames) {
    if (e >= c.begin && e < c.end) c.sample.truth.es_frames.push_back(e - c.begin);
  }
  return c;
}

AdamState AdamState::for_params(const ParameterSet<float>& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, AdamState& state, double lr) {
  const std::size_t n = params.tensors.size();
  if (grads.tensors.size() != n || state.m.tensors.size() != n || state.v.tensors.size() != n) {
    throw ShapeError("adam_step: parameter, gradient and moment layouts differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = grads.tensors[i].data;
    if (g.size() != params.tensors[i].size() || state.m.tensors[i].size() != g.size() ||
        state.v.tensors[i].size() != g.size()) {
      throw ShapeError("adam_step: size mismatch in " + params.tensors[i].name);
    }
    for (float x : g) {
      if (!std::isfinite(x)) {
        throw NumericError(params.tensors[i].name, "non-finite gradient in " + params.tensors[i].name);
      }
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = params.tensors[i].data;
    auto& m = state.m.tensors[i].data;
    auto& v = state.v.tensors[i].data;
    const auto& g = grads.tensors[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * static_cast<double>(g[j]) * g[j];
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] = static_cast<float>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps));
    }
  }
}

// Loss over a batch --------------------------------------------------------------

TargetMaps frame_targets(const FrameAnnotation& a, int n_landmarks, const PatchGrid& grid) {
  std::vector<std::optional<Point>> points;
  for (int k = 0; k < n_landmarks; ++k) points.push_back(k < 2 ? a.landmark(k) : std::nullopt);
  return build_targets(points, grid);
}

template <class T>
LossBreakdown batch_loss(const Network<T>& net, const ParameterSet<T>& params, std::span<const Sample> clips,
                         const LossWeights& weights, ParameterSet<T>* grads, int threads) {
  const int n = static_cast<int>(clips.size());
  const int L = net.config().n_landmarks;
  const PatchGrid grid = net.grid();

  struct Work {
    std::vector<PredictionMaps<T>> preds;
    std::vector<ForwardCache<T>> caches;
    std::vector<std::optional<TargetMaps>> targets;
    std::vector<PredictionMaps<T>> grad_out;
  };
  std::vector<Work> work(n);

  parallel_for(n, threads, [&](int v) {
    const Sample& s = clips[v];
    if (s.video.num_frames() != s.truth.num_frames()) throw ShapeError("batch_loss: clip/annotation length mismatch");
    Work& w = work[v];
    const int T_all = s.video.num_frames();
    w.preds.resize(T_all);
    w.targets.resize(T_all);
    if (grads) w.caches.resize(T_all);
    for (int t = 0; t < T_all; ++t) {
      const bool annotated = s.truth.frames[t].annotated;
      if (annotated) w.targets[t] = frame_targets(s.truth.frames[t], L, grid);
      // Without the consistency term only annotated frames get gradient.
      const bool needs_cache = grads && (annotated || weights.beta > 0.0);
      const std::vector<T> window = make_window<T>(s.video.frames, t);
      w.preds[t] = net.forward(params, window, needs_cache ? &w.caches[t] : nullptr);
    }
    if (grads) {
      w.grad_out.assign(T_all, PredictionMaps<T>::zeros(L, grid));
    }
  });

  std::vector<VideoLossInput<T>> batch(n);
  for (int v = 0; v < n; ++v) {
    Work& w = work[v];
    for (std::size_t t = 0; t < w.preds.size(); ++t) {
      FrameLossInput<T> f;
      f.pred = &w.preds[t];
      f.targets = w.targets[t] ? &*w.targets[t] : nullptr;
      f.grad = grads ? &w.grad_out[t] : nullptr;
      batch[v].push_back(f);
    }
  }
  const LossBreakdown loss = total_loss<T>(batch, weights);
  if (!grads) return loss;

  std::vector<ParameterSet<T>> partial(n);
  parallel_for(n, threads, [&](int v) {
    Work& w = work[v];
    partial[v] = grads->zeros_like();
    for (std::size_t t = 0; t < w.preds.size(); ++t) {
      if (w.caches[t].activations.empty() || all_zero(w.grad_out[t])) continue;
      net.backward(params, w.caches[t], w.grad_out[t], partial[v]);
      w.caches[t] = ForwardCache<T>{};
    }
  });
  for (int v = 0; v < n; ++v) grads->accumulate(partial[v]);
  return loss;
}

template LossBreakdown batch_loss<float>(const Network<float>&, const ParameterSet<float>&, std::span<const Sample>,
                                         const LossWeights&, ParameterSet<float>*, int);
template LossBreakdown batch_loss<double>(const Network<double>&, const ParameterSet<double>&,
                                          std::span<const Sample>, const LossWeights&, ParameterSet<double>*, int);

// Training -------------------------------------------------------------------------

Checkpoint train(const TrainConfig& cfg, std::span<const Sample> data, const TrainRun& run) {
  validate(cfg);
  check_dimensions(cfg.model, data);
  const Network<float> net(cfg.model);

  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    if (!data[i].truth.annotated_indices().empty()) eligible.push_back(i);
  }
  if (eligible.empty()) throw SamplingError("train: no training video has annotated frames");

  std::mt19937_64 rng(run.seed);
  Checkpoint ck;
  ck.config = cfg.model;
  AdamState adam;
  if (run.resume) {
    if (!(run.resume->config == cfg.model)) throw ConfigError("train: resume checkpoint has a different model config");
    ck = *run.resume;
    std::istringstream(ck.rng_state) >> rng;
    adam = AdamState::for_params(ck.params);
    if (!ck.adam_m.tensors.empty()) {
      adam.m = ck.adam_m;
      adam.v = ck.adam_v;
    }
    adam.step = ck.step;
  } else {
    ck.params = net.init(rng);
    adam = AdamState::for_params(ck.params);
  }

  auto snapshot = [&] {
    std::ostringstream os;
    os << rng;
    ck.rng_state = os.str();
    ck.step = adam.step;
    ck.adam_m = adam.m;
    ck.adam_v = adam.v;
  };

  std::ofstream log;
  if (!run.log_path.empty()) {
    const bool append = run.resume && std::filesystem::exists(run.log_path);
    log.open(run.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot write training log " + run.log_path.string());
    if (!append) log << "step,cls,reg,temp,total,wall_ms\n";
  }

  const LossWeights weights{cfg.beta, cfg.temp_weighting};
  std::uniform_int_distribution<std::size_t> pick_video(0, eligible.size() - 1);
  while (adam.step < static_cast<std::uint64_t>(cfg.iterations)) {
    const std::uint64_t iteration = adam.step;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Sample> clips;
    for (int b = 0; b < cfg.batch_videos; ++b) {
      const Sample& src = data[eligible[pick_video(rng)]];
      Clip c = sample_clip(src.video, src.truth, cfg.clip_length, rng);
      const SimilarityTransform tf = sample_transform(cfg.augmentation, c.sample.video.geometry.apex, rng);
      clips.push_back(augment_clip(c.sample.video, c.sample.truth, tf, cfg.augmentation.crop));
    }

    ParameterSet<float> grads = ck.params.zeros_like();
    LossBreakdown loss;
    try {
      loss = batch_loss<float>(net, ck.params, clips, weights, &grads, cfg.threads);
      adam_step(ck.params, grads, adam, learning_rate_at(cfg, iteration));
    } catch (const NumericError& e) {
      throw NumericError(e.term(), "iteration " + std::to_string(iteration) + ": " + e.what());
    }

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
      char line[256];
      std::snprintf(line, sizeof line, "%llu,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                    static_cast<unsigned long long>(iteration), loss.cls, loss.reg, loss.temp, loss.total, wall_ms);
      log << line << std::flush;
    }
    if (run.on_step) run.on_step(iteration, loss);
    if (cfg.checkpoint_interval > 0 && adam.step % cfg.checkpoint_interval == 0 && !run.checkpoint_path.empty() &&
        adam.step < static_cast<std::uint64_t>(cfg.iterations)) {
      snapshot();
      save_checkpoint(run.checkpoint_path, ck);
    }
  }
  snapshot();
  if (!run.checkpoint_path.empty()) save_checkpoint(run.checkpoint_path, ck);
  return ck;
}

// Evaluation ---------------------------------------------------------------------------

std::pair<std::vector<Sample>, std::vector<Sample>> holdout_split(std::vector<Sample> data, double fraction) {
  const std::size_t n = data.size();
  std::size_t held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) held = std::max<std::size_t>(held, 1);
  if (held >= n) held = n >= 2 ? n - 1 : 0;
  std::vector<Sample> val(std::make_move_iterator(data.end() - held), std::make_move_iterator(data.end()));
  data.resize(n - held);
  return {std::move(data), std::move(val)};
}

std::vector<Sample> augmented_copies(std::span<const Sample> data, int k, const FovAugmentConfig& aug,
                                     std::uint64_t seed) {
  if (k < 0) throw ConfigError("augmented_copies: k must be >= 0");
  if (k == 0) return {data.begin(), data.end()};
  validate(aug);
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(data.size() * k);
  for (const Sample& s : data) {
    for (int j = 0; j < k; ++j) {
      const SimilarityTransform tf = sample_transform(aug, s.video.geometry.apex, rng);
      out.push_back(augment_clip(s.video, s.truth, tf, aug.crop));
    }
  }
  return out;
}

Trajectory infer_trajectory(const Network<float>& net, const ParameterSet<float>& params, const VideoClip& video,
                            double tau) {
  Trajectory traj;
  traj.spacing = video.spacing;
  traj.frames.resize(video.num_frames());
  const int L = std::min(net.config().n_landmarks, 2);
  for (int t = 0; t < video.num_frames(); ++t) {
    const PredictionMaps<float> maps = net.forward(params, make_window<float>(video.frames, t));
    for (int k = 0; k < L; ++k) {
      const Detection d = detect(maps, k, tau);
      traj.frames[t].landmark(k) = {d.point, d.max_prob};
    }
  }
  return traj;
}

EvalResult evaluate(const Checkpoint& ckpt, std::span<const Sample> data, double tau,
                    std::span<const std::string> names, bool oracle, int threads) {
  if (!oracle) check_dimensions(ckpt.config, data);
  const Network<float> net(ckpt.config);
  EvalResult out;
  out.trajectories.resize(data.size());
  parallel_for(static_cast<int>(data.size()), threads, [&](int v) {
    const Sample& s = data[v];
    Trajectory traj = oracle ? trajectory_from_truth(s.truth) : infer_trajectory(net, ckpt.params, s.video, tau);
    traj.spacing = s.truth.spacing;
    traj.ed_frames = s.truth.ed_frames;
    traj.es_frames = s.truth.es_frames;
    out.trajectories[v] = std::move(traj);
  });
  for (std::size_t v = 0; v < data.size(); ++v) {
    out.names.push_back(v < names.size() ? names[v] : "video_" + std::to_string(v));
  }
  std::vector<GroundTruth> truths;
  for (const Sample& s : data) truths.push_back(s.truth);
  out.report = evaluate_trajectories(out.trajectories, truths, out.names);
  return out;
}

Threshold calibrate_threshold(const Checkpoint& ckpt, std::span<const Sample> data, int k,
                              const FovAugmentConfig& aug, std::uint64_t seed, int threads) {
  if (k < 1) throw ConfigError("calibrate: at least one augmented copy per video is required");
  if (data.empty()) throw CalibrationError("calibrate: validation set is empty");
  const std::vector<Sample> copies = augmented_copies(data, k, aug, seed);
  const EvalResult r = evaluate(ckpt, copies, 0.5, {}, false, threads);
  return calibrate(r.report.presence_scores, r.report.presence_labels);
}

void write_threshold(const std::filesystem::path& path, const Threshold& t) {
  detail::write_json_file(path, {{"format", "annulus-threshold/1"}, {"tau", t.tau}, {"accuracy", t.accuracy}});
}

Threshold read_threshold(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  try {
    return {j.at("tau").get<double>(), j.at("accuracy").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<SeedResult> train_seeds(const TrainConfig& cfg, const std::filesystem::path& resume) {
  validate(cfg);
  if (!resume.empty() && cfg.seeds.size() != 1) throw ConfigError("train: resuming requires exactly one seed");
  std::vector<Sample> train_set = read_dataset(cfg.train_dir);
  std::vector<Sample> val_set;
  if (!cfg.val_dir.empty()) {
    val_set = read_dataset(cfg.val_dir);
  } else {
    std::tie(train_set, val_set) = holdout_split(std::move(train_set), cfg.validation_fraction);
  }
  std::vector<Sample> test_set;
  if (!cfg.test_dir.empty()) test_set = read_dataset(cfg.test_dir);

  std::filesystem::create_directories(cfg.out_dir);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    SeedResult r;
    r.seed = seed;
    const std::filesystem::path dir = cfg.out_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    r.checkpoint_path = dir / "model.ckpt";
    r.log_path = dir / "train_log.csv";
    TrainRun run;
    run.seed = seed;
    run.checkpoint_path = r.checkpoint_path;
    run.log_path = r.log_path;
    if (!resume.empty()) run.resume = load_checkpoint(resume, cfg.model);
    const Checkpoint ck = train(cfg, train_set, run);
    if (!val_set.empty()) {
      r.threshold = calibrate_threshold(ck, val_set, cfg.calibration_tta, cfg.augmentation, seed, cfg.threads);
    }
    write_threshold(dir / "threshold.json", r.threshold);
    if (!test_set.empty()) {
      EvalReport report = evaluate(ck, test_set, r.threshold.tau, {}, false, cfg.threads).report;
      report.seed = seed;
      write_report(dir / "report.json", report);
      r.report = std::move(report);
    }
    results.push_back(std::move(r));
  }

  std::ofstream summary(cfg.out_dir / "summary.csv");
  summary << report_csv_header() << ",tau,calibration_accuracy\n";
  for (const SeedResult& r : results) {
    EvalReport row = r.report.value_or(EvalReport{});
    row.seed = r.seed;
    summary << report_csv_row(row) << "," << format_double(r.threshold.tau) << ","
            << format_double(r.threshold.accuracy) << "\n";
  }
  return results;
}

}  // namespace annulus
