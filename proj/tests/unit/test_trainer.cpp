#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "annulus/errors.hpp"
#include "annulus/trainer.hpp"
#include "test_helpers.hpp"

namespace annulus {
namespace {

Sample blank_video(int frames, std::vector<int> annotated) {
  Sample s;
  s.video.frames.assign(frames, Image(4, 4));
  s.truth.frames.resize(frames);
  for (int t : annotated) s.truth.frames[t].annotated = true;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.batch_videos = 2;
  cfg.clip_length = 4;
  cfg.learning_rate = 1e-3;
  cfg.seeds = {1};
  cfg.model.input_size = 128;
  cfg.model.base_channels = 4;
  cfg.model.groups = 4;
  return cfg;
}

std::vector<Sample> tiny_data(int videos = 3, int frames = 12) {
  SynthConfig cfg = testing::small_synth(frames);
  cfg.annotation_density = 0.3;
  return generate_dataset(cfg, videos, 77);
}

// ---- sample_clip ----------------------------------------------------------------

TEST(SampleClip, CentredWindow) {
  const Sample s = blank_video(100, {50});
  std::mt19937_64 rng(1);
  const Clip c = sample_clip(s.video, s.truth, 30, rng);
  EXPECT_EQ(c.anchor, 50);
  EXPECT_EQ(c.begin, 35);
  EXPECT_EQ(c.end, 65);
  EXPECT_FALSE(c.clamped);
  EXPECT_EQ(c.sample.video.num_frames(), 30);
  EXPECT_TRUE(c.sample.truth.frames[15].annotated);
}

TEST(SampleClip, ClampedAtVideoStart) {
  const Sample s = blank_video(100, {5});
  std::mt19937_64 rng(1);
  const Clip c = sample_clip(s.video, s.truth, 30, rng);
  EXPECT_EQ(c.begin, 0);
  EXPECT_EQ(c.end, 30);
  EXPECT_TRUE(c.clamped);
  EXPECT_TRUE(c.sample.truth.frames[5].annotated);
}

TEST(SampleClip, ShortVideoIsTakenWhole) {
  const Sample s = blank_video(10, {9});
  std::mt19937_64 rng(1);
  const Clip c = sample_clip(s.video, s.truth, 30, rng);
  EXPECT_EQ(c.begin, 0);
  EXPECT_EQ(c.end, 10);
  EXPECT_TRUE(c.clamped);
}

TEST(SampleClip, DeterministicAndRemapsEdEs) {
  Sample s = blank_video(60, {10, 20, 40});
  s.truth.ed_frames = {10, 40};
  s.truth.es_frames = {20};
  std::mt19937_64 a(5), b(5);
  const Clip ca = sample_clip(s.video, s.truth, 16, a);
  const Clip cb = sample_clip(s.video, s.truth, 16, b);
  EXPECT_EQ(ca.begin, cb.begin);
  EXPECT_EQ(ca.anchor, cb.anchor);
  for (int e : ca.sample.truth.ed_frames) EXPECT_TRUE(s.truth.frames[e + ca.begin].annotated);
  for (int e : ca.sample.truth.ed_frames) EXPECT_LT(e, 16);
}

TEST(SampleClip, NoAnnotationIsSamplingError) {
  const Sample s = blank_video(20, {});
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_clip(s.video, s.truth, 8, rng), SamplingError);
}

// ---- adam_step ------------------------------------------------------------------

ParameterSet<float> scalar(float v) { return {{{"w", {1}, {v}}}}; }

TEST(AdamStep, ZeroGradientLeavesParameters) {
  ParameterSet<float> p = scalar(0.7f);
  AdamState s = AdamState::for_params(p);
  adam_step(p, scalar(0.0f), s, 0.1);
  EXPECT_EQ(p.tensors[0].data[0], 0.7f);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  ParameterSet<float> p = scalar(0.0f);
  AdamState s = AdamState::for_params(p);
  adam_step(p, scalar(1.0f), s, 0.1);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps).
  EXPECT_NEAR(p.tensors[0].data[0], -0.1 / (1.0 + 1e-8), 1e-7);
}

TEST(AdamStep, MatchesClosedFormOverSeveralSteps) {
  ParameterSet<float> p = scalar(1.0f);
  AdamState s = AdamState::for_params(p);
  double x = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -0.25, 2.0, 1.0};
  for (int k = 0; k < 4; ++k) {
    adam_step(p, scalar(static_cast<float>(grads[k])), s, 0.01);
    m = 0.9 * m + 0.1 * grads[k];
    v = 0.999 * v + 0.001 * grads[k] * grads[k];
    x -= 0.01 * (m / (1 - std::pow(0.9, k + 1))) / (std::sqrt(v / (1 - std::pow(0.999, k + 1))) + 1e-8);
  }
  EXPECT_NEAR(p.tensors[0].data[0], x, 1e-6);
}

TEST(AdamStep, IdenticalCallsIdenticalResults) {
  ParameterSet<float> p1 = scalar(0.3f), p2 = scalar(0.3f);
  AdamState s1 = AdamState::for_params(p1), s2 = AdamState::for_params(p2);
  adam_step(p1, scalar(0.2f), s1, 0.05);
  adam_step(p2, scalar(0.2f), s2, 0.05);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(s1.m, s2.m);
}

TEST(AdamStep, NonFiniteGradientNamesTensorAndChangesNothing) {
  ParameterSet<float> p = scalar(0.3f);
  AdamState s = AdamState::for_params(p);
  try {
    adam_step(p, scalar(std::nanf("")), s, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.term(), "w");
  }
  EXPECT_EQ(p.tensors[0].data[0], 0.3f);
  EXPECT_EQ(s.step, 0u);
}

// ---- config ---------------------------------------------------------------------

TEST(TrainConfig, KeyValueRoundTrip) {
  TrainConfig cfg = tiny_config();
  cfg.beta = 0.25;
  cfg.augmentation.crop = CropMode::rectangle;
  cfg.seeds = {4, 9};
  cfg.temp_weighting = TempWeighting::probability;
  cfg.lr_schedule = LrSchedule::cosine;
  const TrainConfig back = train_config_from(train_config_values(cfg));
  EXPECT_EQ(back.beta, 0.25);
  EXPECT_EQ(back.seeds, cfg.seeds);
  EXPECT_EQ(back.temp_weighting, TempWeighting::probability);
  EXPECT_EQ(back.lr_schedule, LrSchedule::cosine);
  EXPECT_EQ(back.augmentation.crop, CropMode::rectangle);
  EXPECT_EQ(back.model, cfg.model);
  EXPECT_EQ(back.augmentation.max_rotation, cfg.augmentation.max_rotation);
}

TEST(TrainConfig, CosineScheduleEndpoints) {
  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.learning_rate = 1e-3;
  EXPECT_EQ(learning_rate_at(cfg, 50), 1e-3);
  cfg.lr_schedule = LrSchedule::cosine;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 0), 1e-3);
  EXPECT_NEAR(learning_rate_at(cfg, 50), 5e-4, 1e-15);
  EXPECT_NEAR(learning_rate_at(cfg, 100), 0.0, 1e-18);
}

TEST(TrainConfig, RotationAcceptsDegrees) {
  TrainConfig cfg;
  set_train_value(cfg, "augment.max_rotation_deg", "30");
  EXPECT_NEAR(cfg.augmentation.max_rotation, std::numbers::pi / 6.0, 1e-15);
}

TEST(TrainConfig, BadValuesAreConfigErrors) {
  TrainConfig cfg;
  EXPECT_THROW(set_train_value(cfg, "bogus", "1"), ConfigError);
  EXPECT_THROW(set_train_value(cfg, "iterations", "ten"), ConfigError);
  EXPECT_THROW(set_train_value(cfg, "augment.crop", "circle"), ConfigError);
  cfg.clip_length = 2;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  EXPECT_THROW(parse_key_values("iterations 3"), ConfigError);
  EXPECT_THROW(parse_key_values("a = 1\na = 2"), ConfigError);
}

// ---- batch_loss -----------------------------------------------------------------

TEST(BatchLoss, ThreadCountDoesNotChangeGradients) {
  const TrainConfig cfg = tiny_config();
  const Network<float> net(cfg.model);
  std::mt19937_64 rng(3);
  const auto params = net.init(rng);
  std::vector<Sample> clips;
  for (const Sample& s : tiny_data(3, 6)) clips.push_back(s);
  ParameterSet<float> g1 = params.zeros_like(), g3 = params.zeros_like();
  const auto l1 = batch_loss<float>(net, params, clips, {0.5}, &g1, 1);
  const auto l3 = batch_loss<float>(net, params, clips, {0.5}, &g3, 3);
  EXPECT_EQ(l1.total, l3.total);
  EXPECT_EQ(g1, g3);
}

TEST(BatchLoss, BetaZeroKeepsLocalisationTermsIdentical) {
  const TrainConfig cfg = tiny_config();
  const Network<float> net(cfg.model);
  std::mt19937_64 rng(3);
  const auto params = net.init(rng);
  const auto clips = tiny_data(2, 6);
  const auto a = batch_loss<float>(net, params, clips, {0.0});
  const auto b = batch_loss<float>(net, params, clips, {0.5});
  EXPECT_EQ(a.cls, b.cls);
  EXPECT_EQ(a.reg, b.reg);
  EXPECT_EQ(a.total, a.cls + a.reg);
}

// ---- train ----------------------------------------------------------------------

TEST(Train, ZeroIterationsReturnsInitialisation) {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 0;
  const auto data = tiny_data();
  TrainRun run;
  run.seed = 5;
  const Checkpoint ck = train(cfg, data, run);
  std::mt19937_64 rng(5);
  EXPECT_EQ(ck.params, Network<float>(cfg.model).init(rng));
  EXPECT_EQ(ck.step, 0u);
}

TEST(Train, SerialRunsAreBitIdentical) {
  const TrainConfig cfg = tiny_config();
  const auto data = tiny_data();
  TrainRun run;
  run.seed = 2;
  EXPECT_EQ(train(cfg, data, run), train(cfg, data, run));
}

TEST(Train, ResumeContinuesTheSameTrajectory) {
  testing::TempDir dir("resume");
  TrainConfig cfg = tiny_config();
  cfg.iterations = 4;
  const auto data = tiny_data();
  TrainRun run;
  run.seed = 8;
  const Checkpoint full = train(cfg, data, run);

  TrainConfig half = cfg;
  half.iterations = 2;
  run.checkpoint_path = dir / "half.ckpt";
  train(half, data, run);
  TrainRun again;
  again.seed = 8;
  again.resume = load_checkpoint(dir / "half.ckpt", cfg.model);
  const Checkpoint resumed = train(cfg, data, again);
  EXPECT_EQ(resumed.step, 4u);
  EXPECT_EQ(resumed.params, full.params);
}

TEST(Train, LogHasOneRowPerStep) {
  testing::TempDir dir("log");
  const TrainConfig cfg = tiny_config();
  TrainRun run;
  run.log_path = dir / "log.csv";
  int calls = 0;
  run.on_step = [&](std::uint64_t, const LossBreakdown& l) {
    ++calls;
    EXPECT_TRUE(std::isfinite(l.total));
  };
  train(cfg, tiny_data(), run);
  EXPECT_EQ(calls, cfg.iterations);
  const std::string log = testing::slurp(dir / "log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "step,cls,reg,temp,total,wall_ms");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), cfg.iterations + 1);
}

TEST(Train, NoAnnotatedVideoIsSamplingError) {
  auto data = tiny_data(1);
  for (auto& f : data[0].truth.frames) f.annotated = false;
  data[0].truth.ed_frames.clear();
  data[0].truth.es_frames.clear();
  EXPECT_THROW(train(tiny_config(), data, TrainRun{}), SamplingError);
}

TEST(Train, MismatchedInputSizeIsRejected) {
  TrainConfig cfg = tiny_config();
  cfg.model.input_size = 64;
  cfg.model.n_downsamples = 3;
  EXPECT_THROW(train(cfg, tiny_data(), TrainRun{}), ShapeError);
}

// ---- evaluation -----------------------------------------------------------------

TEST(HoldoutSplit, TakesTheLastVideos) {
  std::vector<Sample> data(10);
  for (int i = 0; i < 10; ++i) data[i].video.spacing = i;
  auto [train_part, val] = holdout_split(data, 0.1);
  ASSERT_EQ(val.size(), 1u);
  EXPECT_EQ(val[0].video.spacing, 9.0);
  EXPECT_EQ(train_part.size(), 9u);
  auto [t2, v2] = holdout_split(std::vector<Sample>(3), 0.1);
  EXPECT_EQ(v2.size(), 1u);
  auto [t3, v3] = holdout_split(std::vector<Sample>(3), 0.0);
  EXPECT_TRUE(v3.empty());
}

TEST(Evaluate, OracleModeScoresZero) {
  SynthConfig cfg = testing::small_synth(30);
  cfg.exit_fraction = 0.5;
  const auto data = generate_dataset(cfg, 3, 4);
  Checkpoint ck;
  ck.config = tiny_config().model;
  const EvalResult r = evaluate(ck, data, 0.5, {}, true);
  EXPECT_EQ(r.report.landmark_mae_mm.value(), 0.0);
  EXPECT_EQ(r.report.mapse_mae_mm.value(), 0.0);
  EXPECT_EQ(r.report.annulus_size_mae_mm.value(), 0.0);
}

TEST(Evaluate, DeterministicAndRocMatchesFlattenedPairs) {
  const auto data = tiny_data(3, 12);
  const TrainConfig cfg = tiny_config();
  TrainRun run;
  const Checkpoint ck = train(cfg, data, run);
  const EvalResult a = evaluate(ck, data, 0.3);
  const EvalResult b = evaluate(ck, data, 0.3);
  testing::TempDir dir("eval");
  write_report(dir / "a.json", a.report);
  write_report(dir / "b.json", b.report);
  EXPECT_EQ(testing::slurp(dir / "a.json"), testing::slurp(dir / "b.json"));
  ASSERT_EQ(a.trajectories.size(), 3u);
  if (a.report.roc_auc) {
    EXPECT_EQ(*a.report.roc_auc, roc_auc(a.report.presence_scores, a.report.presence_labels));
  }
  for (const Trajectory& t : a.trajectories) {
    for (const auto& f : t.frames) {
      for (int k = 0; k < 2; ++k) EXPECT_EQ(f.landmark(k).point.has_value(), f.landmark(k).max_prob >= 0.3);
    }
  }
}

TEST(CalibrateThreshold, FixedSeedSameTau) {
  const auto data = tiny_data(2, 8);
  Checkpoint ck;
  ck.config = tiny_config().model;
  std::mt19937_64 rng(1);
  ck.params = Network<float>(ck.config).init(rng);
  const FovAugmentConfig aug;
  const Threshold a = calibrate_threshold(ck, data, 2, aug, 9);
  const Threshold b = calibrate_threshold(ck, data, 2, aug, 9);
  EXPECT_EQ(a.tau, b.tau);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_THROW(calibrate_threshold(ck, data, 0, aug, 9), ConfigError);
  EXPECT_THROW(calibrate_threshold(ck, std::vector<Sample>{}, 2, aug, 9), CalibrationError);
}

TEST(ThresholdFile, RoundTrip) {
  testing::TempDir dir("tau");
  write_threshold(dir / "t.json", {0.375, 0.8125});
  const Threshold t = read_threshold(dir / "t.json");
  EXPECT_EQ(t.tau, 0.375);
  EXPECT_EQ(t.accuracy, 0.8125);
}

}  // namespace
}  // namespace annulus
