#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "annulus/config.hpp"
#include "annulus/errors.hpp"
#include "annulus/synthvideo.hpp"
#include "annulus/trainer.hpp"

#ifndef ANNULUS_VERSION
#define ANNULUS_VERSION "unknown"
#endif

namespace annulus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json kv_json(const KeyValues& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

struct Manifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::vector<fs::path> artifacts;
  std::vector<std::string> rerun;
  json extra = json::object();
};

void write_manifest(const fs::path& path, const Manifest& m) {
  json artifacts = json::array();
  for (const auto& a : m.artifacts) artifacts.push_back(a.string());
  json j = {{"format", "annulus-manifest/1"},
            {"command", m.command},
            {"tool_version", ANNULUS_VERSION},
            {"timestamp", utc_timestamp()},
            {"seed", m.seed},
            {"config", kv_json(m.config)},
            {"artifacts", artifacts},
            {"rerun", m.rerun}};
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

double resolve_tau(const std::string& threshold_path, double tau) {
  if (!threshold_path.empty()) return read_threshold(threshold_path).tau;
  return tau;
}

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> names;
};

Dataset load_named(const fs::path& dir) {
  Dataset d;
  for (const auto& p : dataset_files(dir)) {
    d.samples.push_back(read_sample(p));
    d.names.push_back(p.stem().string());
  }
  return d;
}

Dataset tta_expand(const Dataset& d, int k, const FovAugmentConfig& aug, std::uint64_t seed) {
  if (k == 0) return d;
  Dataset out;
  out.samples = augmented_copies(d.samples, k, aug, seed);
  for (const auto& n : d.names) {
    for (int j = 0; j < k; ++j) out.names.push_back(n + "_aug" + std::to_string(j));
  }
  return out;
}

void write_curves(const fs::path& path, const Trajectory& traj) {
  std::vector<std::optional<double>> excursion(traj.frames.size());
  try {
    excursion = excursion_curve(traj);
  } catch (const UndefinedMetricError&) {
  }
  std::string text = "frame,left_y,right_y,excursion\n";
  for (int t = 0; t < traj.num_frames(); ++t) {
    const auto& f = traj.frames[t];
    text += std::to_string(t) + "," + (f.left.point ? format_double(f.left.point->y) : "") + "," +
            (f.right.point ? format_double(f.right.point->y) : "") + "," + cell(excursion[t]) + "\n";
  }
  write_text(path, text);
}

// synth ----------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int n_videos = 50;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg = a.config.empty() ? SynthConfig{} : synth_config_from(read_key_values(a.config));
  validate(cfg);
  if (a.n_videos < 1) throw ConfigError("synth: --n-videos must be >= 1");
  const fs::path dir = a.out;
  fs::create_directories(dir);

  const fs::path resolved = dir / "synth.cfg";
  Manifest m;
  m.command = "synth";
  m.config = synth_config_values(cfg);
  m.seed = a.seed;
  for (int i = 0; i < a.n_videos; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "video_%04d", i);
    m.artifacts.push_back(dir / (std::string(stem) + ".avf"));
    m.artifacts.push_back(dir / (std::string(stem) + ".json"));
  }
  m.artifacts.push_back(resolved);
  m.rerun = {"synth", "--config", resolved.string(), "--out", dir.string(), "--seed", std::to_string(a.seed),
             "--n-videos", std::to_string(a.n_videos)};
  m.extra["n_videos"] = a.n_videos;
  write_text(resolved, format_key_values(m.config));
  write_manifest(dir / "manifest.json", m);

  write_dataset(dir, generate_dataset(cfg, a.n_videos, a.seed));
  out << "wrote " << a.n_videos << " videos to " << dir.string() << "\n";
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;  // key=value
  std::string train_dir, val_dir, test_dir, out;
  std::string seeds;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta, lr;
  std::optional<int> iterations, threads, batch, clip_length, base_channels;
  std::string crop;
  std::string resume;
  bool deterministic = false;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    for (const auto& [k, v] : read_key_values(a.config)) set_train_value(cfg, k, v);
  }
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    set_train_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  if (!a.train_dir.empty()) cfg.train_dir = a.train_dir;
  if (!a.val_dir.empty()) cfg.val_dir = a.val_dir;
  if (!a.test_dir.empty()) cfg.test_dir = a.test_dir;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (!a.seeds.empty()) cfg.seeds = parse_u64_list("seeds", a.seeds);
  if (a.seed) cfg.seeds = {*a.seed};
  if (a.beta) cfg.beta = *a.beta;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.threads) cfg.threads = *a.threads;
  if (a.batch) cfg.batch_videos = *a.batch;
  if (a.clip_length) cfg.clip_length = *a.clip_length;
  if (a.base_channels) cfg.model.base_channels = *a.base_channels;
  if (!a.crop.empty()) set_train_value(cfg, "augment.crop", a.crop);
  if (a.deterministic) cfg.threads = 1;
  if (cfg.train_dir.empty()) throw ConfigError("train: no training data (train_dir / --train-dir)");
  validate(cfg);

  fs::create_directories(cfg.out_dir);
  const fs::path resolved = cfg.out_dir / "train.cfg";
  Manifest m;
  m.command = "train";
  m.config = train_config_values(cfg);
  m.seed = cfg.seeds.front();
  for (auto s : cfg.seeds) {
    const fs::path dir = cfg.out_dir / ("seed_" + std::to_string(s));
    m.artifacts.push_back(dir / "model.ckpt");
    m.artifacts.push_back(dir / "train_log.csv");
    m.artifacts.push_back(dir / "threshold.json");
    if (!cfg.test_dir.empty()) m.artifacts.push_back(dir / "report.json");
  }
  m.artifacts.push_back(cfg.out_dir / "summary.csv");
  m.artifacts.push_back(resolved);
  m.rerun = {"train", "--config", resolved.string()};
  if (!a.resume.empty()) {
    m.rerun.push_back("--resume");
    m.rerun.push_back(a.resume);
  }
  m.extra["variant"] = cfg.beta == 0.0 ? "baseline" : "temporal-consistency";
  m.extra["seeds"] = cfg.seeds;
  if (!a.resume.empty()) m.extra["resumed_from"] = a.resume;
  write_text(resolved, format_key_values(m.config));
  write_manifest(cfg.out_dir / "manifest.json", m);

  const auto results = train_seeds(cfg, a.resume);
  for (const auto& r : results) {
    out << "seed " << r.seed << ": " << r.checkpoint_path.string() << " (tau " << r.threshold.tau << ")\n";
  }
}

// calibrate --------------------------------------------------------------------

struct CalibrateArgs {
  std::string checkpoint, data, out;
  int k = 4;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string crop = "sector";
};

void cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  FovAugmentConfig aug;
  aug.crop = a.crop == "rectangle" ? CropMode::rectangle : CropMode::sector;
  const fs::path out_path = a.out;
  Manifest m;
  m.command = "calibrate";
  m.config = {{"checkpoint", a.checkpoint}, {"data", a.data}, {"k", std::to_string(a.k)}, {"crop", a.crop}};
  m.seed = a.seed;
  m.artifacts = {out_path};
  m.rerun = {"calibrate", "--checkpoint", a.checkpoint, "--data", a.data, "--out", a.out,
             "--k", std::to_string(a.k), "--seed", std::to_string(a.seed), "--crop", a.crop};
  fs::path manifest = out_path;
  manifest.replace_extension(".manifest.json");
  write_manifest(manifest, m);

  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::vector<Sample> data = fs::exists(a.data) ? read_dataset(a.data) : std::vector<Sample>{};
  const Threshold t = calibrate_threshold(ck, data, a.k, aug, a.seed, a.threads);
  write_threshold(out_path, t);
  out << "tau " << t.tau << " accuracy " << t.accuracy << "\n";
}

// eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out, threshold;
  double tau = 0.5;
  int tta = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<std::string> compare;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const double tau = resolve_tau(a.threshold, a.tau);
  const fs::path dir = a.out;
  fs::create_directories(dir);

  Manifest m;
  m.command = "eval";
  m.config = {{"data", a.data}, {"tau", format_double(tau)}, {"tta", std::to_string(a.tta)}};
  m.seed = a.seed;
  m.rerun = {"eval", "--data", a.data, "--out", a.out, "--tau", format_double(tau), "--tta", std::to_string(a.tta),
             "--seed", std::to_string(a.seed)};
  const Dataset data = tta_expand(load_named(a.data), a.tta, FovAugmentConfig{}, a.seed);

  if (!a.compare.empty()) {
    m.config.emplace_back("baseline", a.compare[0]);
    m.config.emplace_back("proposed", a.compare[1]);
    m.rerun.insert(m.rerun.end(), {"--compare", a.compare[0], a.compare[1]});
    m.artifacts = {dir / "compare.csv", dir / "compare.json"};
    write_manifest(dir / "manifest.json", m);

    const EvalResult base = evaluate(load_checkpoint(a.compare[0]), data.samples, tau, data.names, false, a.threads);
    const EvalResult prop = evaluate(load_checkpoint(a.compare[1]), data.samples, tau, data.names, false, a.threads);
    std::string csv =
        "video,baseline_landmark_mae_mm,proposed_landmark_mae_mm,baseline_mapse_error_mm,proposed_mapse_error_mm,"
        "baseline_mean_jerk,proposed_mean_jerk\n";
    std::vector<double> lm[2], mp[2], jk[2];
    for (std::size_t v = 0; v < data.names.size(); ++v) {
      const VideoRecord& b = base.report.videos[v];
      const VideoRecord& p = prop.report.videos[v];
      csv += data.names[v] + "," + cell(b.landmark_mae_mm) + "," + cell(p.landmark_mae_mm) + "," +
             cell(b.mapse_error_mm) + "," + cell(p.mapse_error_mm) + "," + cell(b.mean_jerk) + "," +
             cell(p.mean_jerk) + "\n";
      auto pair = [](const std::optional<double>& x, const std::optional<double>& y, std::vector<double>* dst) {
        if (x && y) {
          dst[0].push_back(*x);
          dst[1].push_back(*y);
        }
      };
      pair(b.landmark_mae_mm, p.landmark_mae_mm, lm);
      pair(b.mapse_error_mm, p.mapse_error_mm, mp);
      pair(b.mean_jerk, p.mean_jerk, jk);
    }
    write_text(dir / "compare.csv", csv);
    json summary = json::object();
    auto test = [&](const char* name, std::vector<double>* v) {
      if (v[0].size() < 2) {
        summary[name] = nullptr;
        return;
      }
      const TTestResult r = paired_t_test(v[1], v[0]);
      summary[name] = {{"n", v[0].size()},
                       {"mean_difference", r.mean_difference},
                       {"t", r.t},
                       {"df", r.df},
                       {"p_value", r.p_value}};
      out << name << ": proposed - baseline = " << r.mean_difference << " (p = " << r.p_value << ")\n";
    };
    test("landmark_mae_mm", lm);
    test("mapse_error_mm", mp);
    test("mean_jerk", jk);
    write_text(dir / "compare.json", summary.dump(2) + "\n");
    return;
  }

  if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint or --compare is required");
  m.config.emplace_back("checkpoint", a.checkpoint);
  m.rerun.insert(m.rerun.end(), {"--checkpoint", a.checkpoint});
  m.artifacts = {dir / "report.json", dir / "report.csv"};
  for (const auto& n : data.names) {
    m.artifacts.push_back(dir / "trajectories" / (n + ".json"));
    m.artifacts.push_back(dir / "curves" / (n + ".csv"));
  }
  write_manifest(dir / "manifest.json", m);

  const Checkpoint ck = load_checkpoint(a.checkpoint);
  EvalResult r = evaluate(ck, data.samples, tau, data.names, false, a.threads);
  r.report.seed = a.seed;
  write_report(dir / "report.json", r.report);
  write_text(dir / "report.csv", report_csv_header() + "\n" + report_csv_row(r.report) + "\n");
  fs::create_directories(dir / "trajectories");
  fs::create_directories(dir / "curves");
  for (std::size_t v = 0; v < r.names.size(); ++v) {
    write_trajectory(dir / "trajectories" / (r.names[v] + ".json"), r.trajectories[v]);
    write_curves(dir / "curves" / (r.names[v] + ".csv"), r.trajectories[v]);
  }
  out << report_csv_header() << "\n" << report_csv_row(r.report) << "\n";
}

// infer ------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, video, out, threshold;
  double tau = 0.5;
};

void cmd_infer(const InferArgs& a, std::ostream& out) {
  const double tau = resolve_tau(a.threshold, a.tau);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const VideoClip clip = read_video(a.video);
  if (clip.height() != ck.config.input_size || clip.width() != ck.config.input_size) {
    throw ShapeError("infer: video size does not match the checkpoint");
  }
  Trajectory traj = infer_trajectory(Network<float>(ck.config), ck.params, clip, tau);
  fs::path annotation = a.video;
  annotation.replace_extension(".json");
  if (fs::exists(annotation)) {
    const GroundTruth gt = read_ground_truth(annotation);
    traj.ed_frames = gt.ed_frames;
    traj.es_frames = gt.es_frames;
  }
  write_trajectory(a.out, traj);
  out << "wrote " << a.out << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporally consistent annulus landmark detection"};
  app.set_version_flag("--version", ANNULUS_VERSION);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic sector-video dataset");
  s->add_option("--config", synth.config, "Generator config (key = value)")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--n-videos", synth.n_videos, "Number of videos")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one model per seed");
  t->add_option("--config", train.config, "Training config (key = value)")->check(CLI::ExistingFile);
  t->add_option("--set", train.overrides, "Override a config key (key=value)");
  t->add_option("--train-dir", train.train_dir, "Training dataset");
  t->add_option("--val-dir", train.val_dir, "Validation dataset (default: hold out part of training)");
  t->add_option("--test-dir", train.test_dir, "Test dataset for per-seed reports");
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--seeds", train.seeds, "Comma-separated seeds");
  t->add_option("--seed", train.seed, "Single seed");
  t->add_option("--beta", train.beta, "Temporal consistency weight (0 = baseline)");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--iterations", train.iterations, "Iterations");
  t->add_option("--batch", train.batch, "Videos per batch");
  t->add_option("--clip-length", train.clip_length, "Frames per clip");
  t->add_option("--base-channels", train.base_channels, "Width of the first stage");
  t->add_option("--crop", train.crop, "Augmentation crop")->check(CLI::IsMember({"sector", "rectangle"}));
  t->add_option("--threads", train.threads, "Worker threads");
  t->add_flag("--deterministic", train.deterministic, "Force serial execution (same as --threads 1)");
  t->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Calibrate the presence threshold");
  c->add_option("--checkpoint", cal.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  c->add_option("--data", cal.data, "Validation dataset")->required();
  c->add_option("--out", cal.out, "Threshold file")->required();
  c->add_option("--k", cal.k, "Augmented copies per video")->check(CLI::Range(1, 1000));
  c->add_option("--seed", cal.seed, "Random seed");
  c->add_option("--crop", cal.crop, "Augmentation crop")->check(CLI::IsMember({"sector", "rectangle"}));
  c->add_option("--threads", cal.threads, "Worker threads")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Test dataset")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  auto* tau_opt = e->add_option("--tau", ev.tau, "Presence threshold");
  e->add_option("--threshold", ev.threshold, "Threshold file from calibrate")
      ->check(CLI::ExistingFile)
      ->excludes(tau_opt);
  e->add_option("--tta", ev.tta, "Augmented copies per video (0 = none)")->check(CLI::Range(0, 1000));
  e->add_option("--seed", ev.seed, "Random seed for test-time augmentation");
  e->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);
  e->add_option("--compare", ev.compare, "Baseline and proposed checkpoints")
      ->expected(2)
      ->check(CLI::ExistingFile);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Detect landmarks in one video");
  i->add_option("--checkpoint", inf.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--video", inf.video, "Video file (.avf)")->required()->check(CLI::ExistingFile);
  i->add_option("--out", inf.out, "Trajectory file")->required();
  auto* itau = i->add_option("--tau", inf.tau, "Presence threshold");
  i->add_option("--threshold", inf.threshold, "Threshold file")->check(CLI::ExistingFile)->excludes(itau);

  std::string manifest_path;
  auto* r = app.add_subcommand("rerun", "Re-run a command from its manifest");
  r->add_option("manifest", manifest_path, "Manifest file")->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) cmd_synth(synth, out);
    else if (*t) cmd_train(train, out);
    else if (*c) cmd_calibrate(cal, out);
    else if (*e) cmd_eval(ev, out);
    else if (*i) cmd_infer(inf, out);
    else if (*r) {
      std::ifstream in(manifest_path);
      const json j = json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("rerun")) throw ConfigError("rerun: malformed manifest " + manifest_path);
      return run(j.at("rerun").get<std::vector<std::string>>(), out, err);
    }
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace annulus::cli
