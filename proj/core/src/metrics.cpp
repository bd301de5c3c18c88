#include "annulus/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "annulus/errors.hpp"
#include "json_io.hpp"

namespace annulus {

namespace {

struct Mean {
  double sum = 0.0;
  long count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  std::optional<double> value() const {
    if (count == 0) return std::nullopt;
    return sum / count;
  }
};

Point midpoint(const TrajectoryFrame& f) { return (*f.left.point + *f.right.point) * 0.5; }

}  // namespace

Trajectory trajectory_from_truth(const GroundTruth& gt) {
  Trajectory traj;
  traj.spacing = gt.spacing;
  traj.ed_frames = gt.ed_frames;
  traj.es_frames = gt.es_frames;
  for (const FrameAnnotation& a : gt.frames) {
    TrajectoryFrame f;
    for (int k = 0; k < 2; ++k) {
      f.landmark(k).point = a.landmark(k);
      f.landmark(k).max_prob = a.landmark(k) ? 1.0 : 0.0;
    }
    traj.frames.push_back(f);
  }
  return traj;
}

double landmark_mae(const Trajectory& pred, const GroundTruth& gt) {
  if (pred.num_frames() != gt.num_frames()) throw ShapeError("landmark_mae: frame counts differ");
  Mean m;
  for (int t = 0; t < gt.num_frames(); ++t) {
    if (!gt.frames[t].annotated) continue;
    for (int k = 0; k < 2; ++k) {
      const auto& truth = gt.frames[t].landmark(k);
      const auto& guess = pred.frames[t].landmark(k).point;
      if (truth && guess) m.add(norm(*guess - *truth) * gt.spacing);
    }
  }
  if (!m.count) throw UndefinedMetricError("landmark_mae: no landmark present in both trajectories");
  return *m.value();
}

double annulus_size(Point left, Point right, double spacing) { return norm(right - left) * spacing; }

double annulus_size_mae(const Trajectory& pred, const GroundTruth& gt) {
  if (pred.num_frames() != gt.num_frames()) throw ShapeError("annulus_size_mae: frame counts differ");
  Mean m;
  for (int t = 0; t < gt.num_frames(); ++t) {
    const FrameAnnotation& a = gt.frames[t];
    const TrajectoryFrame& f = pred.frames[t];
    if (!a.annotated || !a.left || !a.right || !f.both()) continue;
    m.add(std::abs(annulus_size(*f.left.point, *f.right.point, gt.spacing) -
                   annulus_size(*a.left, *a.right, gt.spacing)));
  }
  if (!m.count) throw UndefinedMetricError("annulus_size_mae: no frame with both annulus landmarks");
  return *m.value();
}

Point mean_annulus_normal(const Trajectory& traj) {
  Point acc{0.0, 0.0};
  int used = 0;
  for (const TrajectoryFrame& f : traj.frames) {
    if (!f.both()) continue;
    const Point u = *f.right.point - *f.left.point;
    const double len = norm(u);
    if (len == 0.0) continue;  // coincident landmarks: no normal for this frame
    Point n{u.y / len, -u.x / len};
    if (n.y > 0.0 || (n.y == 0.0 && n.x < 0.0)) n = n * -1.0;
    acc = acc + n;
    ++used;
  }
  const double len = norm(acc);
  if (used == 0 || len == 0.0) {
    throw DegenerateNormalError("mapse: no frame defines an annular-plane normal");
  }
  return acc * (1.0 / len);
}

double mapse(const Trajectory& traj, int ed, int es) {
  const int n = traj.num_frames();
  if (ed < 0 || ed >= n || es < 0 || es >= n) throw UndefinedMetricError("mapse: ED/ES index out of range");
  if (!traj.frames[ed].both() || !traj.frames[es].both()) {
    throw UndefinedMetricError("mapse: both landmarks must be present at ED and ES");
  }
  const Point normal = mean_annulus_normal(traj);
  return dot(midpoint(traj.frames[es]) - midpoint(traj.frames[ed]), normal) * traj.spacing;
}

std::vector<std::optional<double>> excursion_curve(const Trajectory& traj) {
  std::vector<std::optional<double>> out(traj.frames.size());
  int ref = -1;
  for (int t : traj.ed_frames) {
    if (t >= 0 && t < traj.num_frames() && traj.frames[t].both()) {
      ref = t;
      break;
    }
  }
  for (int t = 0; ref < 0 && t < traj.num_frames(); ++t) {
    if (traj.frames[t].both()) ref = t;
  }
  if (ref < 0) return out;
  const Point normal = mean_annulus_normal(traj);
  const Point m_ref = midpoint(traj.frames[ref]);
  for (int t = 0; t < traj.num_frames(); ++t) {
    if (traj.frames[t].both()) out[t] = dot(midpoint(traj.frames[t]) - m_ref, normal) * traj.spacing;
  }
  return out;
}

std::vector<std::pair<int, int>> mapse_pairs(std::span<const int> ed, std::span<const int> es) {
  std::vector<int> eds(ed.begin(), ed.end());
  std::vector<int> ess(es.begin(), es.end());
  std::sort(eds.begin(), eds.end());
  std::sort(ess.begin(), ess.end());
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < eds.size(); ++i) {
    const auto it = std::upper_bound(ess.begin(), ess.end(), eds[i]);
    if (it == ess.end()) continue;
    if (i + 1 < eds.size() && eds[i + 1] < *it) continue;  // another ED intervenes
    out.emplace_back(eds[i], *it);
  }
  return out;
}

std::pair<double, long> jerk_sum(const Trajectory& traj) {
  double sum = 0.0;
  long count = 0;
  for (int k = 0; k < 2; ++k) {
    for (int t = 0; t + 3 < traj.num_frames(); ++t) {
      const auto& p0 = traj.frames[t].landmark(k).point;
      const auto& p1 = traj.frames[t + 1].landmark(k).point;
      const auto& p2 = traj.frames[t + 2].landmark(k).point;
      const auto& p3 = traj.frames[t + 3].landmark(k).point;
      if (!p0 || !p1 || !p2 || !p3) continue;
      const Point j = *p3 - *p2 * 3.0 + *p1 * 3.0 - *p0;
      sum += norm(j) * traj.spacing;
      ++count;
    }
  }
  return {sum, count};
}

double mean_jerk(const Trajectory& traj) {
  const auto [sum, count] = jerk_sum(traj);
  if (count == 0) throw UndefinedMetricError("mean_jerk: no run of four consecutive present frames");
  return sum / count;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: score/label length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum_pos = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum_pos += mid_rank;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetricError("roc_auc: needs both positive and negative samples");
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("paired_t_test: samples differ in length");
  if (a.size() < 2) throw UndefinedMetricError("paired_t_test: needs at least two pairs");
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw UndefinedMetricError("paired_t_test: non-finite sample");
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1));
  TTestResult r;
  r.mean_difference = mean;
  r.df = static_cast<int>(n) - 1;
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

EvalReport evaluate_trajectories(std::span<const Trajectory> preds, std::span<const GroundTruth> truths,
                                 std::span<const std::string> names) {
  if (preds.size() != truths.size()) throw ShapeError("evaluate: prediction/truth counts differ");
  EvalReport report;
  Mean lm, size, excursion;
  double jerk_total = 0.0;
  long jerk_count = 0;

  for (std::size_t v = 0; v < preds.size(); ++v) {
    const Trajectory& pred = preds[v];
    const GroundTruth& gt = truths[v];
    if (pred.num_frames() != gt.num_frames()) throw ShapeError("evaluate: frame counts differ");
    VideoRecord rec;
    rec.name = v < names.size() ? names[v] : "video_" + std::to_string(v);
    const Trajectory truth_traj = trajectory_from_truth(gt);

    Mean video_lm, video_size;
    for (int t = 0; t < gt.num_frames(); ++t) {
      const FrameAnnotation& a = gt.frames[t];
      const TrajectoryFrame& f = pred.frames[t];
      for (int k = 0; k < 2; ++k) {
        report.presence_scores.push_back(f.landmark(k).max_prob);
        report.presence_labels.push_back(a.landmark(k) ? 1 : 0);
        if (a.annotated && a.landmark(k) && f.landmark(k).point) {
          const double e = norm(*f.landmark(k).point - *a.landmark(k)) * gt.spacing;
          video_lm.add(e);
          lm.add(e);
        }
      }
      if (a.annotated && a.left && a.right && f.both()) {
        const double e = std::abs(annulus_size(*f.left.point, *f.right.point, gt.spacing) -
                                  annulus_size(*a.left, *a.right, gt.spacing));
        video_size.add(e);
        size.add(e);
      }
    }
    rec.landmark_mae_mm = video_lm.value();
    rec.annulus_size_mae_mm = video_size.value();

    Mean video_mapse, video_pred, video_true;
    for (const auto& [ed, es] : mapse_pairs(gt.ed_frames, gt.es_frames)) {
      double truth_value = 0.0;
      try {
        truth_value = mapse(truth_traj, ed, es);
      } catch (const UndefinedMetricError&) {
        continue;  // pair excluded: reference landmarks missing at ED or ES
      }
      try {
        const double predicted = mapse(pred, ed, es);
        video_mapse.add(std::abs(predicted - truth_value));
        excursion.add(std::abs(predicted - truth_value));
        video_pred.add(predicted);
        video_true.add(truth_value);
      } catch (const UndefinedMetricError&) {
      }
    }
    rec.mapse_error_mm = video_mapse.value();
    rec.mapse_pred_mm = video_pred.value();
    rec.mapse_true_mm = video_true.value();

    const auto [js, jc] = jerk_sum(pred);
    if (jc > 0) rec.mean_jerk = js / jc;
    jerk_total += js;
    jerk_count += jc;
    report.videos.push_back(rec);
  }

  report.landmark_mae_mm = lm.value();
  report.annulus_size_mae_mm = size.value();
  report.mapse_mae_mm = excursion.value();
  if (jerk_count > 0) report.mean_jerk_mm_per_frame3 = jerk_total / jerk_count;
  try {
    report.roc_auc = roc_auc(report.presence_scores, report.presence_labels);
  } catch (const UndefinedMetricError&) {
  }
  return report;
}

// File formats ---------------------------------------------------------------

namespace {

nlohmann::json estimate_json(const LandmarkEstimate& e) {
  if (!e.point) return nullptr;
  return {{"x", e.point->x}, {"y", e.point->y}, {"prob", e.max_prob}};
}

nlohmann::json opt(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

}  // namespace

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  nlohmann::json frames = nlohmann::json::array();
  for (int t = 0; t < traj.num_frames(); ++t) {
    const TrajectoryFrame& f = traj.frames[t];
    frames.push_back({{"index", t},
                      {"left", estimate_json(f.left)},
                      {"right", estimate_json(f.right)},
                      {"max_prob", {f.left.max_prob, f.right.max_prob}}});
  }
  detail::write_json_file(path, {{"format", "annulus-trajectory/1"},
                                 {"spacing", traj.spacing},
                                 {"ed", traj.ed_frames},
                                 {"es", traj.es_frames},
                                 {"frames", frames}});
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  Trajectory traj;
  try {
    traj.spacing = j.at("spacing").get<double>();
    traj.ed_frames = j.at("ed").get<std::vector<int>>();
    traj.es_frames = j.at("es").get<std::vector<int>>();
    const auto& frames = j.at("frames");
    traj.frames.resize(frames.size());
    for (const auto& f : frames) {
      const int idx = f.at("index").get<int>();
      if (idx < 0 || idx >= static_cast<int>(frames.size())) throw FormatError(path.string() + ": bad index");
      const auto probs = f.at("max_prob").get<std::vector<double>>();
      if (probs.size() != 2) throw FormatError(path.string() + ": max_prob must have two entries");
      for (int k = 0; k < 2; ++k) {
        const auto& e = f.at(k == 0 ? "left" : "right");
        LandmarkEstimate& est = traj.frames[idx].landmark(k);
        est.max_prob = probs[k];
        if (!e.is_null()) est.point = Point{e.at("x").get<double>(), e.at("y").get<double>()};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return traj;
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  nlohmann::json videos = nlohmann::json::array();
  for (const VideoRecord& v : r.videos) {
    videos.push_back({{"name", v.name},
                      {"landmark_mae_mm", opt(v.landmark_mae_mm)},
                      {"annulus_size_mae_mm", opt(v.annulus_size_mae_mm)},
                      {"mapse_error_mm", opt(v.mapse_error_mm)},
                      {"mapse_pred_mm", opt(v.mapse_pred_mm)},
                      {"mapse_true_mm", opt(v.mapse_true_mm)},
                      {"mean_jerk", opt(v.mean_jerk)}});
  }
  detail::write_json_file(path, {{"format", "annulus-report/1"},
                                 {"seed", r.seed},
                                 {"landmark_mae_mm", opt(r.landmark_mae_mm)},
                                 {"annulus_size_mae_mm", opt(r.annulus_size_mae_mm)},
                                 {"mapse_mae_mm", opt(r.mapse_mae_mm)},
                                 {"mean_jerk_mm_per_frame3", opt(r.mean_jerk_mm_per_frame3)},
                                 {"roc_auc", opt(r.roc_auc)},
                                 {"videos", videos}});
}

EvalReport read_report(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  EvalReport r;
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.landmark_mae_mm = opt_from(j, "landmark_mae_mm");
    r.annulus_size_mae_mm = opt_from(j, "annulus_size_mae_mm");
    r.mapse_mae_mm = opt_from(j, "mapse_mae_mm");
    r.mean_jerk_mm_per_frame3 = opt_from(j, "mean_jerk_mm_per_frame3");
    r.roc_auc = opt_from(j, "roc_auc");
    for (const auto& v : j.at("videos")) {
      VideoRecord rec;
      rec.name = v.at("name").get<std::string>();
      rec.landmark_mae_mm = opt_from(v, "landmark_mae_mm");
      rec.annulus_size_mae_mm = opt_from(v, "annulus_size_mae_mm");
      rec.mapse_error_mm = opt_from(v, "mapse_error_mm");
      rec.mapse_pred_mm = opt_from(v, "mapse_pred_mm");
      rec.mapse_true_mm = opt_from(v, "mapse_true_mm");
      rec.mean_jerk = opt_from(v, "mean_jerk");
      r.videos.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return r;
}

std::string report_csv_header() {
  return "seed,landmark_mae_mm,annulus_size_mae_mm,mapse_mae_mm,mean_jerk_mm_per_frame3,roc_auc";
}

std::string report_csv_row(const EvalReport& r) {
  return std::to_string(r.seed) + "," + csv_cell(r.landmark_mae_mm) + "," + csv_cell(r.annulus_size_mae_mm) +
         "," + csv_cell(r.mapse_mae_mm) + "," + csv_cell(r.mean_jerk_mm_per_frame3) + "," + csv_cell(r.roc_auc);
}

}  // namespace annulus
