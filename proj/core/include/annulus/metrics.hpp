#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "annulus/synthvideo.hpp"

namespace annulus {

struct LandmarkEstimate {
  std::optional<Point> point;
  /// Presence score (maximum patch probability); kept even when the point is withheld.
  double max_prob = 0.0;
};

struct TrajectoryFrame {
  LandmarkEstimate left;
  LandmarkEstimate right;

  const LandmarkEstimate& landmark(int k) const { return k == 0 ? left : right; }
  LandmarkEstimate& landmark(int k) { return k == 0 ? left : right; }
  bool both() const { return left.point && right.point; }
};

/// Decoded landmark positions over a video.
struct Trajectory {
  std::vector<TrajectoryFrame> frames;
  double spacing = 1.0;
  std::vector<int> ed_frames;
  std::vector<int> es_frames;

  int num_frames() const { return static_cast<int>(frames.size()); }
};

/// Ground truth as a trajectory: present landmarks get probability 1.
Trajectory trajectory_from_truth(const GroundTruth& gt);

/// Mean Euclidean error in mm over annotated frames where the landmark is
/// present in both. Throws UndefinedMetricError when nothing is comparable.
double landmark_mae(const Trajectory& pred, const GroundTruth& gt);

double annulus_size(Point left, Point right, double spacing);

/// Mean |size(pred) - size(gt)| in mm over annotated frames with all four
/// landmarks present.
double annulus_size_mae(const Trajectory& pred, const GroundTruth& gt);

/// Unit annular-plane normal averaged over frames with both landmarks,
/// oriented towards negative image y (the apex side). Frames with coincident
/// landmarks are skipped; throws DegenerateNormalError if none remain.
Point mean_annulus_normal(const Trajectory& traj);

/// Systolic excursion of the annulus midpoint from `ed` to `es` projected
/// on the time-averaged normal, in mm; positive towards the apex.
double mapse(const Trajectory& traj, int ed, int es);

/// Midpoint displacement of every frame relative to the reference frame
/// (first ED with both landmarks, else the first such frame), projected on
/// the mean normal, in mm. Empty where a landmark is missing.
std::vector<std::optional<double>> excursion_curve(const Trajectory& traj);

/// ED -> ES pairs with no other ED in between (consecutive annotations).
std::vector<std::pair<int, int>> mapse_pairs(std::span<const int> ed, std::span<const int> es);

/// Forward third difference p[t+3] - 3p[t+2] + 3p[t+1] - p[t] on runs of four
/// consecutive present frames, norm times spacing, averaged over both landmarks.
double mean_jerk(const Trajectory& traj);

/// Sum and count behind mean_jerk (for pooling across videos).
std::pair<double, long> jerk_sum(const Trajectory& traj);

/// P(score of a random positive > score of a random negative), ties 1/2.
/// Throws UndefinedMetricError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct TTestResult {
  double mean_difference = 0.0;
  double t = 0.0;
  int df = 0;
  double p_value = 1.0;
};

/// Two-sided paired t-test on a[i] - b[i]. Needs at least two finite pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct VideoRecord {
  std::string name;
  std::optional<double> landmark_mae_mm;
  std::optional<double> annulus_size_mae_mm;
  std::optional<double> mapse_error_mm;  // mean |pred - gt| over ED/ES pairs
  std::optional<double> mapse_pred_mm;
  std::optional<double> mapse_true_mm;
  std::optional<double> mean_jerk;
};

/// Aggregated evaluation. Metrics that had no valid inputs are empty.
struct EvalReport {
  std::optional<double> landmark_mae_mm;
  std::optional<double> annulus_size_mae_mm;
  std::optional<double> mapse_mae_mm;
  std::optional<double> mean_jerk_mm_per_frame3;
  std::optional<double> roc_auc;
  std::vector<VideoRecord> videos;
  std::uint64_t seed = 0;
  /// Flattened (max_prob, present) pairs behind roc_auc.
  std::vector<double> presence_scores;
  std::vector<int> presence_labels;
};

/// Scores predicted trajectories against ground truth. Landmark and size
/// errors pool over instances, MAPSE over ED/ES pairs, jerk over windows.
EvalReport evaluate_trajectories(std::span<const Trajectory> preds, std::span<const GroundTruth> truths,
                                 std::span<const std::string> names = {});

// File formats ---------------------------------------------------------------

void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& path);

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);

}  // namespace annulus
