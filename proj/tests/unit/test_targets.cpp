#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "annulus/decode.hpp"
#include "annulus/errors.hpp"
#include "annulus/targets.hpp"

namespace annulus {
namespace {

TEST(PatchCenter, Examples) {
  EXPECT_EQ(patch_center({32, 4, 4}, 0, 0), (Point{16.0, 16.0}));
  EXPECT_EQ(patch_center({32, 4, 4}, 1, 2), (Point{80.0, 48.0}));
  EXPECT_EQ(patch_center({4, 4, 4}, 3, 3), (Point{14.0, 14.0}));
}

TEST(PatchCenter, RejectsOutOfRange) {
  EXPECT_THROW(patch_center({32, 4, 4}, 4, 0), std::out_of_range);
  EXPECT_THROW(patch_center({32, 4, 4}, 0, -1), std::out_of_range);
}

TEST(SignedLog, Examples) {
  EXPECT_EQ(signed_log(0.0), 0.0);
  EXPECT_NEAR(signed_log(2.0), 1.0986, 1e-4);
  EXPECT_DOUBLE_EQ(signed_log(2.0), std::log(3.0));
  EXPECT_DOUBLE_EQ(signed_log(-2.0), -std::log(3.0));
}

TEST(SignedLog, InverseIdentity) {
  for (double v = -500.0; v <= 500.0; v += 0.37) EXPECT_NEAR(inverse_signed_log(signed_log(v)), v, 1e-6);
}

TEST(SignedLog, StrictlyMonotone) {
  double prev = signed_log(-600.0);
  for (double v = -599.5; v <= 600.0; v += 0.5) {
    const double cur = signed_log(v);
    ASSERT_GT(cur, prev);
    prev = cur;
  }
}

TEST(BuildTargets, SingleCellExample) {
  const LandmarkTargets t = build_targets(Point{18.0, 16.0}, {32, 1, 1});
  ASSERT_EQ(t.cls.size(), 1u);
  EXPECT_EQ(t.cls[0], 1.0f);
  EXPECT_NEAR(t.reg[0], 1.0986, 1e-4);
  EXPECT_EQ(t.reg[1], 0.0f);
  EXPECT_EQ(t.reg_mask[0], 1.0f);
  EXPECT_TRUE(t.present);
}

TEST(BuildTargets, AbsentLandmarkZeroesEverything) {
  const LandmarkTargets t = build_targets(std::nullopt, {32, 4, 4});
  EXPECT_FALSE(t.present);
  for (float v : t.cls) EXPECT_EQ(v, 0.0f);
  for (float v : t.reg_mask) EXPECT_EQ(v, 0.0f);
}

TEST(BuildTargets, BoundaryBelongsToUpperPatch) {
  const PatchGrid grid{32, 2, 2};
  // Oracle: floor(coordinate / stride) on every boundary point of the grid.
  for (double x : {0.0, 31.999, 32.0, 63.5}) {
    for (double y : {0.0, 32.0, 40.0}) {
      const LandmarkTargets t = build_targets(Point{x, y}, grid);
      const int expected = static_cast<int>(std::floor(y / 32.0)) * 2 + static_cast<int>(std::floor(x / 32.0));
      for (int c = 0; c < 4; ++c) EXPECT_EQ(t.cls[c], c == expected ? 1.0f : 0.0f) << x << "," << y;
    }
  }
  EXPECT_EQ(build_targets(Point{32.0, 5.0}, grid).cls[1], 1.0f);
}

TEST(BuildTargets, OutsideImageIsAnnotationError) {
  EXPECT_THROW(build_targets(Point{128.0, 5.0}, {32, 4, 4}), AnnotationError);
  EXPECT_THROW(build_targets(Point{-0.1, 5.0}, {32, 4, 4}), AnnotationError);
}

TEST(BuildTargets, PresentLandmarkInvariants) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PatchGrid grid{16, 5, 7};
  for (int k = 0; k < 500; ++k) {
    const Point p{u(rng) * grid.image_width(), u(rng) * grid.image_height()};
    const LandmarkTargets t = build_targets(p, grid);
    double sum = 0.0;
    int argmax = 0;
    for (int c = 0; c < grid.cells(); ++c) {
      sum += t.cls[c];
      if (t.cls[c] > t.cls[argmax]) argmax = c;
      EXPECT_EQ(t.reg_mask[c], 1.0f);
    }
    EXPECT_EQ(sum, 1.0);
    const int i = argmax / grid.grid_w;
    const int j = argmax % grid.grid_w;
    EXPECT_TRUE(p.x >= j * grid.stride && p.x < (j + 1) * grid.stride);
    EXPECT_TRUE(p.y >= i * grid.stride && p.y < (i + 1) * grid.stride);
  }
}

TEST(BuildTargets, RegressionAntisymmetricUnderReflection) {
  const PatchGrid grid{32, 4, 4};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-15.0, 15.0);
  for (int k = 0; k < 200; ++k) {
    const int i = k % 4;
    const int j = (k / 4) % 4;
    const Point c = patch_center(grid, i, j);
    const Point p = c + Point{u(rng), u(rng)};
    const Point q = c * 2.0 - p;
    const LandmarkTargets a = build_targets(p, grid);
    const LandmarkTargets b = build_targets(q, grid);
    const int cell = i * 4 + j;
    EXPECT_FLOAT_EQ(a.reg[cell], -b.reg[cell]);
    EXPECT_FLOAT_EQ(a.reg[16 + cell], -b.reg[16 + cell]);
  }
}

TEST(BuildTargets, MultiLandmarkConcatenatesPlanes) {
  const PatchGrid grid{32, 4, 4};
  const TargetMaps m = build_targets({Point{10.0, 10.0}, std::nullopt}, grid);
  EXPECT_EQ(m.n_landmarks, 2);
  EXPECT_EQ(m.cls.size(), 32u);
  EXPECT_EQ(m.reg.size(), 64u);
  EXPECT_EQ(m.cls[0], 1.0f);
  for (int c = 16; c < 32; ++c) EXPECT_EQ(m.reg_mask[c], 0.0f);
}

// Decoding ---------------------------------------------------------------------

std::vector<double> reg_for_locations(const PatchGrid& grid, const std::vector<Point>& locations) {
  const int cells = grid.cells();
  std::vector<double> reg(2 * cells);
  for (int c = 0; c < cells; ++c) {
    const Point center = patch_center(grid, c / grid.grid_w, c % grid.grid_w);
    reg[c] = signed_log(locations[c].x - center.x);
    reg[cells + c] = signed_log(locations[c].y - center.y);
  }
  return reg;
}

TEST(WeightedMean, WeightedAverageExample) {
  const PatchGrid grid{32, 2, 2};
  const std::vector<double> probs{0.9, 0.1, 0.0, 0.0};
  const auto reg = reg_for_locations(grid, {{10, 10}, {20, 20}, {70, 3}, {5, 90}});
  const Detection d = weighted_mean(probs, reg, grid);
  ASSERT_TRUE(d.point);
  EXPECT_NEAR(d.point->x, 11.0, 1e-9);
  EXPECT_NEAR(d.point->y, 11.0, 1e-9);
  EXPECT_DOUBLE_EQ(d.max_prob, 0.9);
}

TEST(WeightedMean, UniformSymmetricLocations) {
  const PatchGrid grid{32, 2, 2};
  const std::vector<double> probs(4, 0.3);
  const auto reg = reg_for_locations(grid, {{54, 54}, {74, 54}, {54, 74}, {74, 74}});
  const Detection d = weighted_mean(probs, reg, grid);
  EXPECT_NEAR(d.point->x, 64.0, 1e-9);
  EXPECT_NEAR(d.point->y, 64.0, 1e-9);
}

TEST(WeightedMean, ZeroProbabilityMassIsAbsent) {
  const PatchGrid grid{32, 2, 2};
  const Detection d = weighted_mean(std::vector<double>(4, 0.0), std::vector<double>(8, 1.0), grid);
  EXPECT_FALSE(d.point);
  EXPECT_EQ(d.max_prob, 0.0);
}

Detection decode_targets(const LandmarkTargets& t, const PatchGrid& grid) {
  const std::vector<double> probs(t.cls.begin(), t.cls.end());
  const std::vector<double> reg(t.reg.begin(), t.reg.end());
  return weighted_mean(probs, reg, grid);
}

TEST(WeightedMean, RecoversTargetLandmark) {
  const PatchGrid grid{32, 4, 4};
  const Detection d = decode_targets(build_targets(Point{37.2, 91.5}, grid), grid);
  ASSERT_TRUE(d.point);
  EXPECT_NEAR(d.point->x, 37.2, 1e-4);
  EXPECT_NEAR(d.point->y, 91.5, 1e-4);
}

TEST(WeightedMean, FixedPointOverRandomGrids) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> stride_exp(1, 6);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const PatchGrid grid{1 << stride_exp(rng), dim(rng), dim(rng)};
    const Point p{u(rng) * grid.image_width(), u(rng) * grid.image_height()};
    const Detection d = decode_targets(build_targets(p, grid), grid);
    ASSERT_TRUE(d.point);
    EXPECT_NEAR(d.point->x, p.x, 1e-4);
    EXPECT_NEAR(d.point->y, p.y, 1e-4);
  }
}

TEST(WeightedMean, InvariantToProbabilityScaling) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PatchGrid grid{32, 4, 4};
  for (int k = 0; k < 100; ++k) {
    std::vector<double> probs(16), scaled(16), reg(32);
    for (int c = 0; c < 16; ++c) {
      probs[c] = u(rng);
      scaled[c] = 0.25 * probs[c];
    }
    for (double& r : reg) r = 6.0 * (u(rng) - 0.5);
    const Detection a = weighted_mean(probs, reg, grid);
    const Detection b = weighted_mean(scaled, reg, grid);
    EXPECT_NEAR(a.point->x, b.point->x, 1e-9);
    EXPECT_NEAR(a.point->y, b.point->y, 1e-9);
    // Convex hull: at least within the bounding box of per-patch locations.
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (int c = 0; c < 16; ++c) {
      const Point center = patch_center(grid, c / 4, c % 4);
      const double x = center.x + inverse_signed_log(reg[c]);
      const double y = center.y + inverse_signed_log(reg[16 + c]);
      lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x), lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
    }
    EXPECT_GE(a.point->x, lo_x - 1e-9);
    EXPECT_LE(a.point->x, hi_x + 1e-9);
    EXPECT_GE(a.point->y, lo_y - 1e-9);
    EXPECT_LE(a.point->y, hi_y + 1e-9);
  }
}

PredictionMaps<float> maps_with_max_prob(double max_prob) {
  auto m = PredictionMaps<float>::zeros(1, {32, 2, 2});
  const double logit = std::log(max_prob / (1.0 - max_prob));
  std::fill(m.cls_logits.begin(), m.cls_logits.end(), -30.0f);
  m.cls_logits[0] = static_cast<float>(logit);
  return m;
}

TEST(Detect, TauZeroAlwaysPresent) {
  EXPECT_TRUE(detect(maps_with_max_prob(0.01), 0, 0.0).point);
}

TEST(Detect, TauOneWithCertainProbabilityIsPresent) {
  auto m = PredictionMaps<float>::zeros(1, {32, 1, 1});
  m.cls_logits[0] = 100.0f;
  const Detection d = detect(m, 0, 1.0);
  EXPECT_EQ(d.max_prob, 1.0);
  EXPECT_TRUE(d.point);
}

TEST(Detect, BelowThresholdIsAbsent) {
  const Detection d = detect(maps_with_max_prob(0.4), 0, 0.5);
  EXPECT_FALSE(d.point);
  EXPECT_NEAR(d.max_prob, 0.4, 1e-6);
}

TEST(Calibrate, AllPositive) {
  const Threshold t = calibrate(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 1});
  EXPECT_EQ(t.tau, 0.0);
  EXPECT_EQ(t.accuracy, 1.0);
}

TEST(Calibrate, SeparableReturnsMidpoint) {
  const Threshold t = calibrate(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0});
  EXPECT_DOUBLE_EQ(t.tau, 0.5);
  EXPECT_EQ(t.accuracy, 1.0);
}

// Oracle: every candidate from a dense sweep plus the data points themselves.
Threshold sweep_oracle(const std::vector<double>& probs, const std::vector<int>& labels) {
  std::vector<double> candidates;
  for (int k = 0; k <= 1000; ++k) candidates.push_back(k / 1000.0);
  Threshold best{0.0, -1.0};
  for (double tau : candidates) {
    int correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) correct += ((probs[i] >= tau) == (labels[i] == 1)) ? 1 : 0;
    const double acc = static_cast<double>(correct) / probs.size();
    if (acc > best.accuracy) best = {tau, acc};
  }
  return best;
}

TEST(Calibrate, LowestTieExample) {
  const std::vector<double> probs{0.9, 0.6, 0.4};
  const std::vector<int> labels{1, 0, 1};
  const Threshold oracle = sweep_oracle(probs, labels);
  EXPECT_NEAR(oracle.accuracy, 2.0 / 3.0, 1e-12);
  const Threshold t = calibrate(probs, labels);
  EXPECT_NEAR(t.accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(t.tau, 0.0);
}

TEST(Calibrate, MatchesDenseSweepWithinOneSample) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const int n = 20 + k;
    std::vector<double> probs(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = u(rng) < 0.6 ? 1 : 0;
      probs[i] = std::clamp(0.5 + (labels[i] ? 0.2 : -0.2) + 0.3 * (u(rng) - 0.5), 0.0, 1.0);
    }
    const Threshold t = calibrate(probs, labels);
    const Threshold oracle = sweep_oracle(probs, labels);
    EXPECT_GE(t.accuracy, oracle.accuracy - 1e-12);
    EXPECT_LE(t.accuracy - oracle.accuracy, 1.0 / n + 1e-12);
  }
}

TEST(Calibrate, RejectsEmptyOrMismatchedInput) {
  EXPECT_THROW(calibrate(std::vector<double>{}, std::vector<int>{}), CalibrationError);
  EXPECT_THROW(calibrate(std::vector<double>{0.5}, std::vector<int>{1, 0}), CalibrationError);
}

}  // namespace
}  // namespace annulus
