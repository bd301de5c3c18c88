#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "annulus/checkpoint.hpp"
#include "annulus/errors.hpp"
#include "annulus/model.hpp"
#include "test_helpers.hpp"

namespace annulus {
namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.n_downsamples = 3;
  cfg.base_channels = 4;
  cfg.groups = 2;
  cfg.n_landmarks = 1;
  return cfg;
}

template <class T>
std::vector<T> random_window(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> w(n);
  for (auto& v : w) v = static_cast<T>(u(rng));
  return w;
}

// Fixed random linear functional of every output map.
template <class T>
struct Probe {
  std::vector<double> a, b, c, d;

  explicit Probe(const PredictionMaps<T>& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    auto fill = [&](std::vector<double>& v, std::size_t k) {
      v.resize(k);
      for (auto& x : v) x = n(rng);
    };
    fill(a, shape.cls_logits.size());
    fill(b, shape.reg.size());
    fill(c, shape.disp_fwd.size());
    fill(d, shape.disp_bwd.size());
  }

  double value(const PredictionMaps<T>& m) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * m.cls_logits[i];
    for (std::size_t i = 0; i < b.size(); ++i) s += b[i] * m.reg[i];
    for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * m.disp_fwd[i];
    for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * m.disp_bwd[i];
    return s;
  }

  PredictionMaps<T> gradient(const PredictionMaps<T>& m, double scale = 1.0) const {
    PredictionMaps<T> g = m;
    auto put = [&](std::vector<T>& dst, const std::vector<double>& src) {
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(scale * src[i]);
    };
    put(g.cls_logits, a);
    put(g.reg, b);
    put(g.disp_fwd, c);
    put(g.disp_bwd, d);
    return g;
  }
};

// Per-parameter mode bounds each entry's error against the largest of the
// two values and 1% of the largest gradient. Aggregate mode bounds the
// relative error of the whole sampled vector, which tolerates the rare
// parameter whose +-eps step crosses a ReLU kink.
template <class T>
void check_gradient(double eps, double tol, bool aggregate) {
  const ModelConfig cfg = micro_config();
  const Network<T> net(cfg);
  std::mt19937_64 rng(7);
  ParameterSet<T> params = net.init(rng);
  const auto window = random_window<T>(net.window_size(), 8);
  ForwardCache<T> cache;
  const PredictionMaps<T> out = net.forward(params, window, &cache);
  const Probe<T> probe(out, 9);
  ParameterSet<T> grads = params.zeros_like();
  net.backward(params, cache, probe.gradient(out), grads);

  double gmax = 0.0;
  for (const auto& t : grads.tensors) {
    for (T v : t.data) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
  }
  std::mt19937_64 pick(10);
  double diff2 = 0.0, ana2 = 0.0, num2 = 0.0;
  for (int checked = 0; checked < 100; ++checked) {
    const std::size_t ti = pick() % params.tensors.size();
    auto& tensor = params.tensors[ti];
    const std::size_t i = pick() % tensor.size();
    const T saved = tensor.data[i];
    tensor.data[i] = static_cast<T>(saved + eps);
    const double up = probe.value(net.forward(params, window));
    tensor.data[i] = static_cast<T>(saved - eps);
    const double down = probe.value(net.forward(params, window));
    tensor.data[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads.tensors[ti].data[i];
    diff2 += (numeric - analytic) * (numeric - analytic);
    ana2 += analytic * analytic;
    num2 += numeric * numeric;
    if (!aggregate) {
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-2 * gmax});
      EXPECT_LT(std::abs(numeric - analytic) / denom, tol) << tensor.name << "[" << i << "]";
    }
  }
  EXPECT_LT(std::sqrt(diff2) / std::sqrt(std::max(ana2, num2)), tol);
}

TEST(ModelConfig, GridSizeFollowsStride) {
  ModelConfig cfg;
  EXPECT_EQ(grid_size(cfg), 4);
  for (int n = 1; n <= 6; ++n) {
    cfg.input_size = 512;
    cfg.n_downsamples = n;
    EXPECT_EQ(grid_size(cfg), 512 >> n);
    EXPECT_EQ(patch_grid(cfg).stride, 1 << n);
  }
}

TEST(ModelConfig, InvalidConfigsRejected) {
  ModelConfig cfg;
  cfg.input_size = 100;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.base_channels = 12;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.n_landmarks = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  EXPECT_THROW(Network<float>{cfg}, ConfigError);
}

TEST(Network, OutputShapes) {
  ModelConfig cfg;
  cfg.base_channels = 8;
  const Network<float> net(cfg);
  std::mt19937_64 rng(1);
  const auto params = net.init(rng);
  const auto out = net.forward(params, random_window<float>(net.window_size(), 2));
  EXPECT_EQ(net.window_size(), 3u * 128 * 128);
  EXPECT_EQ(out.grid.grid_h, 4);
  EXPECT_EQ(out.cls_logits.size(), 2u * 16);
  EXPECT_EQ(out.reg.size(), 2u * 2 * 16);
  EXPECT_EQ(out.disp_fwd.size(), 2u * 2 * 16);
  EXPECT_EQ(out.disp_bwd.size(), 2u * 2 * 16);
  for (float v : out.reg) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(net.forward(params, std::vector<float>(10)), ShapeError);
}

TEST(Network, ForwardIsPure) {
  const Network<float> net(micro_config());
  std::mt19937_64 rng(3);
  const auto params = net.init(rng);
  const auto w = random_window<float>(net.window_size(), 4);
  const auto a = net.forward(params, w);
  const auto b = net.forward(params, w);
  EXPECT_EQ(a.cls_logits, b.cls_logits);
  EXPECT_EQ(a.reg, b.reg);
  EXPECT_EQ(a.disp_fwd, b.disp_fwd);
}

TEST(Network, ZeroInputGivesSpatiallyConstantLogits) {
  ModelConfig cfg;
  cfg.input_size = 256;
  cfg.base_channels = 8;
  const Network<float> net(cfg);
  std::mt19937_64 rng(5);
  const auto params = net.init(rng);
  const auto out = net.forward(params, std::vector<float>(net.window_size(), 0.0f));
  const int g = out.grid.grid_w;
  for (int l = 0; l < cfg.n_landmarks; ++l) {
    float lo = 1e30f, hi = -1e30f;
    for (int i = 1; i < g - 1; ++i) {
      for (int j = 1; j < g - 1; ++j) {
        const float v = out.cls_logits[l * g * g + i * g + j];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    EXPECT_LT(hi - lo, 1e-5f);
  }
}

TEST(Network, TranslationCovariantOnInteriorCells) {
  ModelConfig cfg;
  cfg.input_size = 512;
  cfg.base_channels = 4;
  cfg.groups = 4;
  cfg.n_landmarks = 1;
  const Network<double> net(cfg);
  std::mt19937_64 rng(6);
  const auto params = net.init(rng);
  const int n = 512;
  const int shift = 32;
  std::vector<double> a(net.window_size(), 0.0), b(net.window_size(), 0.0);
  std::mt19937_64 pix(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 208; y < 272; ++y) {
      for (int x = 208; x < 272; ++x) {
        const double v = u(pix);
        a[(c * n + y) * n + x] = v;
        b[(c * n + y) * n + x + shift] = v;
      }
    }
  }
  const auto oa = net.forward(params, a);
  const auto ob = net.forward(params, b);
  const int g = oa.grid.grid_w;
  for (int i = 4; i <= 10; ++i) {
    for (int j = 4; j <= 10; ++j) {
      EXPECT_NEAR(ob.cls_logits[i * g + j + 1], oa.cls_logits[i * g + j], 1e-4) << i << "," << j;
      for (int comp = 0; comp < 2; ++comp) {
        EXPECT_NEAR(ob.reg[ob.reg_index(0, comp, i * g + j + 1)], oa.reg[oa.reg_index(0, comp, i * g + j)], 1e-4);
      }
    }
  }
}

TEST(Init, SameSeedSameParameters) {
  const Network<float> net(micro_config());
  std::mt19937_64 a(11), b(11), c(12);
  const auto pa = net.init(a);
  EXPECT_EQ(pa, net.init(b));
  EXPECT_NE(pa, net.init(c));
}

TEST(Init, BiasesZeroAndGroupNormUnit) {
  ModelConfig cfg;
  const Network<float> net(cfg);
  std::mt19937_64 rng(1);
  const auto params = net.init(rng);
  int biases = 0;
  for (const auto& t : params.tensors) {
    const bool bias = t.name.ends_with(".bias") || t.name.ends_with(".beta");
    if (bias) {
      ++biases;
      for (float v : t.data) EXPECT_EQ(v, 0.0f) << t.name;
    }
    if (t.name.ends_with(".gamma")) {
      for (float v : t.data) EXPECT_EQ(v, 1.0f) << t.name;
    }
  }
  EXPECT_GT(biases, 0);
}

TEST(Init, WeightStdMatchesFanIn) {
  ModelConfig cfg;
  const Network<double> net(cfg);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto params = net.init(rng);
    for (const auto& t : params.tensors) {
      if (!t.name.ends_with(".weight")) continue;
      ASSERT_EQ(t.shape.size(), 4u) << t.name;
      const double fan_in = static_cast<double>(t.shape[1]) * t.shape[2] * t.shape[3];
      double ss = 0.0;
      for (double v : t.data) ss += v * v;
      const double sd = std::sqrt(ss / t.size());
      EXPECT_NEAR(sd / std::sqrt(2.0 / fan_in), 1.0, 0.2) << t.name << " seed " << seed;
    }
  }
}

TEST(Gradient, MatchesFiniteDifferencesDouble) { check_gradient<double>(1e-5, 1e-4, false); }

TEST(Gradient, MatchesFiniteDifferencesFloat) { check_gradient<float>(1e-3, 1e-2, true); }

TEST(Gradient, ZeroLossGivesZeroGradient) {
  const Network<float> net(micro_config());
  std::mt19937_64 rng(2);
  const auto params = net.init(rng);
  ForwardCache<float> cache;
  const auto out = net.forward(params, random_window<float>(net.window_size(), 3), &cache);
  ParameterSet<float> grads = params.zeros_like();
  net.backward(params, cache, Probe<float>(out, 4).gradient(out, 0.0), grads);
  for (const auto& t : grads.tensors) {
    for (float v : t.data) ASSERT_EQ(v, 0.0f) << t.name;
  }
}

TEST(Gradient, Deterministic) {
  const Network<float> net(micro_config());
  std::mt19937_64 rng(2);
  const auto params = net.init(rng);
  const auto w = random_window<float>(net.window_size(), 3);
  auto run = [&] {
    ForwardCache<float> cache;
    const auto out = net.forward(params, w, &cache);
    ParameterSet<float> grads = params.zeros_like();
    net.backward(params, cache, Probe<float>(out, 4).gradient(out), grads);
    return grads;
  };
  EXPECT_EQ(run(), run());
}

TEST(MakeWindow, DuplicatesEdgeFrames) {
  std::vector<Image> frames;
  for (int t = 0; t < 3; ++t) {
    Image f(1, 2);
    f.data = {static_cast<float>(t), static_cast<float>(10 + t)};
    frames.push_back(f);
  }
  EXPECT_EQ(make_window<float>(frames, 0), (std::vector<float>{0, 10, 0, 10, 1, 11}));
  EXPECT_EQ(make_window<float>(frames, 1), (std::vector<float>{0, 10, 1, 11, 2, 12}));
  EXPECT_EQ(make_window<float>(frames, 2), (std::vector<float>{1, 11, 2, 12, 2, 12}));
}

Checkpoint sample_checkpoint() {
  const Network<float> net(micro_config());
  std::mt19937_64 rng(21);
  Checkpoint c;
  c.config = micro_config();
  c.params = net.init(rng);
  c.adam_m = c.params;
  c.adam_v = c.params.zeros_like();
  c.step = 17;
  std::ostringstream s;
  s << rng;
  c.rng_state = s.str();
  return c;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(dir / "m.ckpt", c);
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt"), c);
  EXPECT_EQ(testing::slurp(dir / "m.ckpt").substr(0, 4), "ALCK");
  Checkpoint bare = c;
  bare.adam_m = {};
  bare.adam_v = {};
  save_checkpoint(dir / "b.ckpt", bare);
  EXPECT_EQ(load_checkpoint(dir / "b.ckpt"), bare);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  testing::TempDir dir("ckpt_trunc");
  save_checkpoint(dir / "m.ckpt", sample_checkpoint());
  const std::string bytes = testing::slurp(dir / "m.ckpt");
  for (std::size_t keep : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, keep);
    EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), FormatError) << keep;
  }
  std::string bad = bytes;
  bad[4] = 9;  // version
  std::ofstream(dir / "v.ckpt", std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint(dir / "v.ckpt"), FormatError);
}

TEST(Checkpoint, MismatchedConfigRefused) {
  testing::TempDir dir("ckpt_cfg");
  save_checkpoint(dir / "m.ckpt", sample_checkpoint());
  ModelConfig other = micro_config();
  other.base_channels = 8;
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), ConfigError);
  EXPECT_NO_THROW(load_checkpoint(dir / "m.ckpt", micro_config()));
}

}  // namespace
}  // namespace annulus
