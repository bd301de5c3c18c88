#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "annulus/targets.hpp"

namespace annulus {

/// Network hyper-parameters. Stage k (1-based) has
/// base_channels * 2^min(k-1, 2) channels.
struct ModelConfig {
  int input_size = 128;
  int n_downsamples = 5;
  int base_channels = 16;
  int groups = 8;
  int n_landmarks = 2;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& cfg);
int grid_size(const ModelConfig& cfg);
PatchGrid patch_grid(const ModelConfig& cfg);
std::vector<int> stage_channels(const ModelConfig& cfg);

template <class T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::size_t size() const { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named tensors in a fixed order. Gradients and optimizer moments use the
/// same layout as the parameters they belong to.
template <class T>
struct ParameterSet {
  std::vector<Tensor<T>> tensors;

  std::size_t count() const;
  const Tensor<T>* find(const std::string& name) const;
  ParameterSet zeros_like() const;
  void set_zero();
  /// this += other, tensor by tensor.
  void accumulate(const ParameterSet& other);

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

template <class To, class From>
ParameterSet<To> convert(const ParameterSet<From>& p) {
  ParameterSet<To> out;
  for (const auto& t : p.tensors) {
    out.tensors.push_back({t.name, t.shape, std::vector<To>(t.data.begin(), t.data.end())});
  }
  return out;
}

/// Per-landmark network outputs on the patch grid.
///
/// Layouts (cells = grid_h * grid_w, component 0 = x, 1 = y):
///   cls_logits [L][cells], reg / disp_fwd / disp_bwd [L][2][cells].
/// `reg` is in signed-log units; the displacements are in pixels.
template <class T>
struct PredictionMaps {
  int n_landmarks = 0;
  PatchGrid grid;
  std::vector<T> cls_logits;
  std::vector<T> reg;
  std::vector<T> disp_fwd;
  std::vector<T> disp_bwd;

  static PredictionMaps zeros(int n_landmarks, const PatchGrid& grid);
  int cells() const { return grid.cells(); }
  std::size_t reg_index(int landmark, int component, int cell) const {
    return (static_cast<std::size_t>(landmark) * 2 + component) * cells() + cell;
  }
};

/// Intermediate activations kept by forward() for backward().
template <class T>
struct ForwardCache {
  std::vector<std::vector<T>> activations;
  std::vector<std::vector<T>> columns;     // im2col buffers, per conv op
  std::vector<std::vector<double>> stats;  // group-norm mean/rstd, per norm op
};

/// ResNet-like fully convolutional network on a 3-frame window.
///
/// Trunk: n_downsamples residual stages, each
///   conv3x3/2 -> GN -> ReLU -> conv3x3 -> GN, plus a 1x1/2 projection
///   shortcut, summed and rectified.
/// Heads (three 1x1 convolutions each, ReLU between):
///   classification -> L logits, regression -> 6L linear maps
///   (reg, forward displacement, backward displacement).
template <class T>
class Network {
 public:
  explicit Network(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  PatchGrid grid() const { return patch_grid(cfg_); }
  std::size_t window_size() const;

  /// Kaiming-normal weights (std sqrt(2 / fan_in)), zero biases, unit GN scales.
  ParameterSet<T> init(std::mt19937_64& rng) const;
  ParameterSet<T> zero_parameters() const;

  /// `window` is 3 x input_size x input_size (previous, current, next frame).
  /// Throws ShapeError on a size mismatch. Pass a cache to enable backward().
  PredictionMaps<T> forward(const ParameterSet<T>& params, std::span<const T> window,
                            ForwardCache<T>* cache = nullptr) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(outputs).
  void backward(const ParameterSet<T>& params, const ForwardCache<T>& cache,
                const PredictionMaps<T>& grad_out, ParameterSet<T>& grads) const;

 private:
  struct Shape {
    int c, h, w;
    std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  };
  struct ConvSpec {
    int in_c, out_c, kernel, stride, pad;
    int weight, bias;
  };
  struct NormSpec {
    int channels, groups;
    int gamma, beta;
  };
  enum class OpKind { conv, norm, relu, add };
  struct Op {
    OpKind kind;
    int spec;  // index into convs_ / norms_, or -1
    int in0;
    int in1;
    int out;
  };

  int add_tensor(Shape s);
  int conv(int in, int out_c, int kernel, int stride, const std::string& name);
  int norm(int in, const std::string& name);
  int relu(int in);
  int add(int a, int b);

  ModelConfig cfg_;
  std::vector<Shape> shapes_;
  std::vector<ConvSpec> convs_;
  std::vector<NormSpec> norms_;
  std::vector<Op> ops_;
  std::vector<std::string> param_names_;
  std::vector<std::vector<int>> param_shapes_;
  std::vector<int> conv_op_slot_;  // per op: conv index if it needs im2col, else -1
  int cls_out_ = -1;
  int reg_out_ = -1;
};

extern template class Network<float>;
extern template class Network<double>;

/// Builds the 3-channel window for frame t, duplicating the edge frame when a
/// neighbor is missing.
template <class T, class FrameSeq>
std::vector<T> make_window(const FrameSeq& frames, int t) {
  const int n = static_cast<int>(frames.size());
  const int idx[3] = {t > 0 ? t - 1 : t, t, t + 1 < n ? t + 1 : t};
  const std::size_t plane = frames[t].data.size();
  std::vector<T> out(3 * plane);
  for (int c = 0; c < 3; ++c) {
    const auto& src = frames[idx[c]].data;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = static_cast<T>(src[i]);
  }
  return out;
}

}  // namespace annulus
