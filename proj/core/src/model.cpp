#include "annulus/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "annulus/errors.hpp"

namespace annulus {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Mat = Eigen::Map<MatR<T>>;
template <class T>
using ConstMat = Eigen::Map<const MatR<T>>;
template <class T>
using ConstVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

constexpr double kNormEps = 1e-5;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class T>
void im2col(const T* in, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = in + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ch * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* in) {
  for (int ch = 0; ch < c; ++ch) {
    T* plane = in + static_cast<std::size_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ch * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void validate(const ModelConfig& cfg) {
  if (cfg.n_downsamples < 1) throw ConfigError("model: n_downsamples must be >= 1");
  if (cfg.input_size <= 0 || cfg.input_size % (1 << cfg.n_downsamples) != 0) {
    throw ConfigError("model: input_size must be a positive multiple of 2^n_downsamples");
  }
  if (cfg.base_channels <= 0 || cfg.groups <= 0 || cfg.base_channels % cfg.groups != 0) {
    throw ConfigError("model: base_channels must be a positive multiple of groups");
  }
  if (cfg.n_landmarks < 1) throw ConfigError("model: n_landmarks must be >= 1");
}

int grid_size(const ModelConfig& cfg) { return cfg.input_size >> cfg.n_downsamples; }

PatchGrid patch_grid(const ModelConfig& cfg) {
  return {1 << cfg.n_downsamples, grid_size(cfg), grid_size(cfg)};
}

std::vector<int> stage_channels(const ModelConfig& cfg) {
  std::vector<int> out;
  for (int k = 0; k < cfg.n_downsamples; ++k) out.push_back(cfg.base_channels << std::min(k, 2));
  return out;
}

// ParameterSet ---------------------------------------------------------------

template <class T>
std::size_t ParameterSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <class T>
const Tensor<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <class T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out = *this;
  out.set_zero();
  return out;
}

template <class T>
void ParameterSet<T>::set_zero() {
  for (auto& t : tensors) std::fill(t.data.begin(), t.data.end(), T(0));
}

template <class T>
void ParameterSet<T>::accumulate(const ParameterSet& other) {
  if (other.tensors.size() != tensors.size()) throw ShapeError("parameter sets differ in size");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& a = tensors[i].data;
    const auto& b = other.tensors[i].data;
    if (a.size() != b.size()) throw ShapeError("tensor " + tensors[i].name + " differs in size");
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
  }
}

template <class T>
PredictionMaps<T> PredictionMaps<T>::zeros(int n_landmarks, const PatchGrid& grid) {
  PredictionMaps m;
  m.n_landmarks = n_landmarks;
  m.grid = grid;
  const std::size_t cells = static_cast<std::size_t>(grid.cells());
  m.cls_logits.assign(n_landmarks * cells, T(0));
  m.reg.assign(2 * n_landmarks * cells, T(0));
  m.disp_fwd.assign(2 * n_landmarks * cells, T(0));
  m.disp_bwd.assign(2 * n_landmarks * cells, T(0));
  return m;
}

// Network --------------------------------------------------------------------

template <class T>
int Network<T>::add_tensor(Shape s) {
  shapes_.push_back(s);
  return static_cast<int>(shapes_.size()) - 1;
}

template <class T>
int Network<T>::conv(int in, int out_c, int kernel, int stride, const std::string& name) {
  const Shape s = shapes_[in];
  const int pad = kernel / 2;
  const int oh = (s.h + 2 * pad - kernel) / stride + 1;
  const int ow = (s.w + 2 * pad - kernel) / stride + 1;
  ConvSpec spec{s.c, out_c, kernel, stride, pad, static_cast<int>(param_names_.size()),
                static_cast<int>(param_names_.size()) + 1};
  param_names_.push_back(name + ".weight");
  param_shapes_.push_back({out_c, s.c, kernel, kernel});
  param_names_.push_back(name + ".bias");
  param_shapes_.push_back({out_c});
  convs_.push_back(spec);
  const int out = add_tensor({out_c, oh, ow});
  const bool needs_columns = !(kernel == 1 && stride == 1);
  conv_op_slot_.push_back(needs_columns ? static_cast<int>(convs_.size()) - 1 : -1);
  ops_.push_back({OpKind::conv, static_cast<int>(convs_.size()) - 1, in, -1, out});
  return out;
}

template <class T>
int Network<T>::norm(int in, const std::string& name) {
  const Shape s = shapes_[in];
  NormSpec spec{s.c, cfg_.groups, static_cast<int>(param_names_.size()),
                static_cast<int>(param_names_.size()) + 1};
  param_names_.push_back(name + ".gamma");
  param_shapes_.push_back({s.c});
  param_names_.push_back(name + ".beta");
  param_shapes_.push_back({s.c});
  norms_.push_back(spec);
  const int out = add_tensor(s);
  conv_op_slot_.push_back(-1);
  ops_.push_back({OpKind::norm, static_cast<int>(norms_.size()) - 1, in, -1, out});
  return out;
}

template <class T>
int Network<T>::relu(int in) {
  const int out = add_tensor(shapes_[in]);
  conv_op_slot_.push_back(-1);
  ops_.push_back({OpKind::relu, -1, in, -1, out});
  return out;
}

template <class T>
int Network<T>::add(int a, int b) {
  const int out = add_tensor(shapes_[a]);
  conv_op_slot_.push_back(-1);
  ops_.push_back({OpKind::add, -1, a, b, out});
  return out;
}

template <class T>
Network<T>::Network(const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  add_tensor({3, cfg.input_size, cfg.input_size});
  int x = 0;
  const std::vector<int> channels = stage_channels(cfg);
  for (int k = 0; k < cfg.n_downsamples; ++k) {
    if (channels[k] % cfg.groups != 0) throw ConfigError("model: stage width not divisible by groups");
    const std::string name = "stage" + std::to_string(k + 1);
    int a = relu(norm(conv(x, channels[k], 3, 2, name + ".conv1"), name + ".norm1"));
    a = norm(conv(a, channels[k], 3, 1, name + ".conv2"), name + ".norm2");
    const int shortcut = conv(x, channels[k], 1, 2, name + ".shortcut");
    x = relu(add(a, shortcut));
  }
  const int width = channels.back();
  const int L = cfg.n_landmarks;
  int c = relu(conv(x, width, 1, 1, "cls.conv1"));
  c = relu(conv(c, width, 1, 1, "cls.conv2"));
  cls_out_ = conv(c, L, 1, 1, "cls.conv3");
  int r = relu(conv(x, width, 1, 1, "reg.conv1"));
  r = relu(conv(r, width, 1, 1, "reg.conv2"));
  reg_out_ = conv(r, 6 * L, 1, 1, "reg.conv3");
}

template <class T>
std::size_t Network<T>::window_size() const {
  return shapes_.front().size();
}

template <class T>
ParameterSet<T> Network<T>::zero_parameters() const {
  ParameterSet<T> p;
  for (std::size_t i = 0; i < param_names_.size(); ++i) {
    std::size_t n = 1;
    for (int d : param_shapes_[i]) n *= static_cast<std::size_t>(d);
    p.tensors.push_back({param_names_[i], param_shapes_[i], std::vector<T>(n, T(0))});
  }
  return p;
}

template <class T>
ParameterSet<T> Network<T>::init(std::mt19937_64& rng) const {
  ParameterSet<T> p = zero_parameters();
  for (auto& t : p.tensors) {
    if (ends_with(t.name, ".weight")) {
      const int fan_in = t.shape[1] * t.shape[2] * t.shape[3];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (T& v : t.data) v = static_cast<T>(dist(rng));
    } else if (ends_with(t.name, ".gamma")) {
      std::fill(t.data.begin(), t.data.end(), T(1));
    }
  }
  return p;
}

template <class T>
PredictionMaps<T> Network<T>::forward(const ParameterSet<T>& params, std::span<const T> window,
                                      ForwardCache<T>* cache) const {
  if (window.size() != window_size()) {
    throw ShapeError("forward: window has " + std::to_string(window.size()) + " values, expected " +
                     std::to_string(window_size()));
  }
  if (params.tensors.size() != param_names_.size()) {
    throw ShapeError("forward: parameter set does not match the network");
  }
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.activations.resize(shapes_.size());
  c.columns.resize(convs_.size());
  c.stats.resize(norms_.size());
  c.activations[0].assign(window.begin(), window.end());

  for (std::size_t oi = 0; oi < ops_.size(); ++oi) {
    const Op& op = ops_[oi];
    const Shape& si = shapes_[op.in0];
    const Shape& so = shapes_[op.out];
    const std::vector<T>& in = c.activations[op.in0];
    std::vector<T>& out = c.activations[op.out];
    out.resize(so.size());
    switch (op.kind) {
      case OpKind::conv: {
        const ConvSpec& cs = convs_[op.spec];
        const int K = cs.in_c * cs.kernel * cs.kernel;
        const int N = so.h * so.w;
        const T* col = in.data();
        if (conv_op_slot_[oi] >= 0) {
          std::vector<T>& buf = c.columns[op.spec];
          buf.resize(static_cast<std::size_t>(K) * N);
          im2col(in.data(), si.c, si.h, si.w, cs.kernel, cs.stride, cs.pad, so.h, so.w, buf.data());
          col = buf.data();
        }
        ConstMat<T> W(params.tensors[cs.weight].data.data(), cs.out_c, K);
        ConstMat<T> C(col, K, N);
        Mat<T> Y(out.data(), cs.out_c, N);
        Y.noalias() = W * C;
        Y.colwise() += ConstVec<T>(params.tensors[cs.bias].data.data(), cs.out_c);
        break;
      }
      case OpKind::norm: {
        const NormSpec& ns = norms_[op.spec];
        const int per_group = ns.channels / ns.groups;
        const std::size_t hw = static_cast<std::size_t>(si.h) * si.w;
        const std::size_t n = per_group * hw;
        std::vector<double>& st = c.stats[op.spec];
        st.resize(2 * ns.groups);
        const T* gamma = params.tensors[ns.gamma].data.data();
        const T* beta = params.tensors[ns.beta].data.data();
        for (int g = 0; g < ns.groups; ++g) {
          const T* x = in.data() + g * n;
          double sum = 0.0;
          for (std::size_t i = 0; i < n; ++i) sum += x[i];
          const double mean = sum / n;
          double var = 0.0;
          for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
          var /= n;
          const double rstd = 1.0 / std::sqrt(var + kNormEps);
          st[2 * g] = mean;
          st[2 * g + 1] = rstd;
          for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
            const T* xc = in.data() + ch * hw;
            T* yc = out.data() + ch * hw;
            const T scale = static_cast<T>(gamma[ch] * rstd);
            const T shift = static_cast<T>(beta[ch] - gamma[ch] * rstd * mean);
            for (std::size_t i = 0; i < hw; ++i) yc[i] = xc[i] * scale + shift;
          }
        }
        break;
      }
      case OpKind::relu:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
        break;
      case OpKind::add: {
        const std::vector<T>& b = c.activations[op.in1];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + b[i];
        break;
      }
    }
  }

  const PatchGrid g = grid();
  const int L = cfg_.n_landmarks;
  const std::size_t cells = g.cells();
  PredictionMaps<T> maps;
  maps.n_landmarks = L;
  maps.grid = g;
  const std::vector<T>& cls = c.activations[cls_out_];
  const std::vector<T>& reg = c.activations[reg_out_];
  maps.cls_logits.assign(cls.begin(), cls.end());
  maps.reg.assign(reg.begin(), reg.begin() + 2 * L * cells);
  maps.disp_fwd.assign(reg.begin() + 2 * L * cells, reg.begin() + 4 * L * cells);
  maps.disp_bwd.assign(reg.begin() + 4 * L * cells, reg.end());
  return maps;
}

template <class T>
void Network<T>::backward(const ParameterSet<T>& params, const ForwardCache<T>& cache,
                          const PredictionMaps<T>& grad_out, ParameterSet<T>& grads) const {
  if (cache.activations.size() != shapes_.size()) throw ShapeError("backward: cache is not populated");
  if (grads.tensors.size() != param_names_.size()) throw ShapeError("backward: gradient set mismatch");
  const int L = cfg_.n_landmarks;
  const std::size_t cells = grid().cells();
  if (grad_out.cls_logits.size() != L * cells || grad_out.reg.size() != 2 * L * cells ||
      grad_out.disp_fwd.size() != 2 * L * cells || grad_out.disp_bwd.size() != 2 * L * cells) {
    throw ShapeError("backward: output gradient has the wrong shape");
  }

  std::vector<std::vector<T>> d(shapes_.size());
  auto grad_of = [&](int idx) -> std::vector<T>& {
    if (d[idx].empty()) d[idx].assign(shapes_[idx].size(), T(0));
    return d[idx];
  };
  d[cls_out_] = grad_out.cls_logits;
  {
    std::vector<T>& r = grad_of(reg_out_);
    std::copy(grad_out.reg.begin(), grad_out.reg.end(), r.begin());
    std::copy(grad_out.disp_fwd.begin(), grad_out.disp_fwd.end(), r.begin() + 2 * L * cells);
    std::copy(grad_out.disp_bwd.begin(), grad_out.disp_bwd.end(), r.begin() + 4 * L * cells);
  }

  std::vector<T> dcol;
  for (std::size_t oi = ops_.size(); oi-- > 0;) {
    const Op& op = ops_[oi];
    if (d[op.out].empty()) continue;  // no gradient reaches this op
    const std::vector<T>& dy = d[op.out];
    const Shape& si = shapes_[op.in0];
    const Shape& so = shapes_[op.out];
    switch (op.kind) {
      case OpKind::conv: {
        const ConvSpec& cs = convs_[op.spec];
        const int K = cs.in_c * cs.kernel * cs.kernel;
        const int N = so.h * so.w;
        const bool has_cols = conv_op_slot_[oi] >= 0;
        const T* col = has_cols ? cache.columns[op.spec].data() : cache.activations[op.in0].data();
        ConstMat<T> dY(dy.data(), cs.out_c, N);
        ConstMat<T> C(col, K, N);
        Mat<T> dW(grads.tensors[cs.weight].data.data(), cs.out_c, K);
        dW.noalias() += dY * C.transpose();
        // Plain loop: Eigen's vectorized row sums depend on buffer alignment.
        T* db = grads.tensors[cs.bias].data.data();
        for (int c = 0; c < cs.out_c; ++c) {
          double s = 0.0;
          for (int k = 0; k < N; ++k) s += dy[static_cast<std::size_t>(c) * N + k];
          db[c] += static_cast<T>(s);
        }
        if (op.in0 == 0) break;  // no gradient w.r.t. the input window
        ConstMat<T> W(params.tensors[cs.weight].data.data(), cs.out_c, K);
        std::vector<T>& dx = grad_of(op.in0);
        if (has_cols) {
          dcol.resize(static_cast<std::size_t>(K) * N);
          Mat<T> dC(dcol.data(), K, N);
          dC.noalias() = W.transpose() * dY;
          col2im(dcol.data(), si.c, si.h, si.w, cs.kernel, cs.stride, cs.pad, so.h, so.w, dx.data());
        } else {
          Mat<T> dX(dx.data(), K, N);
          dX.noalias() += W.transpose() * dY;
        }
        break;
      }
      case OpKind::norm: {
        const NormSpec& ns = norms_[op.spec];
        const int per_group = ns.channels / ns.groups;
        const std::size_t hw = static_cast<std::size_t>(si.h) * si.w;
        const std::size_t n = per_group * hw;
        const std::vector<double>& st = cache.stats[op.spec];
        const std::vector<T>& x = cache.activations[op.in0];
        const T* gamma = params.tensors[ns.gamma].data.data();
        T* dgamma = grads.tensors[ns.gamma].data.data();
        T* dbeta = grads.tensors[ns.beta].data.data();
        std::vector<T>& dx = grad_of(op.in0);
        for (int g = 0; g < ns.groups; ++g) {
          const double mean = st[2 * g];
          const double rstd = st[2 * g + 1];
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
            double dg = 0.0;
            double dbt = 0.0;
            for (std::size_t i = ch * hw; i < (ch + 1) * hw; ++i) {
              const double xhat = (x[i] - mean) * rstd;
              dg += dy[i] * xhat;
              dbt += dy[i];
              const double dxhat = dy[i] * gamma[ch];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            dgamma[ch] += static_cast<T>(dg);
            dbeta[ch] += static_cast<T>(dbt);
          }
          const double m1 = sum_dxhat / n;
          const double m2 = sum_dxhat_xhat / n;
          for (int ch = g * per_group; ch < (g + 1) * per_group; ++ch) {
            for (std::size_t i = ch * hw; i < (ch + 1) * hw; ++i) {
              const double xhat = (x[i] - mean) * rstd;
              dx[i] += static_cast<T>(rstd * (dy[i] * gamma[ch] - m1 - xhat * m2));
            }
          }
        }
        break;
      }
      case OpKind::relu: {
        const std::vector<T>& y = cache.activations[op.out];
        std::vector<T>& dx = grad_of(op.in0);
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (y[i] > T(0)) dx[i] += dy[i];
        }
        break;
      }
      case OpKind::add: {
        std::vector<T>& da = grad_of(op.in0);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
        std::vector<T>& db = grad_of(op.in1);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i];
        break;
      }
    }
  }
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template struct PredictionMaps<float>;
template struct PredictionMaps<double>;
template class Network<float>;
template class Network<double>;

}  // namespace annulus
