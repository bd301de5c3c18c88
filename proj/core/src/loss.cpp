#include "annulus/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "annulus/errors.hpp"

namespace annulus {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": size " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

template <class T>
void check_grid(const PredictionMaps<T>& a, const PredictionMaps<T>& b) {
  if (!(a.grid == b.grid) || a.n_landmarks != b.n_landmarks) {
    throw ShapeError("temp_loss: prediction maps do not share a grid");
  }
}

// Offsets beyond twice the image extent carry no location information; the
// regression value is clamped there so untrained outputs cannot blow up the
// consistency term.
template <class T>
double reg_limit(const PredictionMaps<T>& m) {
  return signed_log(2.0 * std::max(m.grid.image_width(), m.grid.image_height()));
}

template <class T>
double location(const PredictionMaps<T>& m, int l, int comp, int cell) {
  const int i = cell / m.grid.grid_w;
  const int j = cell % m.grid.grid_w;
  const double center = comp == 0 ? (j + 0.5) * m.grid.stride : (i + 0.5) * m.grid.stride;
  const double lim = reg_limit(m);
  const double r = std::clamp(static_cast<double>(m.reg[m.reg_index(l, comp, cell)]), -lim, lim);
  return center + inverse_signed_log(r);
}

// d location / d reg; zero where the clamp is active
template <class T>
double location_slope(const PredictionMaps<T>& m, int l, int comp, int cell) {
  const double r = std::abs(static_cast<double>(m.reg[m.reg_index(l, comp, cell)]));
  return r > reg_limit(m) ? 0.0 : std::exp(r);
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(term, std::string("non-finite ") + term + " loss");
}

}  // namespace

template <class T>
double cls_loss(std::span<const T> logits, std::span<const float> target, std::span<T> grad, double scale) {
  check_same(logits.size(), target.size(), "cls_loss");
  if (!grad.empty()) check_same(logits.size(), grad.size(), "cls_loss gradient");
  const std::size_t n = logits.size();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits[i];
    const double t = target[i];
    sum += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    if (!grad.empty()) {
      const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      grad[i] += static_cast<T>(scale * (p - t) / n);
    }
  }
  return sum / n;
}

template <class T>
double reg_loss(std::span<const T> pred, std::span<const float> target, std::span<const float> mask,
                int n_landmarks, std::span<T> grad, double scale) {
  check_same(pred.size(), target.size(), "reg_loss");
  check_same(pred.size(), 2 * mask.size(), "reg_loss mask");
  if (!grad.empty()) check_same(pred.size(), grad.size(), "reg_loss gradient");
  if (n_landmarks <= 0 || mask.size() % n_landmarks != 0) {
    throw ShapeError("reg_loss: mask size is not a multiple of the landmark count");
  }
  const std::size_t cells = mask.size() / n_landmarks;
  double count = 0.0;
  for (float m : mask) count += m;
  if (count == 0.0) return 0.0;
  double sum = 0.0;
  for (int l = 0; l < n_landmarks; ++l) {
    for (std::size_t c = 0; c < cells; ++c) {
      const double m = mask[l * cells + c];
      if (m == 0.0) continue;
      for (int comp = 0; comp < 2; ++comp) {
        const std::size_t i = (static_cast<std::size_t>(l) * 2 + comp) * cells + c;
        const double e = static_cast<double>(pred[i]) - target[i];
        sum += m * std::abs(e);
        if (!grad.empty()) grad[i] += static_cast<T>(scale * m * sign(e) / count);
      }
    }
  }
  return sum / count;
}

template <class T>
double temp_loss(const PredictionMaps<T>* prev, const PredictionMaps<T>& cur, const PredictionMaps<T>* next,
                 PredictionMaps<T>* grad_prev, PredictionMaps<T>* grad_cur, PredictionMaps<T>* grad_next,
                 double scale, std::span<const double> cell_weights) {
  if (prev) check_grid(*prev, cur);
  if (next) check_grid(*next, cur);
  const int L = cur.n_landmarks;
  const int cells = cur.cells();
  const double n = static_cast<double>(L) * cells;
  if (n == 0.0) return 0.0;
  if (!cell_weights.empty()) check_same(cell_weights.size(), static_cast<std::size_t>(n), "temp_loss weights");
  double sum = 0.0;
  for (int l = 0; l < L; ++l) {
    for (int comp = 0; comp < 2; ++comp) {
      for (int cell = 0; cell < cells; ++cell) {
        const std::size_t idx = cur.reg_index(l, comp, cell);
        const double w = cell_weights.empty() ? 1.0 : cell_weights[l * cells + cell];
        const double here = location(cur, l, comp, cell);
        auto term = [&](const PredictionMaps<T>* nb, const std::vector<T>& disp, PredictionMaps<T>* grad_nb,
                        std::vector<T>* grad_disp) {
          if (!nb) return;
          const double e = here + static_cast<double>(disp[idx]) - location(*nb, l, comp, cell);
          sum += w * std::abs(e);
          const double g = scale * w * sign(e) / n;
          if (g == 0.0) return;
          if (grad_cur) {
            grad_cur->reg[idx] += static_cast<T>(g * location_slope(cur, l, comp, cell));
            (*grad_disp)[idx] += static_cast<T>(g);
          }
          if (grad_nb) grad_nb->reg[idx] -= static_cast<T>(g * location_slope(*nb, l, comp, cell));
        };
        term(next, cur.disp_fwd, grad_next, grad_cur ? &grad_cur->disp_fwd : nullptr);
        term(prev, cur.disp_bwd, grad_prev, grad_cur ? &grad_cur->disp_bwd : nullptr);
      }
    }
  }
  return sum / n;
}

template <class T>
std::vector<double> probability_weights(const PredictionMaps<T>& maps) {
  const int L = maps.n_landmarks;
  const int cells = maps.cells();
  std::vector<double> w(static_cast<std::size_t>(L) * cells, 1.0);
  for (int l = 0; l < L; ++l) {
    double total = 0.0;
    for (int c = 0; c < cells; ++c) {
      const double x = maps.cls_logits[l * cells + c];
      const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      w[l * cells + c] = p;
      total += p;
    }
    for (int c = 0; c < cells; ++c) w[l * cells + c] = total > 0.0 ? w[l * cells + c] * cells / total : 1.0;
  }
  return w;
}

template <class T>
LossBreakdown total_loss(std::span<const VideoLossInput<T>> batch, const LossWeights& weights) {
  if (!(weights.beta >= 0.0)) throw ConfigError("loss: beta must be >= 0");
  int videos_annotated = 0;
  for (const auto& video : batch) {
    for (const auto& f : video) {
      if (f.targets) {
        ++videos_annotated;
        break;
      }
    }
  }
  if (videos_annotated == 0 && weights.beta == 0.0) {
    throw DegenerateBatchError("batch has no annotated frames and beta is 0: nothing to optimize");
  }
  const int n_videos = static_cast<int>(batch.size());

  LossBreakdown out;
  for (const auto& video : batch) {
    const int T_all = static_cast<int>(video.size());
    int T_a = 0;
    for (const auto& f : video) T_a += f.targets ? 1 : 0;

    if (T_a > 0) {
      const double s = 1.0 / (static_cast<double>(videos_annotated) * T_a);
      for (const auto& f : video) {
        if (!f.targets) continue;
        const PredictionMaps<T>& p = *f.pred;
        std::span<T> gc = f.grad ? std::span<T>(f.grad->cls_logits) : std::span<T>();
        std::span<T> gr = f.grad ? std::span<T>(f.grad->reg) : std::span<T>();
        out.cls += s * cls_loss<T>(p.cls_logits, f.targets->cls, gc, s);
        out.reg += s * reg_loss<T>(p.reg, f.targets->reg, f.targets->reg_mask, p.n_landmarks, gr, s);
      }
    }

    // The consistency term is always evaluated for logging; it only
    // receives gradient when beta > 0. A single-frame clip has no term.
    if (T_all < 2) continue;
    const double s = 1.0 / (static_cast<double>(n_videos) * T_all);
    const double gs = weights.beta * s;
    for (int t = 0; t < T_all; ++t) {
      const auto* prev = t > 0 ? video[t - 1].pred : nullptr;
      const auto* next = t + 1 < T_all ? video[t + 1].pred : nullptr;
      auto* g_prev = (gs != 0.0 && t > 0) ? video[t - 1].grad : nullptr;
      auto* g_cur = gs != 0.0 ? video[t].grad : nullptr;
      auto* g_next = (gs != 0.0 && t + 1 < T_all) ? video[t + 1].grad : nullptr;
      std::vector<double> w;
      if (weights.temp_weighting == TempWeighting::probability) w = probability_weights(*video[t].pred);
      out.temp += s * temp_loss<T>(prev, *video[t].pred, next, g_prev, g_cur, g_next, gs, w);
    }
  }
  require_finite(out.cls, "cls");
  require_finite(out.reg, "reg");
  require_finite(out.temp, "temp");
  out.total = out.cls + out.reg + weights.beta * out.temp;
  return out;
}

#define ANNULUS_INSTANTIATE(T)                                                                         \
  template double cls_loss<T>(std::span<const T>, std::span<const float>, std::span<T>, double);      \
  template double reg_loss<T>(std::span<const T>, std::span<const float>, std::span<const float>,     \
                              int, std::span<T>, double);                                             \
  template double temp_loss<T>(const PredictionMaps<T>*, const PredictionMaps<T>&,                    \
                               const PredictionMaps<T>*, PredictionMaps<T>*, PredictionMaps<T>*,      \
                               PredictionMaps<T>*, double, std::span<const double>);                  \
  template std::vector<double> probability_weights<T>(const PredictionMaps<T>&);                       \
  template LossBreakdown total_loss<T>(std::span<const VideoLossInput<T>>, const LossWeights&);

ANNULUS_INSTANTIATE(float)
ANNULUS_INSTANTIATE(double)

#undef ANNULUS_INSTANTIATE

}  // namespace annulus
