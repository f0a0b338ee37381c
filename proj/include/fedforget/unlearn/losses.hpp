#pragma once

// Unlearning objective: distillation from an incompetent teacher, attention
// map alignment, bounded hard loss and the anchor regularizer.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/nn/ops.hpp"

namespace ff {

struct UnlearnConfig {
  double mu_D = 0.33;
  double mu_AMA = 0.33;
  double mu_H = 0.33;
  double temp = 2.0;
  double q = 2.0;
  double bnd = 15.0;
  double lambda_reg = 0.4;
  double lr_unlearn = 5e-3;
  int epochs = 5;
  std::size_t batch_size = 100;
  std::vector<std::string> tap_layers;  // empty: the architecture's default tap
  bool lr_decay = false;                // multiply lr by lr_decay_factor per epoch
  double lr_decay_factor = 0.9;
  bool legacy_unbounded_hard = false;   // L_H = -sum CE instead of the bounded form
  // Per-step scaling of the summed L_D and L_H batch terms: `mean` divides
  // them by the batch size, `sum` uses the raw sums.
  enum class Reduction { mean, sum } reduction = Reduction::mean;
  std::uint64_t seed = 0;

  void validate() const {
    FF_EXPECT(mu_D >= 0 && mu_AMA >= 0 && mu_H >= 0 && lambda_reg >= 0, ConfigError,
              "unlearning weights must be non-negative");
    FF_EXPECT(mu_D + mu_AMA + mu_H + lambda_reg > 0, ConfigError,
              "at least one unlearning weight must be positive");
    FF_EXPECT(temp > 0, ConfigError, "temp must be > 0");
    FF_EXPECT(q >= 1, ConfigError, "q must be >= 1");
    FF_EXPECT(bnd >= 0, ConfigError, "bnd must be >= 0");
    FF_EXPECT(lr_unlearn > 0, ConfigError, "lr_unlearn must be > 0");
    FF_EXPECT(epochs >= 0, ConfigError, "epochs must be >= 0");
    FF_EXPECT(batch_size > 0, ConfigError, "batch_size must be > 0");
    FF_EXPECT(lr_decay_factor > 0 && lr_decay_factor <= 1, ConfigError,
              "lr_decay_factor must lie in (0,1]");
  }

  std::vector<std::string> taps_for(const ArchSpec& arch) const {
    if (!tap_layers.empty()) return tap_layers;
    FF_EXPECT(!arch.tap_layers.empty(), ConfigError, arch.id + " exposes no tap layers");
    return {arch.default_tap()};
  }
};

template <typename T>
std::vector<T> softened_probs(std::span<const T> logits, double temp) {
  Tensor<T> z({1, logits.size()}, std::vector<T>(logits.begin(), logits.end()));
  const auto p = softmax_rows(z, temp);
  return {p.data.begin(), p.data.end()};
}

// L_D = -sum_n sum_k t_nk log max(s_nk, eps) over rows of [B, C] tensors.
template <typename T>
T distillation_loss(const Tensor<T>& teacher_probs, const Tensor<T>& student_probs) {
  FF_EXPECT(teacher_probs.shape == student_probs.shape, ContractError,
            "distillation_loss: shape mismatch");
  FF_EXPECT(teacher_probs.rank() == 2 && teacher_probs.dim(0) > 0, ContractError,
            "distillation_loss needs a non-empty forget batch");
  T out = 0;
  for (std::size_t i = 0; i < teacher_probs.numel(); ++i)
    out -= teacher_probs.data[i] * std::log(std::max(student_probs.data[i], T(kProbFloor)));
  return out;
}

// Gradient of distillation_loss(t, softmax(z / temp)) with respect to z.
template <typename T>
Tensor<T> distillation_grad(const Tensor<T>& teacher_probs, const Tensor<T>& student_probs,
                            double temp) {
  Tensor<T> g(student_probs.shape);
  const std::size_t B = g.dim(0), C = g.stride0();
  for (std::size_t n = 0; n < B; ++n) {
    const T* t = teacher_probs.ptr() + n * C;
    const T* s = student_probs.ptr() + n * C;
    T mass = 0;
    for (std::size_t k = 0; k < C; ++k)
      if (s[k] >= T(kProbFloor)) mass += t[k];
    for (std::size_t k = 0; k < C; ++k)
      g.data[n * C + k] = (s[k] * mass - (s[k] >= T(kProbFloor) ? t[k] : T(0))) / T(temp);
  }
  return g;
}

// A = sum_c |T_c|^q over a (C, H, W) map.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& fmap, double q) {
  FF_EXPECT(fmap.rank() == 3, ContractError, "attention_map expects a (C,H,W) map");
  FF_EXPECT(q >= 1, ContractError, "attention_map: q must be >= 1");
  const std::size_t C = fmap.dim(0), HW = fmap.dim(1) * fmap.dim(2);
  Tensor<T> a({fmap.dim(1), fmap.dim(2)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) {
      const T v = std::abs(fmap.data[c * HW + i]);
      a.data[i] += q == 2.0 ? v * v : std::pow(v, T(q));
    }
  return a;
}

template <typename T>
T l2_of(std::span<const T> v) {
  T s = 0;
  for (T x : v) s += x * x;
  return std::sqrt(s);
}

// || A_T/||A_T|| - A_S/||A_S|| ||_2 over flattened maps.
template <typename T>
T attention_distance(const Tensor<T>& t_map, const Tensor<T>& s_map) {
  FF_EXPECT(t_map.shape == s_map.shape, ContractError, "attention_distance: shape mismatch");
  const T nt = l2_of<T>(t_map.data), ns = l2_of<T>(s_map.data);
  if (nt == T(0) || ns == T(0))
    throw DegenerateInputError("attention_distance: all-zero attention map");
  T s = 0;
  for (std::size_t i = 0; i < t_map.numel(); ++i) {
    const T d = t_map.data[i] / nt - s_map.data[i] / ns;
    s += d * d;
  }
  return std::sqrt(s);
}

template <typename T>
struct AmaValue {
  T value = 0;
  std::size_t evaluated = 0;  // (sample, tap) pairs that entered the mean
  std::size_t skipped = 0;    // pairs dropped for an all-zero map
};

// Per-sample distances at one tap and, when grad is non-null, the gradient of
// `weight * sum(distances)` with respect to the student's tap activations.
template <typename T>
AmaValue<T> ama_tap(const Tensor<T>& teacher_act, const Tensor<T>& student_act, double q,
                    std::type_identity_t<T> weight, std::type_identity_t<Tensor<T>>* grad) {
  FF_EXPECT(teacher_act.shape == student_act.shape && teacher_act.rank() == 4, ContractError,
            "ama: tap activations must be matching [B,C,H,W]");
  const std::size_t B = student_act.dim(0), C = student_act.dim(1);
  const std::size_t HW = student_act.dim(2) * student_act.dim(3);
  const Shape one{C, student_act.dim(2), student_act.dim(3)};
  AmaValue<T> out;
  if (grad) *grad = Tensor<T>(student_act.shape);
  for (std::size_t n = 0; n < B; ++n) {
    auto tr = teacher_act.row(n), sr = student_act.row(n);
    auto at = attention_map(Tensor<T>(one, Buffer<T>(tr.begin(), tr.end())), q);
    auto as = attention_map(Tensor<T>(one, Buffer<T>(sr.begin(), sr.end())), q);
    const T nt = l2_of<T>(at.data), ns = l2_of<T>(as.data);
    if (nt == T(0) || ns == T(0)) {
      ++out.skipped;
      continue;
    }
    std::vector<T> diff(HW);
    T dist2 = 0;
    for (std::size_t i = 0; i < HW; ++i) {
      diff[i] = as.data[i] / ns - at.data[i] / nt;
      dist2 += diff[i] * diff[i];
    }
    const T dist = std::sqrt(dist2);
    out.value += dist;
    ++out.evaluated;
    if (!grad || dist == T(0)) continue;
    // d dist / d a_S = diff / dist; through a_S = A_S / ||A_S||.
    T proj = 0;
    for (std::size_t i = 0; i < HW; ++i) proj += (as.data[i] / ns) * diff[i];
    std::vector<T> gA(HW);
    for (std::size_t i = 0; i < HW; ++i)
      gA[i] = weight * (diff[i] - (as.data[i] / ns) * proj) / (dist * ns);
    T* g = grad->ptr() + n * C * HW;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const T s = sr[c * HW + i];
        if (s == T(0)) continue;
        const T d = q == 2.0 ? T(2) * s : T(q) * std::pow(std::abs(s), T(q - 1)) * (s > 0 ? T(1) : T(-1));
        g[c * HW + i] = gA[i] * d;
      }
  }
  return out;
}

// L_AMA over a batch: mean over samples of the attention distance, averaged
// over taps. Samples with an all-zero map at a tap are skipped and counted.
template <typename T>
AmaValue<T> ama_loss(const ParamVector<T>& teacher, const ParamVector<T>& student,
                     const Tensor<T>& x, const std::vector<std::string>& taps, double q) {
  FF_EXPECT(x.dim(0) > 0, ContractError, "ama_loss needs a non-empty forget batch");
  FF_EXPECT(!taps.empty(), ContractError, "ama_loss needs at least one tap");
  const auto& net = network_for<T>(student.arch_id());
  Trace<T> tt, ts;
  net.forward(teacher, x, {}, &tt);
  net.forward(student, x, {}, &ts);
  AmaValue<T> total;
  for (const auto& tap : taps) {
    auto v = ama_tap(net.tap(tt, tap), net.tap(ts, tap), q, T(1), nullptr);
    if (v.evaluated) total.value += v.value / T(v.evaluated);
    total.evaluated += v.evaluated;
    total.skipped += v.skipped;
  }
  total.value /= T(taps.size());
  return total;
}

// Per-sample bounded hard loss terms ReLU(bnd - CE(x)).
template <typename T>
T bounded_hard_from_ce(std::span<const T> ce, double bnd) {
  T out = 0;
  for (T l : ce) out += std::max(T(0), T(bnd) - l);
  return out;
}

template <typename T>
T bounded_hard_loss(const ParamVector<T>& student, const Tensor<T>& x,
                    std::span<const int> labels, double bnd) {
  FF_EXPECT(x.dim(0) > 0, ContractError, "bounded_hard_loss needs a non-empty forget batch");
  auto ce = per_sample_ce(forward(student, x), labels);
  return bounded_hard_from_ce<T>(ce, bnd);
}

template <typename T>
struct UnlearnTerms {
  T distill = 0, ama = 0, hard = 0, reg = 0;
  T total = 0;
  std::size_t ama_skipped = 0;
  std::size_t ama_evaluated = 0;
};

// Value of the weighted objective on one forget batch and, when grads is
// non-null, its gradient with respect to the student parameters.
template <typename T>
UnlearnTerms<T> unlearn_objective(const ParamVector<T>& teacher, const ParamVector<T>& student,
                                  const ParamVector<T>& anchor, const Batch<T>& b,
                                  const UnlearnConfig& cfg, std::type_identity_t<ParamVector<T>>* grads) {
  FF_EXPECT(b.size() > 0, ContractError, "unlearning on an empty forget batch");
  teacher.require_same_layout(student, "unlearn teacher/student");
  anchor.require_same_layout(student, "unlearn anchor/student");
  const auto& net = network_for<T>(student.arch_id());
  const auto taps = cfg.taps_for(net.arch());
  UnlearnTerms<T> out;

  Trace<T> tt, ts;
  auto zt = net.forward(teacher, b.x, {}, &tt);
  auto zs = net.forward(student, b.x, {}, &ts);
  Tensor<T> gz(zs.shape);

  if (cfg.mu_D > 0) {
    auto pt = softmax_rows(zt, cfg.temp), ps = softmax_rows(zs, cfg.temp);
    out.distill = distillation_loss(pt, ps);
    if (grads) {
      auto g = distillation_grad(pt, ps, cfg.temp);
      for (std::size_t i = 0; i < gz.numel(); ++i) gz.data[i] += T(cfg.mu_D) * g.data[i];
    }
  }

  if (cfg.mu_H > 0) {
    auto p = softmax_rows(zs);
    const std::size_t C = zs.stride0();
    for (std::size_t n = 0; n < b.size(); ++n) {
      const T py = p.data[n * C + b.labels[n]];
      const bool clipped = py < T(kProbFloor);
      const T ce = -std::log(std::max(py, T(kProbFloor)));
      T coef;  // d term / d CE
      if (cfg.legacy_unbounded_hard) {
        out.hard -= ce;
        coef = T(-1);
      } else {
        out.hard += std::max(T(0), T(cfg.bnd) - ce);
        coef = T(cfg.bnd) - ce > T(0) ? T(-1) : T(0);
      }
      if (!grads || clipped || coef == T(0)) continue;
      for (std::size_t k = 0; k < C; ++k) {
        const T dce = p.data[n * C + k] - (std::size_t(b.labels[n]) == k ? T(1) : T(0));
        gz.data[n * C + k] += T(cfg.mu_H) * coef * dce;
      }
    }
  }

  TapGrads<T> tap_grads;
  if (cfg.mu_AMA > 0) {
    for (const auto& tap : taps) {
      Tensor<T> g;
      auto v = ama_tap(net.tap(tt, tap), net.tap(ts, tap), cfg.q, T(1), grads ? &g : nullptr);
      out.ama_skipped += v.skipped;
      out.ama_evaluated += v.evaluated;
      if (!v.evaluated) continue;
      const T scale = T(1) / T(v.evaluated) / T(taps.size());
      out.ama += v.value * scale;
      if (grads) {
        for (auto& e : g.data) e *= T(cfg.mu_AMA) * scale;
        tap_grads.emplace(tap, std::move(g));
      }
    }
  }

  if (cfg.lambda_reg > 0) {
    auto d = student - anchor;
    out.reg = d.squared_norm();
    if (grads) grads->axpy(T(2 * cfg.lambda_reg), d);
  }

  const T k = cfg.reduction == UnlearnConfig::Reduction::mean ? T(1) / T(b.size()) : T(1);
  out.total = k * (T(cfg.mu_D) * out.distill + T(cfg.mu_H) * out.hard) +
              T(cfg.mu_AMA) * out.ama + T(cfg.lambda_reg) * out.reg;
  if (grads && k != T(1))
    for (auto& v : gz.data) v *= k;
  if (grads) net.backward(student, ts, gz, grads, tap_grads.empty() ? nullptr : &tap_grads);
  return out;
}

// Scalar value of the objective (the composition of the individual terms).
template <typename T>
T unlearn_loss(const ParamVector<T>& teacher, const ParamVector<T>& student,
               const ParamVector<T>& anchor, const Batch<T>& b, const UnlearnConfig& cfg) {
  return unlearn_objective(teacher, student, anchor, b, cfg, nullptr).total;
}

}  // namespace ff
