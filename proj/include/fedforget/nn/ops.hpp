#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"
#include "fedforget/nn/arch.hpp"
#include "fedforget/nn/model.hpp"
#include "fedforget/nn/params.hpp"

namespace ff {

inline constexpr double kProbFloor = 1e-12;

// Cached executor for an architecture id (single-threaded use).
template <typename T>
const Network<T>& network_for(const std::string& arch_id) {
  static std::map<std::string, std::unique_ptr<Network<T>>> cache;
  auto it = cache.find(arch_id);
  if (it == cache.end())
    it = cache.emplace(arch_id, std::make_unique<Network<T>>(find_arch(arch_id))).first;
  return *it->second;
}

template <typename T = float>
ParamVector<T> init_model(const ArchSpec& arch, std::uint64_t seed) {
  return Network<T>(arch).init(seed);
}

template <typename T>
struct Batch {
  Tensor<T> x;  // [B, C, H, W]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

template <typename T = float>
Batch<T> make_batch(const LabeledDataset& ds, std::span<const std::size_t> idx) {
  const auto& s = ds.shape();
  Batch<T> b{Tensor<T>({idx.size(), s.channels, s.height, s.width}), {}};
  b.labels.reserve(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    auto f = ds.features(idx[n]);
    std::copy(f.begin(), f.end(), b.x.ptr() + n * s.size());
    b.labels.push_back(ds.label(idx[n]));
  }
  return b;
}

template <typename T = float>
Batch<T> make_batch(const LabeledDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch<T>(ds, idx);
}

// Calls fn(idx_span) for consecutive chunks of `order`.
template <typename Fn>
void for_each_chunk(std::span<const std::size_t> order, std::size_t chunk, Fn&& fn) {
  for (std::size_t s = 0; s < order.size(); s += chunk)
    fn(order.subspan(s, std::min(chunk, order.size() - s)));
}

template <typename T>
Tensor<T> forward(const ParamVector<T>& params, const Tensor<T>& x) {
  return network_for<T>(params.arch_id()).forward(params, x);
}

template <typename T>
Tensor<T> forward(const ParamVector<T>& params, const Batch<T>& b) {
  return forward(params, b.x);
}

// Logits for a whole dataset, evaluated in chunks.
template <typename T = float>
Tensor<T> predict_logits(const ParamVector<T>& params, const LabeledDataset& ds,
                         std::size_t chunk = 500) {
  const auto& net = network_for<T>(params.arch_id());
  Tensor<T> out({ds.size(), net.arch().output_dim});
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t off = 0;
  for_each_chunk(std::span<const std::size_t>(idx), chunk, [&](auto part) {
    auto b = make_batch<T>(ds, part);
    auto y = net.forward(params, b.x);
    std::copy(y.data.begin(), y.data.end(), out.ptr() + off);
    off += y.numel();
  });
  return out;
}

template <typename T>
struct FeatureMap {
  Tensor<T> values;  // (C_l, H_l, W_l)
  std::string layer;
};

// Post-activation feature maps at `taps`, one vector per sample.
template <typename T>
std::vector<std::vector<FeatureMap<T>>> feature_maps(const ParamVector<T>& params,
                                                     const Tensor<T>& x,
                                                     const std::vector<std::string>& taps) {
  const auto& net = network_for<T>(params.arch_id());
  for (auto& t : taps)
    FF_EXPECT(std::find(net.arch().tap_layers.begin(), net.arch().tap_layers.end(), t) !=
                  net.arch().tap_layers.end(),
              ContractError, "'" + t + "' is not a tap layer of " + params.arch_id());
  Trace<T> tr;
  net.forward(params, x, {}, &tr);
  std::vector<std::vector<FeatureMap<T>>> out(x.dim(0));
  for (auto& t : taps) {
    const auto& act = net.tap(tr, t);
    Shape s(act.shape.begin() + 1, act.shape.end());
    for (std::size_t n = 0; n < out.size(); ++n) {
      auto r = act.row(n);
      out[n].push_back({Tensor<T>(s, std::vector<T>(r.begin(), r.end())), t});
    }
  }
  return out;
}

// Row-wise softmax of logits / temp, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, double temp = 1.0) {
  FF_EXPECT(temp > 0, ContractError, "softmax temperature must be > 0");
  Tensor<T> p(logits.shape);
  const std::size_t B = logits.dim(0), C = logits.stride0();
  for (std::size_t n = 0; n < B; ++n) {
    const T* z = logits.ptr() + n * C;
    T* q = p.ptr() + n * C;
    const T mx = *std::max_element(z, z + C);
    T sum = 0;
    for (std::size_t k = 0; k < C; ++k) sum += (q[k] = std::exp((z[k] - mx) / T(temp)));
    for (std::size_t k = 0; k < C; ++k) q[k] /= sum;
  }
  return p;
}

template <typename T>
struct LossGrad {
  T value = 0;
  Tensor<T> grad;  // d value / d logits
};

// Per-sample cross-entropy -log max(softmax(z)_y, floor).
template <typename T>
std::vector<T> per_sample_ce(const Tensor<T>& logits, std::span<const int> labels) {
  auto p = softmax_rows(logits);
  const std::size_t C = logits.stride0();
  std::vector<T> out(labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n)
    out[n] = -std::log(std::max(p.data[n * C + labels[n]], T(kProbFloor)));
  return out;
}

// Mean cross-entropy and its gradient with respect to the logits.
template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t B = logits.dim(0), C = logits.stride0();
  FF_EXPECT(labels.size() == B && B > 0, ContractError, "cross_entropy: label count mismatch");
  auto p = softmax_rows(logits);
  LossGrad<T> out{0, Tensor<T>(logits.shape)};
  for (std::size_t n = 0; n < B; ++n) {
    const T py = p.data[n * C + labels[n]];
    const bool clipped = py < T(kProbFloor);
    out.value += -std::log(std::max(py, T(kProbFloor)));
    for (std::size_t k = 0; k < C; ++k) {
      T g = p.data[n * C + k] - (std::size_t(labels[n]) == k ? T(1) : T(0));
      out.grad.data[n * C + k] = clipped ? T(0) : g / T(B);
    }
  }
  out.value /= T(B);
  return out;
}

// Value and parameter gradient of a scalar loss.
template <typename T>
struct ValueGrad {
  T value = 0;
  ParamVector<T> grads;
};

// Runs a differentiable loss (fn(params, batch) -> ValueGrad) and checks the
// result is finite and shaped like params.
template <typename T, typename Fn, typename B>
ParamVector<T> grad(Fn&& loss_fn, const ParamVector<T>& params, const B& batch) {
  ValueGrad<T> vg = loss_fn(params, batch);
  params.require_same_layout(vg.grads, "grad");
  if (!std::isfinite(vg.value) || !vg.grads.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite loss/gradient: loss=" << vg.value << ", non-finite entries in [";
    for (auto& [name, t] : vg.grads)
      if (std::any_of(t.data.begin(), t.data.end(), [](T v) { return !std::isfinite(v); }))
        msg << name << ' ';
    msg << "], param norm=" << params.l2_norm();
    throw NumericError(msg.str());
  }
  return std::move(vg.grads);
}

// Mean cross-entropy of a classifier on a labelled batch, with gradients.
template <typename T>
ValueGrad<T> ce_loss_and_grad(const ParamVector<T>& params, const Batch<T>& b) {
  const auto& net = network_for<T>(params.arch_id());
  Trace<T> tr;
  auto logits = net.forward(params, b.x, {}, &tr);
  auto lg = cross_entropy(logits, b.labels);
  ValueGrad<T> out{lg.value, params.zeros_like()};
  net.backward(params, tr, lg.grad, &out.grads);
  return out;
}

// ---------------------------------------------------------------- optimisers

enum class OptRule { sgd, adam };

struct OptConfig {
  OptRule rule = OptRule::sgd;
  double learning_rate = 0.01;
  double momentum = 0.0;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 100;

  void validate() const {
    FF_EXPECT(learning_rate > 0, ConfigError, "learning_rate must be > 0");
    FF_EXPECT(batch_size > 0, ConfigError, "batch_size must be > 0");
    FF_EXPECT(momentum >= 0 && momentum < 1, ConfigError, "momentum must lie in [0,1)");
  }
};

template <typename T>
struct OptState {
  long step = 0;
  ParamVector<T> m;  // momentum buffer / first moment
  ParamVector<T> v;  // second moment
};

template <typename T>
void optimizer_step(ParamVector<T>& params, const ParamVector<T>& grads, const OptConfig& cfg,
                    OptState<T>& state) {
  params.require_same_layout(grads, "optimizer_step");
  ++state.step;
  const T lr = T(cfg.learning_rate);
  if (cfg.rule == OptRule::sgd) {
    if (cfg.momentum == 0.0) {
      params.axpy(-lr, grads);
      return;
    }
    if (state.m.empty()) state.m = grads.zeros_like();
    state.m *= T(cfg.momentum);
    state.m += grads;
    params.axpy(-lr, state.m);
    return;
  }
  if (state.m.empty()) {
    state.m = grads.zeros_like();
    state.v = grads.zeros_like();
  }
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T c1 = T(1) - std::pow(b1, T(state.step)), c2 = T(1) - std::pow(b2, T(state.step));
  auto pit = params.begin();
  auto mit = state.m.begin();
  auto vit = state.v.begin();
  for (auto git = grads.begin(); git != grads.end(); ++git, ++pit, ++mit, ++vit) {
    auto& p = pit->second.data;
    auto& m = mit->second.data;
    auto& v = vit->second.data;
    const auto& g = git->second.data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + T(cfg.eps));
    }
  }
}

}  // namespace ff
