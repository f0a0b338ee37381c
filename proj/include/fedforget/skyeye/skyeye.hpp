#pragma once

// Skyeye: a conditional generator trained against a frozen classifier and a
// discriminator, used to visualize (and score) what the classifier knows
// per class.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"
#include "fedforget/nn/ops.hpp"

namespace ff {

struct GanConfig {
  double mu_d = 0.5;  // generator: fool the discriminator
  double mu_c = 0.5;  // generator: be classified as the requested label
  double mu_f = 0.5;  // discriminator: reject fakes
  double mu_r = 0.5;  // discriminator: accept reals
  double lr_G = 3e-4;
  double lr_D = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t noise_dim = 100;
  int j_steps = 1;
  int epochs = 1;
  std::size_t batch_size = 100;
  long max_steps = 0;  // discriminator updates per run; 0 = no cap
  // Output bias starts at the logit of the mean real pixel.
  bool init_output_bias = true;
  std::string generator_arch = "mnist_generator";
  std::string discriminator_arch = "mnist_discriminator";
  std::uint64_t seed = 0;

  void validate() const {
    FF_EXPECT(mu_d >= 0 && mu_c >= 0 && mu_f >= 0 && mu_r >= 0, ConfigError,
              "GAN loss weights must be non-negative");
    FF_EXPECT(noise_dim >= 1, ConfigError, "noise_dim must be >= 1");
    FF_EXPECT(j_steps >= 1, ConfigError, "j_steps must be >= 1");
    FF_EXPECT(lr_G > 0 && lr_D > 0, ConfigError, "GAN learning rates must be > 0");
    FF_EXPECT(epochs >= 0 && batch_size > 0 && max_steps >= 0, ConfigError,
              "invalid GAN schedule");
  }

  OptConfig opt(double lr) const {
    OptConfig o;
    o.rule = OptRule::adam;
    o.learning_rate = lr;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.batch_size = batch_size;
    return o;
  }
};

struct GanBundle {
  ParamVector<float> generator{""};
  ParamVector<float> discriminator{""};
  ParamVector<float> classifier{""};  // frozen
  GanConfig cfg;
};

template <typename T>
Tensor<T> gen_forward(const ParamVector<T>& G, const Tensor<T>& z, std::span<const int> labels,
                      Trace<T>* trace = nullptr) {
  return network_for<T>(G.arch_id()).forward(G, z, labels, trace);
}

// Single (z, y) pair; returns the image with a leading batch dim of 1.
template <typename T>
Tensor<T> gen_forward(const ParamVector<T>& G, std::span<const T> z, int y) {
  Tensor<T> zt({1, z.size()}, std::vector<T>(z.begin(), z.end()));
  const int ys[1] = {y};
  return gen_forward(G, zt, std::span<const int>(ys, 1));
}

// Batch-mean generator loss from discriminator confidences d_fake [B,1] and
// classifier logits [B,C] for the requested labels.
template <typename T>
T generator_loss(std::span<const T> d_fake, const Tensor<T>& class_logits,
                 std::span<const int> labels, const GanConfig& cfg) {
  FF_EXPECT(d_fake.size() == labels.size() && class_logits.dim(0) == labels.size() &&
                !labels.empty(),
            ContractError, "generator_loss: batch size mismatch");
  auto ce = per_sample_ce(class_logits, labels);
  T out = 0;
  for (std::size_t n = 0; n < labels.size(); ++n)
    out += -T(cfg.mu_d) * std::log(std::max(d_fake[n], T(kProbFloor))) + T(cfg.mu_c) * ce[n];
  return out / T(labels.size());
}

template <typename T>
T discriminator_loss(std::span<const T> d_real, std::span<const T> d_fake, const GanConfig& cfg) {
  FF_EXPECT(!d_real.empty() && !d_fake.empty(), ContractError, "discriminator_loss: empty batch");
  T r = 0, f = 0;
  for (T p : d_real) r -= std::log(std::max(p, T(kProbFloor)));
  for (T p : d_fake) f -= std::log(std::max(T(1) - p, T(kProbFloor)));
  return T(cfg.mu_r) * r / T(d_real.size()) + T(cfg.mu_f) * f / T(d_fake.size());
}

template <typename T>
struct GanStep {
  T loss = 0;
  ParamVector<T> grads;
};

// Generator loss and its gradient with respect to the generator parameters
// (discriminator and classifier are held fixed).
template <typename T>
GanStep<T> generator_step(const ParamVector<T>& G, const ParamVector<T>& D,
                          const ParamVector<T>& C, const Tensor<T>& z,
                          std::span<const int> labels, const GanConfig& cfg) {
  const auto& gn = network_for<T>(G.arch_id());
  const auto& dn = network_for<T>(D.arch_id());
  const auto& cn = network_for<T>(C.arch_id());
  Trace<T> tg, td, tc;
  auto fake = gn.forward(G, z, labels, &tg);
  auto d = dn.forward(D, fake, {}, &td);
  auto logits = cn.forward(C, fake, {}, &tc);
  GanStep<T> out{generator_loss<T>(d.data, logits, labels, cfg), G.zeros_like()};
  const T B = T(labels.size());

  Tensor<T> gd(d.shape);
  for (std::size_t n = 0; n < d.numel(); ++n)
    gd.data[n] = d.data[n] < T(kProbFloor) ? T(0) : -T(cfg.mu_d) / (B * d.data[n]);
  Tensor<T> dimg = dn.backward(D, td, gd, nullptr, nullptr, true);

  if (cfg.mu_c > 0) {
    auto ce = cross_entropy(logits, labels);  // grad already divided by B
    for (auto& v : ce.grad.data) v *= T(cfg.mu_c);
    auto cimg = cn.backward(C, tc, ce.grad, nullptr, nullptr, true);
    for (std::size_t k = 0; k < dimg.numel(); ++k) dimg.data[k] += cimg.data[k];
  }
  gn.backward(G, tg, dimg, &out.grads);
  return out;
}

template <typename T>
GanStep<T> discriminator_step(const ParamVector<T>& D, const Tensor<T>& real,
                              const Tensor<T>& fake, const GanConfig& cfg) {
  const auto& dn = network_for<T>(D.arch_id());
  Trace<T> tr, tf;
  auto dr = dn.forward(D, real, {}, &tr);
  auto df = dn.forward(D, fake, {}, &tf);
  GanStep<T> out{discriminator_loss<T>(dr.data, df.data, cfg), D.zeros_like()};
  Tensor<T> gr(dr.shape), gf(df.shape);
  for (std::size_t n = 0; n < dr.numel(); ++n)
    gr.data[n] = dr.data[n] < T(kProbFloor) ? T(0) : -T(cfg.mu_r) / (T(dr.numel()) * dr.data[n]);
  for (std::size_t n = 0; n < df.numel(); ++n) {
    const T q = T(1) - df.data[n];
    gf.data[n] = q < T(kProbFloor) ? T(0) : T(cfg.mu_f) / (T(df.numel()) * q);
  }
  dn.backward(D, tr, gr, &out.grads);
  dn.backward(D, tf, gf, &out.grads);
  return out;
}

inline Tensor<float> sample_noise(std::size_t n, std::size_t dim, Rng& rng) {
  std::normal_distribution<float> nd(0.f, 1.f);
  Tensor<float> z({n, dim});
  for (auto& v : z.data) v = nd(rng);
  return z;
}

struct GanEpochRecord {
  int epoch = 0;
  long steps = 0;
  double loss_G = 0, loss_D = 0;  // means over the epoch's steps
};

using GanObserver = std::function<void(const GanEpochRecord&)>;

inline void init_output_bias(ParamVector<float>& generator, const LabeledDataset& real) {
  double sum = 0, count = 0;
  for (std::size_t i = 0; i < real.size(); ++i)
    for (float v : real.features(i)) sum += v, ++count;
  const double m = std::clamp(sum / count, 1e-3, 1 - 1e-3);
  for (auto& v : generator.at("out_conv.bias").data) v = float(std::log(m / (1 - m)));
}

// Alternating training: per real batch one discriminator update on
// (real, fake) then j_steps generator updates. The classifier is only read.
inline GanBundle train_skyeye(const ParamVector<float>& classifier, const LabeledDataset& real,
                              const GanConfig& cfg, const GanObserver& observe = {}) {
  cfg.validate();
  FF_EXPECT(!real.empty(), ContractError, "train_skyeye: empty real dataset");
  const auto& garch = find_arch(cfg.generator_arch);
  const auto& darch = find_arch(cfg.discriminator_arch);
  FF_EXPECT(garch.input == Shape{cfg.noise_dim}, ConfigError,
            "generator " + garch.id + " does not take noise_dim inputs");
  const Shape img{real.shape().channels, real.shape().height, real.shape().width};
  FF_EXPECT(darch.input == img, ConfigError, "discriminator input does not match the dataset");
  FF_EXPECT(std::size_t(real.class_count()) == garch.class_count, ConfigError,
            "generator class count does not match the dataset");

  GanBundle b;
  b.cfg = cfg;
  b.classifier = classifier;
  b.generator = init_model(garch, derive_seed(cfg.seed, {0x6e}));
  b.discriminator = init_model(darch, derive_seed(cfg.seed, {0xd1}));
  if (cfg.init_output_bias) init_output_bias(b.generator, real);
  const auto frozen = classifier.content_hash();
  OptState<float> sg, sd;
  const auto og = cfg.opt(cfg.lr_G), od = cfg.opt(cfg.lr_D);
  auto rng = make_rng(cfg.seed, {0x9a9});
  std::uniform_int_distribution<int> pick(0, real.class_count() - 1);
  auto labels_for = [&](std::size_t n) {
    std::vector<int> y(n);
    for (auto& v : y) v = pick(rng);
    return y;
  };
  std::vector<std::size_t> order(real.size());
  std::iota(order.begin(), order.end(), 0);
  long steps = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    if (cfg.max_steps && steps >= cfg.max_steps) break;
    std::shuffle(order.begin(), order.end(), rng);
    GanEpochRecord rec;
    rec.epoch = e;
    for (std::size_t s = 0; s + cfg.batch_size <= order.size(); s += cfg.batch_size) {
      if (cfg.max_steps && steps >= cfg.max_steps) break;
      auto batch = make_batch<float>(real, std::span<const std::size_t>(order).subspan(s, cfg.batch_size));
      {
        auto z = sample_noise(cfg.batch_size, cfg.noise_dim, rng);
        auto y = labels_for(cfg.batch_size);
        auto fake = gen_forward(b.generator, z, y);
        auto st = discriminator_step(b.discriminator, batch.x, fake, cfg);
        FF_EXPECT(std::isfinite(st.loss) && st.grads.all_finite(), NumericError,
                  "discriminator loss diverged at step " + std::to_string(steps));
        optimizer_step(b.discriminator, st.grads, od, sd);
        rec.loss_D += st.loss;
      }
      double lg = 0;
      for (int j = 0; j < cfg.j_steps; ++j) {
        auto z = sample_noise(cfg.batch_size, cfg.noise_dim, rng);
        auto y = labels_for(cfg.batch_size);
        auto st = generator_step(b.generator, b.discriminator, b.classifier, z, y, cfg);
        FF_EXPECT(std::isfinite(st.loss) && st.grads.all_finite(), NumericError,
                  "generator loss diverged at step " + std::to_string(steps));
        optimizer_step(b.generator, st.grads, og, sg);
        lg += st.loss;
      }
      rec.loss_G += lg / cfg.j_steps;
      ++rec.steps;
      ++steps;
    }
    if (rec.steps) {
      rec.loss_D /= double(rec.steps);
      rec.loss_G /= double(rec.steps);
    }
    if (observe) observe(rec);
  }
  FF_EXPECT(b.classifier.content_hash() == frozen, ContractError,
            "classifier parameters changed during Skyeye training");
  return b;
}

// Reference-classifier labels for n generated samples of class c. Sample i
// always uses the i-th noise draw of the (seed, c) stream.
inline std::vector<int> generated_predictions(const ParamVector<float>& G,
                                              const ParamVector<float>& ref, int c, std::size_t n,
                                              std::uint64_t seed) {
  const auto& garch = network_for<float>(G.arch_id()).arch();
  FF_EXPECT(c >= 0 && std::size_t(c) < garch.class_count, ContractError, "class outside [0, C)");
  auto rng = make_rng(seed, {0xf1de, std::uint64_t(c)});
  const std::size_t chunk = 100;
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t done = 0; done < n; done += chunk) {
    const std::size_t m = std::min(chunk, n - done);
    auto z = sample_noise(m, garch.input[0], rng);
    std::vector<int> y(m, c);
    auto logits = forward(ref, gen_forward(G, z, y));
    const std::size_t C = logits.stride0();
    for (std::size_t i = 0; i < m; ++i) {
      const float* r = logits.ptr() + i * C;
      out.push_back(int(std::max_element(r, r + C) - r));
    }
  }
  return out;
}

// Fraction of n generated samples of class c that the reference classifier
// labels as c.
inline double class_fidelity(const ParamVector<float>& G, const ParamVector<float>& ref, int c,
                             std::size_t n, std::uint64_t seed) {
  FF_EXPECT(n >= 100, ContractError, "class_fidelity needs n >= 100");
  auto pred = generated_predictions(G, ref, c, n, seed);
  return double(std::count(pred.begin(), pred.end(), c)) / double(n);
}

inline std::map<int, double> all_class_fidelity(const ParamVector<float>& G,
                                                const ParamVector<float>& ref, std::size_t n,
                                                std::uint64_t seed) {
  const auto classes = network_for<float>(G.arch_id()).arch().class_count;
  std::map<int, double> out;
  for (std::size_t c = 0; c < classes; ++c) out[int(c)] = class_fidelity(G, ref, int(c), n, seed);
  return out;
}

struct Decision {
  int verdict = 0;  // 1 = unlearned
  std::map<int, double> per_class_fidelity;
  std::vector<int> forget_still_recognized;  // forget classes at or above tau_low
  std::vector<int> retained_below_gate;      // retained classes below tau_high
  std::string diagnostic;
  std::string grid_path;
};

inline Decision decide(const std::map<int, double>& fidelity, const std::vector<int>& forget_classes,
                       double tau_low = 0.3, double tau_high = 0.7) {
  FF_EXPECT(!forget_classes.empty(), ContractError, "decide: forget_classes is empty");
  for (int c : forget_classes)
    FF_EXPECT(fidelity.count(c), ContractError, "decide: no fidelity for forget class " + std::to_string(c));
  Decision d;
  d.per_class_fidelity = fidelity;
  for (const auto& [c, f] : fidelity) {
    const bool forget = std::find(forget_classes.begin(), forget_classes.end(), c) != forget_classes.end();
    if (forget && f >= tau_low) d.forget_still_recognized.push_back(c);
    if (!forget && f < tau_high) d.retained_below_gate.push_back(c);
  }
  d.verdict = d.forget_still_recognized.empty() && d.retained_below_gate.empty();
  std::ostringstream msg;
  if (!d.retained_below_gate.empty()) {
    msg << "GAN training insufficient: retained classes below tau_high:";
    for (int c : d.retained_below_gate) msg << ' ' << c;
  }
  if (!d.forget_still_recognized.empty()) {
    if (msg.tellp() > 0) msg << "; ";
    msg << "forgotten classes still generated:";
    for (int c : d.forget_still_recognized) msg << ' ' << c;
  }
  d.diagnostic = msg.str();
  return d;
}

}  // namespace ff
