#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"
#include "fedforget/nn/ops.hpp"

namespace ff {

struct MetricsReport {
  std::optional<double> acc_Dr, acc_Df;
  std::optional<double> backdoor_asr;
  std::optional<double> mia_success;
  std::optional<double> jsd_vs_retrain, l2_vs_retrain;
  std::map<int, double> class_fidelity;
  std::optional<int> decision;
  std::map<std::string, std::string> context;
};

template <typename T>
std::vector<int> predict_labels(const ParamVector<T>& params, const LabeledDataset& ds) {
  auto logits = predict_logits(params, ds);
  const std::size_t C = logits.stride0();
  std::vector<int> out(ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const T* z = logits.ptr() + n * C;
    out[n] = int(std::max_element(z, z + C) - z);
  }
  return out;
}

template <typename T>
double accuracy(const ParamVector<T>& params, const LabeledDataset& ds) {
  FF_EXPECT(!ds.empty(), ContractError, "accuracy of an empty dataset");
  auto pred = predict_labels(params, ds);
  std::size_t hit = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) hit += pred[n] == ds.label(n);
  return double(hit) / double(ds.size());
}

// Copy of the samples whose label differs from the trigger target, with the
// trigger stamped in and labels overwritten to the target.
inline LabeledDataset triggered_copy(const LabeledDataset& clean, const TriggerSpec& trigger) {
  trigger.validate(clean.shape(), clean.class_count());
  LabeledDataset out(clean.name() + "+trigger", clean.class_count(), clean.shape());
  std::vector<float> buf(clean.shape().size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean.label(i) == trigger.target_label) continue;
    auto f = clean.features(i);
    std::copy(f.begin(), f.end(), buf.begin());
    trigger.apply(buf, clean.shape());
    out.push_back(buf, trigger.target_label);
  }
  return out;
}

template <typename T>
double backdoor_asr(const ParamVector<T>& params, const LabeledDataset& clean_test,
                    const TriggerSpec& trigger) {
  auto stamped = triggered_copy(clean_test, trigger);
  FF_EXPECT(!stamped.empty(), ContractError, "no test samples outside the trigger target class");
  return accuracy(params, stamped);
}

// Loss-threshold attack over pre-computed membership scores (higher = more
// member-like).
struct MiaResult {
  double success = 0.5;  // balanced accuracy on the evaluation halves
  double threshold = 0;
  std::size_t per_side = 0;
};

inline MiaResult mia_from_scores(std::vector<double> members, std::vector<double> others,
                                 std::uint64_t seed) {
  FF_EXPECT(members.size() >= 30 && others.size() >= 30, ContractError,
            "membership inference needs at least 30 samples per side");
  auto rng = make_rng(seed, {0x3a1a});
  std::shuffle(members.begin(), members.end(), rng);
  std::shuffle(others.begin(), others.end(), rng);
  const std::size_t n = std::min(members.size(), others.size());
  members.resize(n);
  others.resize(n);
  const std::size_t cal = n / 2;

  auto balanced = [](std::span<const double> m, std::span<const double> o, double thr) {
    double tp = 0, tn = 0;
    for (double s : m) tp += s >= thr;
    for (double s : o) tn += s < thr;
    return 0.5 * (tp / double(m.size()) + tn / double(o.size()));
  };
  std::span<const double> mc(members.data(), cal), oc(others.data(), cal);
  std::span<const double> me(members.data() + cal, n - cal), oe(others.data() + cal, n - cal);

  // Candidate thresholds sit halfway between neighbouring calibration scores.
  std::vector<double> seen(mc.begin(), mc.end());
  seen.insert(seen.end(), oc.begin(), oc.end());
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  std::vector<double> cands{-INFINITY, INFINITY};
  for (std::size_t i = 0; i + 1 < seen.size(); ++i) cands.push_back(0.5 * (seen[i] + seen[i + 1]));
  std::sort(cands.begin(), cands.end());
  MiaResult r;
  double best = -1;
  for (double thr : cands) {
    const double b = balanced(mc, oc, thr);
    if (b > best) {
      best = b;
      r.threshold = thr;
    }
  }
  r.success = balanced(me, oe, r.threshold);
  r.per_side = n;
  return r;
}

template <typename T>
std::vector<double> membership_scores(const ParamVector<T>& params, const LabeledDataset& ds) {
  auto logits = predict_logits(params, ds);
  auto ce = per_sample_ce(logits, std::span<const int>(ds.labels()));
  std::vector<double> s(ce.size());
  for (std::size_t i = 0; i < ce.size(); ++i) s[i] = -double(ce[i]);
  return s;
}

template <typename T>
MiaResult mia_success(const ParamVector<T>& params, const LabeledDataset& members,
                      const LabeledDataset& holdout, std::uint64_t seed = 0) {
  return mia_from_scores(membership_scores(params, members), membership_scores(params, holdout),
                         seed);
}

// Jensen-Shannon divergence, natural log.
inline double jsd(std::span<const double> p, std::span<const double> q) {
  FF_EXPECT(p.size() == q.size() && !p.empty(), ContractError, "jsd: size mismatch");
  const double sp = std::accumulate(p.begin(), p.end(), 0.0);
  const double sq = std::accumulate(q.begin(), q.end(), 0.0);
  FF_EXPECT(std::abs(sp - 1) <= 1e-6 && std::abs(sq - 1) <= 1e-6, ContractError,
            "jsd inputs must sum to 1");
  double out = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    const double a = p[i] > 0 ? p[i] * std::log(p[i] / m) : 0.0;
    const double b = q[i] > 0 ? q[i] * std::log(q[i] / m) : 0.0;
    out += 0.5 * (a + b);
  }
  return std::max(out, 0.0);
}

struct DistributionDistance {
  double jsd_mean = 0;
  double l2_mean = 0;
};

template <typename T>
std::vector<std::vector<double>> predict_probs(const ParamVector<T>& params,
                                               const LabeledDataset& ds) {
  auto logits = predict_logits(params, ds).template cast<double>();
  auto p = softmax_rows(logits);
  std::vector<std::vector<double>> out(ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    auto r = p.row(n);
    out[n].assign(r.begin(), r.end());
  }
  return out;
}

template <typename T>
DistributionDistance pred_distribution_distance(const ParamVector<T>& a, const ParamVector<T>& b,
                                                const LabeledDataset& ds) {
  FF_EXPECT(!ds.empty(), ContractError, "distribution distance over an empty dataset");
  auto pa = predict_probs(a, ds), pb = predict_probs(b, ds);
  FF_EXPECT(pa[0].size() == pb[0].size(), ContractError, "output dimensions differ");
  DistributionDistance d;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    d.jsd_mean += jsd(pa[n], pb[n]);
    double s = 0;
    for (std::size_t k = 0; k < pa[n].size(); ++k) s += (pa[n][k] - pb[n][k]) * (pa[n][k] - pb[n][k]);
    d.l2_mean += std::sqrt(s);
  }
  d.jsd_mean /= double(ds.size());
  d.l2_mean /= double(ds.size());
  return d;
}

}  // namespace ff
