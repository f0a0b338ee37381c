#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/partition.hpp"
#include "fedforget/evalkit/metrics.hpp"
#include "fedforget/nn/ops.hpp"
#include "fedforget/unlearn/run.hpp"

namespace ff {

// Elementwise mean of client parameters, accumulated in double in list order.
template <typename T>
ParamVector<T> fedavg(const std::vector<ParamVector<T>>& params_list) {
  FF_EXPECT(!params_list.empty(), ContractError, "fedavg of an empty list");
  const auto& first = params_list.front();
  for (const auto& p : params_list) first.require_same_layout(p, "fedavg");
  ParamVector<T> out = first.zeros_like();
  const double n = double(params_list.size());
  auto it = out.begin();
  for (std::size_t e = 0; e < first.size(); ++e, ++it) {
    auto& dst = it->second.data;
    std::vector<double> acc(dst.size(), 0.0);
    for (const auto& p : params_list) {
      const auto& src = std::next(p.begin(), std::ptrdiff_t(e))->second.data;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += double(src[k]);
    }
    for (std::size_t k = 0; k < acc.size(); ++k) dst[k] = T(acc[k] / n);
  }
  return out;
}

// Mini-batch supervised training (mean cross-entropy) for `epochs` passes
// over the data; the sample order is shuffled per epoch from `seed`.
inline ParamVector<float> local_train(ParamVector<float> params, const LabeledDataset& data,
                                      int epochs, const OptConfig& opt, std::uint64_t seed) {
  opt.validate();
  FF_EXPECT(!data.empty(), ContractError, "local_train on an empty shard");
  OptState<float> state;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, {0x10ca1});
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for_each_chunk(std::span<const std::size_t>(order), opt.batch_size, [&](auto idx) {
      auto b = make_batch<float>(data, idx);
      auto g = grad(ce_loss_and_grad<float>, params, b);
      optimizer_step(params, g, opt, state);
    });
  }
  return params;
}

struct ForgetRequest {
  int user_id = 0;
  ForgetMode mode = ForgetMode::sample;
  std::vector<std::size_t> indices;  // sample mode: positions within the shard
  std::vector<int> classes;          // category mode
};

struct FederationConfig {
  int local_epochs = 1;
  OptConfig opt;
  UnlearnConfig unlearn;
  std::uint64_t seed = 0;
  bool record_user_accuracy = true;
};

struct RoundRecord {
  int round = 0;
  std::string kind;  // "train" or "unlearn"
  std::vector<double> user_accuracy;
  std::size_t forgotten = 0;
  std::vector<UnlearnEpochRecord> unlearn_epochs;
};

struct FederationState {
  int round = 0;
  ParamVector<float> global{""};
  ParamVector<float> initial{""};  // omega_0, the incompetent teacher
  std::vector<UserShard> shards;
  std::vector<ForgetRequest> pending_deletions;
  std::vector<RoundRecord> history;
};

inline FederationState make_federation(const ArchSpec& arch, std::vector<UserShard> shards,
                                       std::uint64_t model_seed) {
  FF_EXPECT(!shards.empty(), ContractError, "federation needs at least one user");
  FederationState s;
  s.initial = init_model(arch, model_seed);
  s.global = s.initial;
  s.shards = std::move(shards);
  return s;
}

inline void request_deletion(FederationState& s, ForgetRequest req) {
  auto it = std::find_if(s.shards.begin(), s.shards.end(),
                         [&](const UserShard& u) { return u.user_id == req.user_id; });
  FF_EXPECT(it != s.shards.end(), ContractError,
            "deletion request for unknown user " + std::to_string(req.user_id));
  if (req.mode == ForgetMode::sample) {
    for (auto i : req.indices)
      FF_EXPECT(i < it->size(), ContractError, "deletion index outside the user's shard");
  } else {
    FF_EXPECT(!req.classes.empty(), ContractError, "category deletion needs classes");
    for (int c : req.classes)
      FF_EXPECT(c >= 0 && c < it->data.class_count(), ContractError, "deletion class out of range");
  }
  s.pending_deletions.push_back(std::move(req));
}

// Sample-mode request covering every poisoned sample of a user.
inline ForgetRequest poisoned_request(const UserShard& shard) {
  ForgetRequest r{shard.user_id, ForgetMode::sample, {}, {}};
  for (std::size_t i = 0; i < shard.size(); ++i)
    if (shard.poison_mask[i]) r.indices.push_back(i);
  return r;
}

inline std::vector<double> user_accuracies(const ParamVector<float>& params,
                                           const std::vector<UserShard>& shards) {
  std::vector<double> acc;
  for (const auto& s : shards) acc.push_back(s.data.empty() ? 1.0 : accuracy(params, s.data));
  return acc;
}

inline std::uint64_t client_seed(const FederationConfig& cfg, int round, int user) {
  return derive_seed(cfg.seed, {std::uint64_t(round), std::uint64_t(user)});
}

// One communication round. Without pending deletions every user trains from
// the global model and the server averages; with deletions the server
// gathers all D_f^i, runs one unlearning pass on the global model, and the
// users keep only D_r^i.
inline FederationState run_round(FederationState s, const FederationConfig& cfg,
                                 const UnlearnObserver& observe = {}) {
  RoundRecord rec;
  rec.round = s.round;
  if (s.pending_deletions.empty()) {
    rec.kind = "train";
    std::vector<ParamVector<float>> locals;
    for (const auto& u : s.shards)
      locals.push_back(local_train(s.global, u.data, cfg.local_epochs, cfg.opt,
                                   client_seed(cfg, s.round, u.user_id)));
    s.global = fedavg(locals);
  } else {
    rec.kind = "unlearn";
    std::optional<LabeledDataset> forget;
    for (const auto& req : s.pending_deletions) {
      auto& shard = *std::find_if(s.shards.begin(), s.shards.end(),
                                  [&](const UserShard& u) { return u.user_id == req.user_id; });
      ForgetSplit split;
      if (req.mode == ForgetMode::sample) {
        UserShard marked = shard;
        std::fill(marked.forget_mask.begin(), marked.forget_mask.end(), 0);
        for (auto i : req.indices) marked.forget_mask[i] = 1;
        split = split_forget(marked, ForgetMode::sample);
      } else {
        split = split_forget(shard, ForgetMode::category, req.classes);
      }
      if (!forget) forget.emplace(split.forget.name(), split.forget.class_count(), split.forget.shape());
      forget->append(split.forget);
      shard = keep_remaining(shard, split);
    }
    s.pending_deletions.clear();
    rec.forgotten = forget ? forget->size() : 0;
    if (rec.forgotten > 0) {
      auto ucfg = cfg.unlearn;
      ucfg.seed = derive_seed(cfg.seed, {0x5eed, std::uint64_t(s.round)});
      auto res = run_unlearn(s.global, s.initial, *forget, ucfg, observe);
      s.global = std::move(res.params);
      rec.unlearn_epochs = std::move(res.epochs);
    }
  }
  if (cfg.record_user_accuracy) rec.user_accuracy = user_accuracies(s.global, s.shards);
  s.history.push_back(std::move(rec));
  ++s.round;
  return s;
}

struct RecoveryResult {
  FederationState state;
  int iterations = 0;
  bool reached = false;
  bool warning = false;                       // max_iters exhausted
  std::vector<double> min_accuracy_trajectory;  // before each iteration, then final
  std::vector<int> fine_tuned_users;
};

// Fine-tunes on the worst user's remaining data until every user's local
// accuracy reaches min_acc or max_iters runs out (then the best state seen
// is returned with a warning).
inline RecoveryResult performance_recovery(FederationState s, const FederationConfig& cfg,
                                           double min_acc, int max_iters) {
  for (const auto& u : s.shards)
    FF_EXPECT(!u.data.empty(), ContractError, "performance recovery needs non-empty D_r for every user");
  OptConfig ft = cfg.opt;
  ft.learning_rate *= 0.1;
  RecoveryResult r;
  auto acc = user_accuracies(s.global, s.shards);
  double best_min = *std::min_element(acc.begin(), acc.end());
  ParamVector<float> best = s.global;
  r.min_accuracy_trajectory.push_back(best_min);
  for (int it = 0; it < max_iters && best_min < min_acc; ++it) {
    const auto worst = std::size_t(std::min_element(acc.begin(), acc.end()) - acc.begin());
    s.global = local_train(s.global, s.shards[worst].data, 1, ft,
                           derive_seed(cfg.seed, {0x4ec0, std::uint64_t(it)}));
    r.fine_tuned_users.push_back(s.shards[worst].user_id);
    ++r.iterations;
    acc = user_accuracies(s.global, s.shards);
    const double m = *std::min_element(acc.begin(), acc.end());
    r.min_accuracy_trajectory.push_back(m);
    if (m > best_min) {
      best_min = m;
      best = s.global;
    }
  }
  r.reached = best_min >= min_acc;
  r.warning = !r.reached;
  s.global = std::move(best);
  r.state = std::move(s);
  return r;
}

// Fresh initialization trained federatedly on the remaining data only.
inline ParamVector<float> retrain_baseline(const std::vector<UserShard>& remaining,
                                           const ArchSpec& arch, int rounds,
                                           const FederationConfig& cfg, std::uint64_t seed) {
  for (const auto& u : remaining)
    FF_EXPECT(!u.data.empty(), ContractError, "retrain baseline: a user has no remaining data");
  auto s = make_federation(arch, remaining, seed);
  auto c = cfg;
  c.record_user_accuracy = false;
  for (int r = 0; r < rounds; ++r) s = run_round(std::move(s), c);
  return s.global;
}

}  // namespace ff
