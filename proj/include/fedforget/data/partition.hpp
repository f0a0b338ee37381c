#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"

namespace ff {

enum class ForgetMode { sample, category };

inline UserShard make_shard(int user_id, const LabeledDataset& ds,
                            std::vector<std::size_t> source_index) {
  UserShard s;
  s.user_id = user_id;
  s.data = ds.subset(source_index);
  s.source_index = std::move(source_index);
  s.poison_mask.assign(s.data.size(), 0);
  s.forget_mask.assign(s.data.size(), 0);
  return s;
}

// Seeded permutation cut into n contiguous blocks; the first |ds| mod n
// shards receive one extra sample.
inline std::vector<UserShard> partition_uniform(const LabeledDataset& ds, int n_users,
                                                std::uint64_t seed) {
  FF_EXPECT(n_users >= 1, PartitionError, "n_users must be >= 1");
  FF_EXPECT(ds.size() >= std::size_t(n_users), PartitionError,
            "cannot split " + std::to_string(ds.size()) + " samples across " +
                std::to_string(n_users) + " users");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, {0x9a27});
  std::shuffle(perm.begin(), perm.end(), rng);

  const std::size_t base = ds.size() / n_users, extra = ds.size() % n_users;
  std::vector<UserShard> shards;
  shards.reserve(n_users);
  std::size_t off = 0;
  for (int u = 0; u < n_users; ++u) {
    const std::size_t len = base + (std::size_t(u) < extra ? 1 : 0);
    shards.push_back(make_shard(u, ds, {perm.begin() + off, perm.begin() + off + len}));
    off += len;
  }
  return shards;
}

// Stamps the trigger onto floor(rate*|shard|) seeded-random samples and
// relabels them to the trigger target. Selection depends only on the shard
// size and seed.
inline UserShard poison_shard(UserShard shard, double rate, const TriggerSpec& trigger,
                              std::uint64_t seed) {
  FF_EXPECT(rate > 0.0 && rate < 1.0, ConfigError, "poison rate must lie in (0,1)");
  shard.check();
  trigger.validate(shard.data.shape(), shard.data.class_count());
  const auto count = static_cast<std::size_t>(std::floor(rate * double(shard.size()) + 1e-9));
  std::vector<std::size_t> idx(shard.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, {0xbd00, std::uint64_t(shard.user_id)});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) {
    trigger.apply(shard.data.features(i), shard.data.shape());
    shard.data.set_label(i, trigger.target_label);
    shard.poison_mask[i] = 1;
    shard.forget_mask[i] = 1;
  }
  return shard;
}

struct ForgetSplit {
  LabeledDataset forget;  // D_f
  LabeledDataset remain;  // D_r
  std::vector<std::size_t> forget_index;
  std::vector<std::size_t> remain_index;
};

inline ForgetSplit split_forget(const UserShard& shard, ForgetMode mode,
                                std::span<const int> classes = {}) {
  shard.check();
  const int C = shard.data.class_count();
  std::vector<std::uint8_t> in_forget(shard.size(), 0);
  if (mode == ForgetMode::sample) {
    in_forget = shard.forget_mask;
  } else {
    FF_EXPECT(!classes.empty(), ContractError, "category unlearning needs a class set");
    std::vector<std::uint8_t> chosen(C, 0);
    for (int c : classes) {
      FF_EXPECT(c >= 0 && c < C, ContractError, "forget class outside [0, C)");
      chosen[c] = 1;
    }
    FF_EXPECT(std::count(chosen.begin(), chosen.end(), 1) < C, ContractError,
              "forgetting every class leaves D_r empty");
    for (std::size_t i = 0; i < shard.size(); ++i) in_forget[i] = chosen[shard.data.label(i)];
  }
  ForgetSplit out;
  for (std::size_t i = 0; i < shard.size(); ++i)
    (in_forget[i] ? out.forget_index : out.remain_index).push_back(i);
  out.forget = shard.data.subset(out.forget_index);
  out.remain = shard.data.subset(out.remain_index);
  return out;
}

// The shard with its forgotten samples removed; remaining samples keep
// their order and bytes.
inline UserShard keep_remaining(const UserShard& shard, const ForgetSplit& split) {
  UserShard out;
  out.user_id = shard.user_id;
  out.data = split.remain;
  for (auto i : split.remain_index) out.source_index.push_back(shard.source_index.at(i));
  out.poison_mask.assign(out.data.size(), 0);
  out.forget_mask.assign(out.data.size(), 0);
  return out;
}

inline std::uint64_t assignment_hash(const std::vector<UserShard>& shards) {
  Fnv1a h;
  for (const auto& s : shards) {
    h.update_value(s.user_id);
    h.update_span(std::span<const std::size_t>(s.source_index));
  }
  return h.digest();
}

}  // namespace ff
