#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "fedforget/data/loaders.hpp"
#include "fedforget/data/partition.hpp"

using namespace ff;

namespace {

std::filesystem::path data_root() {
  if (const char* env = std::getenv("FEDFORGET_DATA_ROOT")) return env;
  return FEDFORGET_DEFAULT_DATA_ROOT;
}

LabeledDataset tiny(std::size_t n, int classes = 3) {
  LabeledDataset ds("tiny", classes, {1, 4, 4});
  std::vector<float> f(16);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 16; ++k) f[k] = float((i * 7 + k) % 11) / 10.f;
    ds.push_back(f, int(i % std::size_t(classes)));
  }
  return ds;
}

}  // namespace

TEST(Synthetic, DeterministicTwoClassEightByEight) {
  auto a = make_synthetic(0), b = make_synthetic(0), c = make_synthetic(1);
  EXPECT_EQ(a.train.size(), 256u);
  EXPECT_EQ(a.test.size(), 64u);
  EXPECT_EQ(a.train.class_count(), 2);
  EXPECT_EQ(a.train.shape().height, 8u);
  EXPECT_EQ(a.train.content_hash(), b.train.content_hash());
  EXPECT_EQ(a.train.raw_features(), b.train.raw_features());
  EXPECT_NE(a.train.content_hash(), c.train.content_hash());
  for (float v : a.train.raw_features()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Loaders, UnknownNameAndMissingFiles) {
  EXPECT_THROW(load_dataset("cifar7", "/nonexistent"), ConfigError);
  try {
    load_dataset("mnist", "/nonexistent/root");
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/root"), std::string::npos);
  }
}

TEST(Loaders, MnistCounts) {
  if (!std::filesystem::exists(data_root() / "mnist")) GTEST_SKIP() << "MNIST not present";
  auto s = load_dataset("mnist", data_root());
  EXPECT_EQ(s.train.size(), 60000u);
  EXPECT_EQ(s.test.size(), 10000u);
  EXPECT_EQ(s.train.class_count(), 10);
  EXPECT_EQ(s.train.shape().size(), 784u);
}

TEST(Partition, EvenSplitDisjointAndCovering) {
  auto ds = tiny(10);
  auto shards = partition_uniform(ds, 2, 3);
  ASSERT_EQ(shards.size(), 2u);
  EXPECT_EQ(shards[0].size(), 5u);
  EXPECT_EQ(shards[1].size(), 5u);
  std::set<std::size_t> seen;
  for (auto& s : shards)
    for (auto i : s.source_index) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Partition, PropertySweep) {
  for (std::size_t n : {7u, 13u, 50u, 101u})
    for (int users : {1, 2, 3, 7})
      for (std::uint64_t seed : {0u, 1u, 99u}) {
        auto ds = tiny(n);
        auto shards = partition_uniform(ds, users, seed);
        std::vector<int> hit(n, 0);
        std::size_t lo = n, hi = 0;
        for (auto& s : shards) {
          lo = std::min(lo, s.size());
          hi = std::max(hi, s.size());
          for (std::size_t k = 0; k < s.size(); ++k) {
            ++hit[s.source_index[k]];
            auto a = s.data.features(k), b = ds.features(s.source_index[k]);
            EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
          }
        }
        EXPECT_LE(hi - lo, 1u);
        for (int h : hit) EXPECT_EQ(h, 1);
        EXPECT_EQ(assignment_hash(shards), assignment_hash(partition_uniform(ds, users, seed)));
      }
}

TEST(Partition, SingleUserIsPermutationAndTooManyUsersFails) {
  auto ds = tiny(9);
  auto s = partition_uniform(ds, 1, 4);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].size(), 9u);
  EXPECT_THROW(partition_uniform(ds, 10, 0), PartitionError);
  EXPECT_THROW(partition_uniform(ds, 0, 0), PartitionError);
}

TEST(Poison, CountTriggerAndMasks) {
  auto ds = tiny(100, 10);
  auto shard = partition_uniform(ds, 1, 0)[0];
  auto trig = TriggerSpec::bottom_right(ds.shape(), 2, 0);
  auto p = poison_shard(shard, 0.10, trig, 5);
  EXPECT_EQ(p.count_poison(), 10u);
  EXPECT_EQ(p.count_forget(), 10u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto a = p.data.features(i), b = shard.data.features(i);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool in_patch = r >= 2 && c >= 2;
        if (p.poison_mask[i] && in_patch)
          EXPECT_EQ(a[r * 4 + c], 1.f);
        else
          EXPECT_EQ(a[r * 4 + c], b[r * 4 + c]);
      }
    EXPECT_EQ(p.data.label(i), p.poison_mask[i] ? 0 : shard.data.label(i));
    EXPECT_TRUE(!p.poison_mask[i] || p.forget_mask[i]);
  }
  EXPECT_EQ(p.poison_mask, poison_shard(shard, 0.10, trig, 5).poison_mask);
}

TEST(Poison, FloorToZeroAndInvalidRate) {
  auto shard = partition_uniform(tiny(9, 10), 1, 0)[0];
  auto trig = TriggerSpec::bottom_right(shard.data.shape(), 2, 0);
  auto p = poison_shard(shard, 0.1, trig, 1);
  EXPECT_EQ(p.count_poison(), 0u);
  EXPECT_EQ(p.data, shard.data);
  EXPECT_THROW(poison_shard(shard, 0.0, trig, 1), ConfigError);
  EXPECT_THROW(poison_shard(shard, 1.0, trig, 1), ConfigError);
}

TEST(Trigger, MustFitAndTargetInRange) {
  ImageShape s{1, 4, 4};
  TriggerSpec t{3, 3, 2, 2, 1.f, 0};
  EXPECT_THROW(t.validate(s, 10), ContractError);
  TriggerSpec u{0, 0, 2, 2, 1.f, 12};
  EXPECT_THROW(u.validate(s, 10), ContractError);
}

TEST(SplitForget, CategoryModeAndErrors) {
  auto shard = partition_uniform(tiny(30, 3), 1, 0)[0];
  std::vector<int> cls{1};
  auto sp = split_forget(shard, ForgetMode::category, cls);
  EXPECT_EQ(sp.forget.size(), 10u);
  for (std::size_t i = 0; i < sp.forget.size(); ++i) EXPECT_EQ(sp.forget.label(i), 1);
  for (std::size_t i = 0; i < sp.remain.size(); ++i) EXPECT_NE(sp.remain.label(i), 1);
  std::vector<int> all{0, 1, 2};
  EXPECT_THROW(split_forget(shard, ForgetMode::category, all), ContractError);
  EXPECT_THROW(split_forget(shard, ForgetMode::category, {}), ContractError);
  auto none = split_forget(shard, ForgetMode::sample);
  EXPECT_TRUE(none.forget.empty());
  EXPECT_EQ(none.remain, shard.data);
}

TEST(SplitForget, PartitionPropertyOverRandomShards) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto ds = tiny(20 + seed * 3, 10);
    auto shard = partition_uniform(ds, 1, seed)[0];
    shard = poison_shard(shard, 0.05 + 0.04 * double(seed % 5),
                         TriggerSpec::bottom_right(ds.shape(), 2, 0), seed);
    auto sp = split_forget(shard, ForgetMode::sample);
    EXPECT_EQ(sp.forget.size() + sp.remain.size(), shard.size());
    std::set<std::size_t> a(sp.forget_index.begin(), sp.forget_index.end());
    for (auto i : sp.remain_index) EXPECT_FALSE(a.count(i));
    auto kept = keep_remaining(shard, sp);
    EXPECT_EQ(kept.data, sp.remain);
    EXPECT_EQ(kept.count_forget(), 0u);
  }
}
