#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedforget/data/loaders.hpp"
#include "fedforget/evalkit/metrics.hpp"

using namespace ff;

namespace {

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * (std::log(p[i]) - std::log(q[i]));
  return s;
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  for (auto& v : p) v = e(rng);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= s;
  return p;
}

// Synthetic classifier whose fc2 bias decides every prediction.
ParamVector<float> constant_predictor(int cls) {
  auto p = init_model(find_arch("synthetic_cnn"), 1);
  ParamVector<float> out(p.arch_id());
  for (const auto& [name, t] : p) {
    Tensor<float> z(t.shape, 0.f);
    if (name == "fc2.bias") z.data[std::size_t(cls)] = 10.f;
    out.add(name, z);
  }
  return out;
}

}  // namespace

TEST(Jsd, IdentityIsZero) {
  std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(jsd(p, p), 0.0);
}

TEST(Jsd, DisjointSupportIsLogTwo) {
  std::vector<double> p{0.5, 0.5, 0, 0}, q{0, 0, 0.25, 0.75};
  EXPECT_NEAR(jsd(p, q), std::log(2.0), 1e-9);
}

TEST(Jsd, MatchesTwoKlOracleAndIsSymmetric) {
  auto rng = make_rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_simplex(2 + trial % 9, rng), q = random_simplex(p.size(), rng);
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    EXPECT_NEAR(jsd(p, q), 0.5 * kl(p, m) + 0.5 * kl(q, m), 1e-9);
    EXPECT_NEAR(jsd(p, q), jsd(q, p), 1e-15);
    EXPECT_GE(jsd(p, q), 0.0);
    EXPECT_LE(jsd(p, q), std::log(2.0) + 1e-12);
  }
}

TEST(Jsd, RejectsUnnormalizedInput) {
  std::vector<double> p{0.5, 0.6}, q{0.5, 0.5};
  EXPECT_THROW(jsd(p, q), ContractError);
  std::vector<double> a{1.0}, b{0.5, 0.5};
  EXPECT_THROW(jsd(a, b), ContractError);
}

TEST(Accuracy, ConstantPredictorOnItsClass) {
  auto s = make_synthetic(0);
  const std::vector<int> one{1};
  auto ones = s.test.filter_classes(one, true);
  EXPECT_EQ(accuracy(constant_predictor(1), ones), 1.0);
  EXPECT_EQ(accuracy(constant_predictor(0), ones), 0.0);
}

TEST(Accuracy, MatchesLoopOracle) {
  auto s = make_synthetic(2);
  auto p = init_model(find_arch("synthetic_cnn"), 5);
  auto logits = predict_logits(p, s.test);
  std::size_t hit = 0;
  for (std::size_t n = 0; n < s.test.size(); ++n) {
    auto r = logits.row(n);
    hit += int(std::max_element(r.begin(), r.end()) - r.begin()) == s.test.label(n);
  }
  EXPECT_DOUBLE_EQ(accuracy(p, s.test), double(hit) / double(s.test.size()));
}

TEST(Accuracy, UntrainedModelNearChance) {
  auto s = make_synthetic(0);
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    mean += accuracy(init_model(find_arch("synthetic_cnn"), seed), s.test) / 20;
  EXPECT_NEAR(mean, 0.5, 0.15);
}

TEST(Accuracy, EmptyDatasetIsContractError) {
  LabeledDataset e("e", 2, {1, 8, 8});
  EXPECT_THROW(accuracy(constant_predictor(0), e), ContractError);
}

TEST(Backdoor, TriggeredCopySkipsTargetClass) {
  auto s = make_synthetic(0);
  TriggerSpec t = TriggerSpec::bottom_right(s.test.shape(), 2, 0);
  auto c = triggered_copy(s.test, t);
  const std::vector<int> zero{0};
  EXPECT_EQ(c.size(), s.test.size() - s.test.filter_classes(zero, true).size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(c.label(i), 0);
    EXPECT_EQ(c.features(i)[63], 1.0f);
  }
}

TEST(Backdoor, AsrCountsTargetPredictions) {
  auto s = make_synthetic(0);
  TriggerSpec t = TriggerSpec::bottom_right(s.test.shape(), 2, 0);
  EXPECT_EQ(backdoor_asr(constant_predictor(0), s.test, t), 1.0);
  EXPECT_EQ(backdoor_asr(constant_predictor(1), s.test, t), 0.0);
}

TEST(Backdoor, NoEligibleSamplesIsContractError) {
  auto s = make_synthetic(0);
  const std::vector<int> zero{0};
  auto zeros = s.test.filter_classes(zero, true);
  EXPECT_THROW(backdoor_asr(constant_predictor(0), zeros, TriggerSpec::bottom_right(zeros.shape(), 2, 0)),
               ContractError);
}

TEST(Mia, IdenticalDistributionsNearHalf) {
  auto rng = make_rng(8);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> a(2000), b(2000);
  for (auto& v : a) v = n(rng);
  for (auto& v : b) v = n(rng);
  EXPECT_NEAR(mia_from_scores(a, b, 1).success, 0.5, 0.05);
}

TEST(Mia, SeparatedScoresNearOne) {
  std::vector<double> members(100, 0.0), others(100, -5.0);
  for (std::size_t i = 0; i < 100; ++i) members[i] -= 1e-3 * double(i);
  auto r = mia_from_scores(members, others, 0);
  EXPECT_EQ(r.success, 1.0);
  EXPECT_EQ(r.per_side, 100u);
}

TEST(Mia, BalancesSidesBySubsampling) {
  std::vector<double> members(40, 1.0), others(400, 0.0);
  auto r = mia_from_scores(members, others, 2);
  EXPECT_EQ(r.per_side, 40u);
  EXPECT_EQ(r.success, 1.0);
}

TEST(Mia, DeterministicGivenSeed) {
  auto rng = make_rng(1);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> a(300), b(300);
  for (auto& v : a) v = n(rng) + 0.3;
  for (auto& v : b) v = n(rng);
  EXPECT_EQ(mia_from_scores(a, b, 4).success, mia_from_scores(a, b, 4).success);
}

TEST(Mia, TooFewSamplesIsContractError) {
  std::vector<double> a(29, 0.0), b(100, 0.0);
  EXPECT_THROW(mia_from_scores(a, b, 0), ContractError);
}

TEST(Mia, MemorizedMembersAreDetected) {
  // Members sit at near-zero loss, the holdout at a large one.
  auto s = make_synthetic(0);
  const std::vector<int> one{1}, zero{0};
  auto members = s.train.filter_classes(one, true);
  auto holdout = s.test.filter_classes(zero, true);
  EXPECT_EQ(mia_success(constant_predictor(1), members, holdout, 0).success, 1.0);
  EXPECT_NEAR(mia_success(constant_predictor(1), members, s.train.filter_classes(one, true), 0).success,
              0.5, 1e-12);
}

TEST(Distance, IdenticalModelsAreZero) {
  auto s = make_synthetic(0);
  auto p = init_model(find_arch("synthetic_cnn"), 3);
  auto d = pred_distribution_distance(p, p, s.test);
  EXPECT_EQ(d.jsd_mean, 0.0);
  EXPECT_EQ(d.l2_mean, 0.0);
}

TEST(Distance, MatchesPerSampleLoopAndBounds) {
  auto s = make_synthetic(0);
  auto a = init_model(find_arch("synthetic_cnn"), 3), b = init_model(find_arch("synthetic_cnn"), 4);
  auto pa = predict_probs(a, s.test), pb = predict_probs(b, s.test);
  double j = 0, l = 0;
  for (std::size_t n = 0; n < s.test.size(); ++n) {
    j += jsd(pa[n], pb[n]);
    l += std::hypot(pa[n][0] - pb[n][0], pa[n][1] - pb[n][1]);
  }
  auto d = pred_distribution_distance(a, b, s.test);
  EXPECT_NEAR(d.jsd_mean, j / double(s.test.size()), 1e-12);
  EXPECT_NEAR(d.l2_mean, l / double(s.test.size()), 1e-12);
  EXPECT_LE(d.l2_mean, std::sqrt(2.0));
  auto far = pred_distribution_distance(constant_predictor(0), constant_predictor(1), s.test);
  EXPECT_NEAR(far.l2_mean, std::sqrt(2.0), 1e-3);
  EXPECT_NEAR(far.jsd_mean, std::log(2.0), 1e-3);
}
