#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedforget/data/loaders.hpp"
#include "fedforget/unlearn/run.hpp"
#include "support.hpp"

using namespace ff;

namespace {

Batch<double> synthetic_batch(std::size_t n, std::uint64_t seed = 0) {
  auto splits = make_synthetic(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch<double>(splits.train, idx);
}

struct Models {
  ParamVector<double> teacher{""}, student{""}, anchor{""};
};

Models models(const std::string& arch = "synthetic_cnn") {
  const auto& a = find_arch(arch);
  Models m;
  m.teacher = init_model<double>(a, 1);
  m.student = init_model<double>(a, 2);
  m.anchor = init_model<double>(a, 3);
  return m;
}

UnlearnConfig only(double d, double ama, double h, double reg) {
  UnlearnConfig c;
  c.mu_D = d;
  c.mu_AMA = ama;
  c.mu_H = h;
  c.lambda_reg = reg;
  c.reduction = UnlearnConfig::Reduction::sum;
  return c;
}

fftest::FdReport check_objective(const Models& m, const Batch<double>& b, const UnlearnConfig& c) {
  auto g = m.student.zeros_like();
  unlearn_objective(m.teacher, m.student, m.anchor, b, c, &g);
  return fftest::fd_check(
      [&](const ParamVector<double>& p) { return unlearn_loss(m.teacher, p, m.anchor, b, c); },
      m.student, g);
}

double oracle_softmax_ce(std::span<const double> z, int y) {
  double mx = *std::max_element(z.begin(), z.end()), s = 0;
  for (double v : z) s += std::exp(v - mx);
  return -(z[std::size_t(y)] - mx - std::log(s));
}

}  // namespace

TEST(Softmax, HandComputedExample) {
  std::vector<double> z{1, 2, 3};
  auto p = softened_probs<double>(z, 1.0);
  const double d = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(p[0], std::exp(1.0) / d, 1e-12);
  EXPECT_NEAR(p[2], std::exp(3.0) / d, 1e-12);
  auto q = softened_probs<double>(z, 2.0);
  const double e = std::exp(0.5) + std::exp(1.0) + std::exp(1.5);
  EXPECT_NEAR(q[1], std::exp(1.0) / e, 1e-12);
}

TEST(Softmax, TemperatureFlattens) {
  std::vector<double> z{0, 5};
  EXPECT_GT(softened_probs<double>(z, 1.0)[1], softened_probs<double>(z, 4.0)[1]);
  auto u = softened_probs<double>(std::vector<double>{3, 3, 3, 3}, 2.0);
  for (double v : u) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Softmax, NormalizedForRandomLogits) {
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(-50, 50), t(0.1, 10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(1 + trial % 12);
    for (auto& v : z) v = u(rng);
    auto p = softened_probs<double>(z, t(rng));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Distillation, UniformTeacherAndStudent) {
  Tensor<double> t({4, 10}, 0.1), s({4, 10}, 0.1);
  EXPECT_NEAR(distillation_loss(t, s), 4 * std::log(10.0), 1e-12);
}

TEST(Distillation, MatchesDirectFormula) {
  Tensor<double> t({2, 3}, std::vector<double>{0.2, 0.3, 0.5, 1, 0, 0});
  Tensor<double> s({2, 3}, std::vector<double>{0.1, 0.1, 0.8, 0.6, 0.3, 0.1});
  const double expect = -(0.2 * std::log(0.1) + 0.3 * std::log(0.1) + 0.5 * std::log(0.8)) -
                        std::log(0.6);
  EXPECT_NEAR(distillation_loss(t, s), expect, 1e-12);
}

TEST(Distillation, ClipsZeroStudentProbability) {
  Tensor<double> t({1, 2}, std::vector<double>{1, 0}), s({1, 2}, std::vector<double>{0, 1});
  EXPECT_NEAR(distillation_loss(t, s), -std::log(1e-12), 1e-9);
}

TEST(Distillation, EmptyBatchIsContractError) {
  Tensor<double> t({0, 3}), s({0, 3});
  EXPECT_THROW(distillation_loss(t, s), ContractError);
}

TEST(Attention, MapSumsPoweredChannels) {
  Tensor<double> f({2, 1, 2}, std::vector<double>{1, -2, 3, 0.5});
  auto a2 = attention_map(f, 2.0);
  EXPECT_NEAR(a2.data[0], 1 + 9, 1e-12);
  EXPECT_NEAR(a2.data[1], 4 + 0.25, 1e-12);
  auto a1 = attention_map(f, 1.0);
  EXPECT_NEAR(a1.data[1], 2.5, 1e-12);
  auto a3 = attention_map(f, 3.0);
  EXPECT_NEAR(a3.data[0], 1 + 27, 1e-9);
}

TEST(Attention, OrthogonalMapsAreSqrtTwoApart) {
  Tensor<double> a({2, 2}, std::vector<double>{1, 0, 0, 0});
  Tensor<double> b({2, 2}, std::vector<double>{0, 0, 0, 3});
  EXPECT_NEAR(attention_distance(a, b), std::sqrt(2.0), 1e-12);
}

TEST(Attention, IdenticalMapsAreZeroApart) {
  Tensor<double> a({2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_NEAR(attention_distance(a, a), 0.0, 1e-15);
}

TEST(Attention, ScaleInvariant) {
  auto rng = make_rng(11);
  std::uniform_real_distribution<double> u(0, 1), s(0.01, 100);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> a({3, 3}), b({3, 3});
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    const double d = attention_distance(a, b);
    auto a2 = a, b2 = b;
    const double ka = s(rng), kb = s(rng);
    for (auto& v : a2.data) v *= ka;
    for (auto& v : b2.data) v *= kb;
    EXPECT_NEAR(attention_distance(a2, b2), d, 1e-12);
    EXPECT_LE(d, 2.0);
  }
}

TEST(Attention, AllZeroMapIsDegenerate) {
  Tensor<double> a({2, 2}), b({2, 2}, 1.0);
  EXPECT_THROW(attention_distance(a, b), DegenerateInputError);
  EXPECT_THROW(attention_distance(b, a), DegenerateInputError);
}

TEST(Attention, AmaTapSkipsZeroSamples) {
  Tensor<double> t({2, 1, 2, 2}, 1.0), s({2, 1, 2, 2}, 1.0);
  for (int i = 0; i < 4; ++i) s.data[std::size_t(i)] = 0;
  auto v = ama_tap(t, s, 2.0, 1.0, nullptr);
  EXPECT_EQ(v.skipped, 1u);
  EXPECT_EQ(v.evaluated, 1u);
  EXPECT_NEAR(v.value, 0.0, 1e-15);
}

TEST(HardLoss, BoundedFromCe) {
  std::vector<double> ce{1.0, 20.0, 15.0, 0.0};
  EXPECT_NEAR(bounded_hard_from_ce<double>(ce, 15.0), 14.0 + 0 + 0 + 15.0, 1e-12);
  EXPECT_NEAR(bounded_hard_from_ce<double>(ce, 0.0), 0.0, 0.0);
}

TEST(HardLoss, MatchesPerSampleOracle) {
  auto m = models();
  auto b = synthetic_batch(12);
  auto logits = forward(m.student, b.x);
  double expect = 0;
  for (std::size_t n = 0; n < b.size(); ++n)
    expect += std::max(0.0, 1.0 - oracle_softmax_ce(logits.row(n), b.labels[n]));
  EXPECT_NEAR(bounded_hard_loss(m.student, b.x, b.labels, 1.0), expect, 1e-10);
}

TEST(Objective, ComposesSeparatelyEvaluatedTerms) {
  auto rng = make_rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  auto m = models();
  auto b = synthetic_batch(16);
  for (int trial = 0; trial < 20; ++trial) {
    UnlearnConfig c;
    c.mu_D = u(rng);
    c.mu_AMA = u(rng);
    c.mu_H = u(rng);
    c.lambda_reg = u(rng);
    c.temp = 0.5 + 4 * u(rng);
    c.bnd = 3 * u(rng);
    c.reduction = trial % 2 ? UnlearnConfig::Reduction::sum : UnlearnConfig::Reduction::mean;
    const double k = trial % 2 ? 1.0 : 1.0 / double(b.size());
    auto zt = forward(m.teacher, b.x), zs = forward(m.student, b.x);
    const double d = distillation_loss(softmax_rows(zt, c.temp), softmax_rows(zs, c.temp));
    const double h = bounded_hard_loss(m.student, b.x, b.labels, c.bnd);
    const double a = ama_loss(m.teacher, m.student, b.x, {"conv1_act"}, c.q).value;
    const double r = (m.student - m.anchor).squared_norm();
    const double expect = k * (c.mu_D * d + c.mu_H * h) + c.mu_AMA * a + c.lambda_reg * r;
    EXPECT_NEAR(unlearn_loss(m.teacher, m.student, m.anchor, b, c), expect, 1e-6);
  }
}

TEST(Objective, AmaMeansOverTaps) {
  auto m = models("lenet5_mnist");
  Tensor<double> x({3, 1, 28, 28});
  auto rng = make_rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : x.data) v = u(rng);
  auto a1 = ama_loss(m.teacher, m.student, x, {"conv1_act"}, 2.0).value;
  auto a2 = ama_loss(m.teacher, m.student, x, {"conv2_act"}, 2.0).value;
  auto both = ama_loss(m.teacher, m.student, x, {"conv1_act", "conv2_act"}, 2.0).value;
  EXPECT_NEAR(both, 0.5 * (a1 + a2), 1e-12);
}

TEST(ObjectiveGrad, DistillationMatchesFiniteDifference) {
  auto m = models();
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), only(1, 0, 0, 0)), 1e-3);
}

TEST(ObjectiveGrad, DistillationAtOtherTemperature) {
  auto m = models();
  auto c = only(1, 0, 0, 0);
  c.temp = 0.7;
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), c), 1e-3);
}

TEST(ObjectiveGrad, AttentionAlignmentMatchesFiniteDifference) {
  auto m = models();
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), only(0, 1, 0, 0)), 1e-3);
}

TEST(ObjectiveGrad, AttentionAlignmentOnLenetBothTaps) {
  auto m = models("lenet5_mnist");
  Batch<double> b{Tensor<double>({2, 1, 28, 28}), {1, 7}};
  auto rng = make_rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : b.x.data) v = u(rng);
  auto c = only(0, 1, 0, 0);
  c.tap_layers = {"conv1_act", "conv2_act"};
  EXPECT_FD_OK(check_objective(m, b, c), 1e-3);
}

TEST(ObjectiveGrad, AttentionWithQOne) {
  auto m = models();
  auto c = only(0, 1, 0, 0);
  c.q = 1.0;
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), c), 1e-3);
}

TEST(ObjectiveGrad, BoundedHardMatchesFiniteDifference) {
  auto m = models();
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), only(0, 0, 1, 0)), 1e-3);
}

TEST(ObjectiveGrad, UnboundedHardMatchesFiniteDifference) {
  auto m = models();
  auto c = only(0, 0, 1, 0);
  c.legacy_unbounded_hard = true;
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), c), 1e-3);
}

TEST(ObjectiveGrad, HardLossInactiveAboveBound) {
  auto m = models();
  auto b = synthetic_batch(8);
  auto c = only(0, 0, 1, 0);
  c.bnd = 0.0;
  auto g = m.student.zeros_like();
  auto t = unlearn_objective(m.teacher, m.student, m.anchor, b, c, &g);
  EXPECT_EQ(t.hard, 0.0);
  EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(ObjectiveGrad, RegularizerIsTwoLambdaDelta) {
  auto m = models();
  auto b = synthetic_batch(4);
  auto c = only(0, 0, 0, 0.4);
  auto g = m.student.zeros_like();
  unlearn_objective(m.teacher, m.student, m.anchor, b, c, &g);
  auto expect = (m.student - m.anchor) *= 0.8;
  EXPECT_LT((g - expect).l2_norm(), 1e-12);
  EXPECT_FD_OK(check_objective(m, b, c), 1e-3);
}

TEST(ObjectiveGrad, FullObjectiveMeanReduction) {
  auto m = models();
  UnlearnConfig c;
  c.bnd = 1.0;
  EXPECT_FD_OK(check_objective(m, synthetic_batch(8), c), 1e-3);
}

TEST(Objective, MeanReductionScalesBatchTerms) {
  auto m = models();
  auto b = synthetic_batch(10);
  auto s = only(0.3, 0, 0.7, 0);
  auto mean = s;
  mean.reduction = UnlearnConfig::Reduction::mean;
  EXPECT_NEAR(unlearn_loss(m.teacher, m.student, m.anchor, b, mean),
              unlearn_loss(m.teacher, m.student, m.anchor, b, s) / 10.0, 1e-12);
}

TEST(Objective, SmallStepDecreasesLoss) {
  auto m = models();
  auto b = synthetic_batch(16);
  UnlearnConfig c;
  c.bnd = 2.0;
  auto g = m.student.zeros_like();
  const double before = unlearn_objective(m.teacher, m.student, m.anchor, b, c, &g).total;
  auto p = m.student;
  p.axpy(-1e-3, g);
  EXPECT_LT(unlearn_loss(m.teacher, p, m.anchor, b, c), before);
}

TEST(Objective, TeacherEqualsStudentGivesZeroAma) {
  auto m = models();
  auto c = only(0, 1, 0, 0);
  EXPECT_NEAR(unlearn_loss(m.student, m.student, m.anchor, synthetic_batch(8), c), 0.0, 1e-12);
}

TEST(Config, RejectsBadValues) {
  UnlearnConfig c;
  c.mu_D = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.temp = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.q = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_decay_factor = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, DefaultTapFallback) {
  UnlearnConfig c;
  EXPECT_EQ(c.taps_for(find_arch("lenet5_mnist")), std::vector<std::string>{"conv2_act"});
  c.tap_layers = {"conv1_act"};
  EXPECT_EQ(c.taps_for(find_arch("lenet5_mnist")), std::vector<std::string>{"conv1_act"});
}

TEST(RunUnlearn, ZeroEpochsReturnsGlobal) {
  auto splits = make_synthetic(0);
  auto g = init_model(find_arch("synthetic_cnn"), 1), t = init_model(find_arch("synthetic_cnn"), 2);
  UnlearnConfig c;
  c.epochs = 0;
  auto r = run_unlearn(g, t, splits.train, c);
  EXPECT_EQ(r.params, g);
  EXPECT_TRUE(r.epochs.empty());
}

TEST(RunUnlearn, DeterministicAndRecordsDecay) {
  auto splits = make_synthetic(0);
  auto g = init_model(find_arch("synthetic_cnn"), 1), t = init_model(find_arch("synthetic_cnn"), 2);
  UnlearnConfig c;
  c.epochs = 3;
  c.batch_size = 32;
  c.lr_decay = true;
  c.lr_decay_factor = 0.5;
  c.seed = 4;
  auto a = run_unlearn(g, t, splits.train, c), b = run_unlearn(g, t, splits.train, c);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.epochs.size(), 3u);
  EXPECT_DOUBLE_EQ(a.epochs[0].lr, 5e-3);
  EXPECT_DOUBLE_EQ(a.epochs[2].lr, 5e-3 * 0.25);
  EXPECT_FALSE(a.params == g);
}

TEST(RunUnlearn, EmptyForgetSetIsContractError) {
  LabeledDataset empty("e", 2, {1, 8, 8});
  auto g = init_model(find_arch("synthetic_cnn"), 1);
  EXPECT_THROW(run_unlearn(g, g, empty, UnlearnConfig{}), ContractError);
}

TEST(RunUnlearn, DivergenceCarriesLastFiniteModel) {
  auto splits = make_synthetic(0);
  auto g = init_model(find_arch("synthetic_cnn"), 1), t = init_model(find_arch("synthetic_cnn"), 2);
  UnlearnConfig c;
  c.lr_unlearn = 1e30;
  c.epochs = 5;
  try {
    run_unlearn(g, t, splits.train, c);
    FAIL() << "expected divergence";
  } catch (const UnlearnDiverged& e) {
    EXPECT_TRUE(e.last_finite.all_finite());
  }
}

TEST(RunUnlearn, ForgetsOnSyntheticClass) {
  auto splits = make_synthetic(0);
  auto t0 = init_model(find_arch("synthetic_cnn"), 1);
  OptConfig o;
  o.learning_rate = 0.05;
  o.momentum = 0.9;
  o.batch_size = 16;
  auto p = t0;
  OptState<float> st;
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < 20; ++e)
    for_each_chunk(std::span<const std::size_t>(order), o.batch_size, [&](auto idx) {
      auto b = make_batch<float>(splits.train, idx);
      optimizer_step(p, grad(ce_loss_and_grad<float>, p, b), o, st);
    });
  const std::vector<int> one{1};
  auto forget = splits.train.filter_classes(one, true);
  auto test_f = splits.test.filter_classes(one, true);
  auto logits_before = predict_logits(p, test_f);
  UnlearnConfig c;
  c.lr_unlearn = 0.05;
  c.epochs = 10;
  c.batch_size = 16;
  auto r = run_unlearn(p, t0, forget, c);
  auto ce_before = per_sample_ce(logits_before, std::span<const int>(test_f.labels()));
  auto ce_after = per_sample_ce(predict_logits(r.params, test_f), std::span<const int>(test_f.labels()));
  EXPECT_GT(std::accumulate(ce_after.begin(), ce_after.end(), 0.0),
            std::accumulate(ce_before.begin(), ce_before.end(), 0.0));
}
