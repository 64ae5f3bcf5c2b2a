#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saflex/oracle.hpp"
#include "test_util.hpp"

using namespace saflex;
using namespace saflex::oracle;

namespace {

Batch random_batch(std::size_t n, std::size_t d, std::size_t K, std::mt19937_64& eng) {
  Batch b;
  b.X = test::random_matrix(n, d, eng);
  std::uniform_int_distribution<std::size_t> lab(0, K - 1);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(eng));
  return b;
}

// Independent brute force: score every assignment from all_assignments().
double brute_force(const PiScores& pi) {
  double best = -1e300;
  for (const Assignment& a : all_assignments(pi.samples(), pi.classes())) best = std::max(best, assignment_objective(pi, a));
  return best;
}

} // namespace

TEST(EnumerateOptimum, AllNegativeDropsEverything) {
  PiScores pi{Matrix{{-1.0, -0.1}, {-3.0, -2.0}, {-0.5, -0.7}}};
  auto r = enumerate_optimum(pi);
  EXPECT_EQ(r.objective, 0.0);
  for (auto k : r.best.keep) EXPECT_EQ(k, 0);
}

TEST(EnumerateOptimum, SingleSampleExample) {
  PiScores pi{Matrix{{-0.5, 0.5}}};
  auto r = enumerate_optimum(pi);
  EXPECT_EQ(r.objective, 0.5);
  EXPECT_EQ(r.best.labels[0], 1u);
  EXPECT_EQ(r.best.keep[0], 1);
  EXPECT_EQ(r.evaluated, 3u);
}

TEST(EnumerateOptimum, EvaluatesEveryVertex) {
  std::mt19937_64 eng(51);
  PiScores pi{test::random_matrix(4, 3, eng)};
  EXPECT_EQ(enumerate_optimum(pi).evaluated, 256u);
  EXPECT_EQ(all_assignments(4, 3).size(), 256u);
}

TEST(EnumerateOptimum, MatchesBruteForceAndPerSampleMax) {
  std::mt19937_64 eng(52);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t B = 1 + trial % 5, K = 1 + trial % 4;
    PiScores pi{test::random_matrix(B, K, eng)};
    auto r = enumerate_optimum(pi);
    EXPECT_EQ(r.objective, brute_force(pi));
    double decoupled = 0;
    for (std::size_t i = 0; i < B; ++i) decoupled += std::max(0.0, *std::max_element(pi[i].begin(), pi[i].end()));
    EXPECT_NEAR(r.objective, decoupled, 1e-12);
  }
}

TEST(EnumerateOptimum, TieBreakLowestIndex) {
  PiScores pi{Matrix{{0.3, 0.3, 0.1}, {0.0, 0.0, 0.0}}};
  auto r = enumerate_optimum(pi);
  EXPECT_EQ(r.best.labels[0], 0u);
  EXPECT_EQ(r.best.keep[0], 1);
  // Zero row: keeping label 0 comes before dropping.
  EXPECT_EQ(r.best.labels[1], 0u);
  EXPECT_EQ(r.best.keep[1], 1);
}

TEST(EnumerateOptimum, PermutationInvariantObjective) {
  std::mt19937_64 eng(53);
  for (int trial = 0; trial < 100; ++trial) {
    PiScores pi{test::random_matrix(5, 3, eng)};
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), eng);
    PiScores shuffled{pi.values.gather_rows(perm)};
    EXPECT_NEAR(enumerate_optimum(pi).objective, enumerate_optimum(shuffled).objective, 1e-12);
  }
}

TEST(EnumerateOptimum, SumToOneModePicksSingleBestEntry) {
  PiScores pi{Matrix{{0.2, 0.9}, {0.5, 0.95}}};
  auto r = enumerate_optimum(pi, WeightConstraint::kSumToOne);
  EXPECT_EQ(r.objective, 0.95);
  EXPECT_EQ(r.best.keep, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(r.best.labels[1], 1u);
  PiScores neg{Matrix{{-0.2, -0.9}}};
  EXPECT_EQ(enumerate_optimum(neg, WeightConstraint::kSumToOne).objective, -0.2);
}

TEST(EnumerateOptimum, GuardExceeded) {
  EXPECT_THROW(enumerate_optimum(PiScores{Matrix(9, 2)}), DomainError);
  EXPECT_THROW(enumerate_optimum(PiScores{Matrix(2, 7)}), DomainError);
}

TEST(FiniteDiff, LinearAndQuadratic) {
  std::mt19937_64 eng(54);
  ModelParams theta = test::random_params(MlpShape{{3, 4, 2}}, eng);
  ParamVector c = test::random_params(theta.shape(), eng);
  ParamGrad g = finite_diff([&](const ModelParams& q) { return param_dot(c, q); }, theta, 1e-5);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g.values()[j], c.values()[j], 1e-10);
  ModelParams zero(theta.shape());
  ParamGrad q = finite_diff([](const ModelParams& p) { return 0.5 * param_dot(p, p); }, zero, 1e-5);
  for (double v : q.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(finite_diff([](const ModelParams&) { return 0.0; }, zero, 0.0), DomainError);
}

TEST(FiniteDiff, RandomMlpCrossEntropyMatchesBackward) {
  std::mt19937_64 eng(55);
  for (int trial = 0; trial < 5; ++trial) {
    ModelParams p = test::random_params(MlpShape{{3, 6, 4}}, eng);
    Batch b = random_batch(6, 3, 4, eng);
    ParamGrad fd = finite_diff([&](const ModelParams& q) { return mean_ce(q, b); }, p, 1e-5);
    ParamGrad g = validation_gradient(p, b);
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double s = std::max({std::abs(g.values()[j]), std::abs(fd.values()[j]), 1e-8});
      if (s > 1e-7) {
        EXPECT_LE(std::abs(g.values()[j] - fd.values()[j]) / s, 1e-6);
      }
    }
  }
}

TEST(PostStepValLoss, ZeroRateLeavesLossUnchanged) {
  std::mt19937_64 eng(56);
  ModelParams p = test::random_params(MlpShape{{3, 5, 3}}, eng);
  Batch train = random_batch(4, 3, 3, eng), val = random_batch(6, 3, 3, eng);
  Matrix x = test::random_matrix(3, 3, eng);
  Assignment a{{0, 1, 2}, {1, 0, 1}};
  EXPECT_EQ(post_step_val_loss(p, train, x, a, val, 0.0), mean_ce(p, val));
  EXPECT_THROW(post_step_val_loss(p, train, x, a, val, -1.0), DomainError);
}

TEST(PostStepValLoss, AllDroppedEqualsPlainTrainStep) {
  std::mt19937_64 eng(57);
  ModelParams p = test::random_params(MlpShape{{3, 5, 3}}, eng);
  Batch train = random_batch(4, 3, 3, eng), val = random_batch(6, 3, 3, eng);
  Matrix x = test::random_matrix(3, 3, eng);
  Assignment a{{2, 1, 0}, {0, 0, 0}};
  ModelParams plain = sgd_step(p, validation_gradient(p, train), 0.1);
  EXPECT_EQ(post_step_val_loss(p, train, x, a, val, 0.1), mean_ce(plain, val));
}

TEST(PostStepValLoss, FirstOrderSlopeRichardson) {
  // (L(theta) - L(theta'(alpha))) / alpha -> <g_val, step direction>;
  // Richardson extrapolation from alpha and alpha/2 cancels the O(alpha) term.
  std::mt19937_64 eng(58);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = test::random_params(MlpShape{{3, 6, 3}}, eng);
    Batch train = random_batch(4, 3, 3, eng), val = random_batch(8, 3, 3, eng);
    Matrix x = test::random_matrix(3, 3, eng);
    Assignment a{{0, 2, 1}, {1, 1, 0}};
    const double L0 = mean_ce(p, val);
    const double slope = param_dot(validation_gradient(p, val), assignment_gradient(p, train, x, a));
    auto d = [&](double alpha) { return (L0 - post_step_val_loss(p, train, x, a, val, alpha)) / alpha; };
    const double h = 1e-3;
    const double rich = 2 * d(h / 2) - d(h);
    EXPECT_LE(std::abs(rich - slope), 1e-3 * std::max(std::abs(slope), 1e-3));
  }
}

TEST(RunCheck, SmallRunCertifies) {
  CheckConfig cfg;
  cfg.instances = 200;
  cfg.seed = 7;
  CheckReport rep = run_check(cfg);
  EXPECT_EQ(rep.instances.size(), 200u);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.max_gap, 0.0);
  EXPECT_GE(rep.tie_break_matches, 198u);
  for (const auto& r : rep.instances) {
    EXPECT_LE(r.samples, kMaxSamples);
    EXPECT_LE(r.classes, kMaxClasses);
    EXPECT_LE(r.params, 500u);
    EXPECT_GE(r.sum_rule_gap, 0.0);
  }
}

TEST(RunCheck, RejectsSingleClassAndGuard) {
  CheckConfig cfg;
  cfg.instances = 1;
  cfg.min_classes = 1;
  cfg.max_classes = 1;
  EXPECT_THROW(run_check(cfg), DomainError);
  cfg.min_classes = 2;
  cfg.max_classes = 7;
  EXPECT_THROW(run_check(cfg), DomainError);
}

TEST(AssignmentType, EquivalenceIgnoresDroppedLabels) {
  Assignment a{{0, 2}, {1, 0}}, b{{0, 1}, {1, 0}}, c{{1, 2}, {1, 0}};
  EXPECT_TRUE(a.equivalent(b));
  EXPECT_FALSE(a.equivalent(c));
}

TEST(ClosedForm, SmallPositiveScoreKeptWhereSoftRuleDrops) {
  // At tau = 0.01 the label [0.733, 0.267] puts enough mass on the negative
  // entry that Pi . y < 0, although keeping label 0 gains 1e-4.
  PiScores pi{Matrix{{1e-4, -1e-2}}};
  SaflexConfig c;
  c.gumbel_enabled = false;
  std::vector<std::size_t> orig{0};
  SaflexOutput out = saflex_assign(pi, orig, c);
  EXPECT_EQ(out.raw_weights[0], 0.0);
  Assignment closed = closed_form_assignment(pi, out);
  EXPECT_EQ(closed.keep[0], 1);
  EXPECT_EQ(assignment_objective(pi, closed), enumerate_optimum(pi).objective);
}

TEST(ClosedForm, AgreesWithSoftRuleAwayFromZero) {
  // Once the top score clears a few tau, the soft rule and its limit agree.
  std::mt19937_64 eng(59);
  SaflexConfig c;
  c.gumbel_enabled = false;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t K = 2 + trial % 5;
    PiScores pi{test::random_matrix(1, K, eng)};
    const double top = *std::max_element(pi[0].begin(), pi[0].end());
    if (top < 0.05) continue;
    std::vector<std::size_t> orig{0};
    SaflexOutput out = saflex_assign(pi, orig, c);
    ASSERT_EQ(to_assignment(out).keep, closed_form_assignment(pi, out).keep);
  }
}
