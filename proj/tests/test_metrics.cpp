// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "idconf/metrics.hpp"
#include "oracles.hpp"

namespace idconf {
namespace {

using testing::brute_force_auc;
using testing::brute_force_u;
using testing::random_scores;

TEST(Auc, SmallExamples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<Label>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.7, 0.7, 0.7, 0.7}, std::vector<Label>{1, 0, 1, 0}), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.6, 0.4, 0.6, 0.2}, std::vector<Label>{1, 0, 0, 1}), 0.375);
}

TEST(Auc, Errors) {
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<Label>{1, 1}), ComputeError);
  EXPECT_THROW(roc_auc(std::vector<double>{NAN, 0.2}, std::vector<Label>{1, 0}), DataError);
}

TEST(Auc, MatchesPairwiseOracle) {
  std::mt19937_64 gen(2026);
  for (int i = 0; i < 500; ++i) {
    const auto c = random_scores(gen, 200, i % 2 == 0);
    ASSERT_NEAR(roc_auc(c.scores, c.labels), brute_force_auc(c.scores, c.labels), 1e-12);
  }
}

TEST(Auc, NegationComplements) {
  std::mt19937_64 gen(1);
  for (int i = 0; i < 200; ++i) {
    auto c = random_scores(gen, 80, i % 2 == 0);
    const double a = roc_auc(c.scores, c.labels);
    for (auto& s : c.scores) s = -s;
    EXPECT_EQ(a + roc_auc(c.scores, c.labels), 1.0);
  }
}

TEST(Auc, InvariantToIncreasingTransforms) {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 200; ++i) {
    auto c = random_scores(gen, 80, i % 2 == 0);
    const double a = roc_auc(c.scores, c.labels);
    for (auto& s : c.scores) s = std::exp(s) * 3.0 + 1.0;
    EXPECT_NEAR(roc_auc(c.scores, c.labels), a, 1e-15);
  }
}

TEST(TieStructure, Groups) {
  auto t = tie_structure(std::vector<double>{0.6, 0.4, 0.6, 0.2}, std::vector<Label>{1, 0, 0, 1});
  EXPECT_EQ(t.n_groups(), 1u);
  EXPECT_EQ(t.tie_group_sizes, std::vector<std::size_t>{2});
  EXPECT_EQ(t.n_neg, 2u);
  EXPECT_EQ(t.n_pos, 2u);
  t = tie_structure(std::vector<double>{1, 2, 3}, std::vector<Label>{1, 0, 0});
  EXPECT_TRUE(t.tie_group_sizes.empty());
  t = tie_structure(std::vector<double>{5, 5, 5, 5, 5}, std::vector<Label>{1, 0, 0, 1, 0});
  EXPECT_EQ(t.tie_group_sizes, std::vector<std::size_t>{5});
}

TEST(UStatistic, Examples) {
  EXPECT_EQ(u_statistic(1.0, TieStructure{2, 2, {}}), 0.0);
  EXPECT_EQ(u_statistic(0.375, TieStructure{2, 2, {2}}), 2.5);
  EXPECT_EQ(u_statistic(0.5, TieStructure{3, 4, {}}), 6.0);
  EXPECT_EQ(rank_sum_u(std::vector<double>{0.6, 0.4, 0.6, 0.2}, std::vector<Label>{1, 0, 0, 1}), 2.5);
}

TEST(UStatistic, RankSumAgreesWithAucIdentityAndOracle) {
  std::mt19937_64 gen(99);
  for (int i = 0; i < 500; ++i) {
    const auto c = random_scores(gen, 200, i % 2 == 1);
    const auto ties = tie_structure(c.scores, c.labels);
    const double via_auc = u_statistic(roc_auc(c.scores, c.labels), ties);
    const double via_ranks = rank_sum_u(c.scores, c.labels);
    ASSERT_EQ(via_auc, via_ranks);
    ASSERT_EQ(via_ranks, brute_force_u(c.scores, c.labels));
  }
}

TEST(PhiSquared, ClosedForms) {
  EXPECT_DOUBLE_EQ(phi_squared(TieStructure{5, 5, {}}), 11.0 / 300.0);
  EXPECT_EQ(phi_squared(TieStructure{5, 5, {}}), (10.0 + 1.0) / (12.0 * 25.0));
  EXPECT_EQ(phi_squared(TieStructure{1, 1, {}}), 0.25);
  EXPECT_LT(phi_squared(TieStructure{5, 5, {3}}), phi_squared(TieStructure{5, 5, {}}));
  EXPECT_NEAR(phi_squared(TieStructure{5, 5, {10}}), 0.0, 1e-15);
  EXPECT_THROW(phi_squared(TieStructure{1, 0, {}}), ComputeError);
}

TEST(PhiSquared, MatchesExhaustivePermutationVariance) {
  // Variance of the AUC over every labelling of fixed scores with 4 positives among 9.
  const std::vector<double> scores{1, 2, 2, 3, 4, 4, 4, 5, 6};
  std::vector<Label> labels{0, 0, 0, 0, 0, 1, 1, 1, 1};
  double sum = 0, sum2 = 0;
  int count = 0;
  do {
    const double a = roc_auc(scores, labels);
    sum += a, sum2 += a * a, ++count;
  } while (std::next_permutation(labels.begin(), labels.end()));
  const double var = sum2 / count - (sum / count) * (sum / count);
  EXPECT_NEAR(sum / count, 0.5, 1e-12);
  EXPECT_NEAR(phi_squared(tie_structure(scores, labels)), var, 1e-12);
}

TEST(AnalyticP, SymmetryAndMonotonicity) {
  const TieStructure t{8, 9, {}};
  EXPECT_EQ(auc_analytic_pvalue(0.5, t), 0.5);
  EXPECT_EQ(pseudo_pvalue(0.5, t), 0.5);
  double prev = 1.0;
  for (double auc = 0.0; auc <= 1.0; auc += 0.01) {
    const double p = auc_analytic_pvalue(auc, t);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_LE(p, prev);
    prev = p;
  }
  EXPECT_LT(auc_analytic_pvalue(1.0, t), 1e-3);
}

TEST(PseudoP, StrictlyDecreasingInMedian) {
  const TieStructure t{300, 400, {2, 2, 5}};
  double prev = 2.0;
  for (double m = 0.45; m < 0.6; m += 0.002) {
    const double p = pseudo_pvalue(m, t);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(PseudoP, ExtremeMedianUnderflowsButLogStaysFinite) {
  const TieStructure t{3000, 3000, {}};
  EXPECT_EQ(pseudo_pvalue(0.954, t), 0.0);
  const double lp = log_pseudo_pvalue(0.954, t);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_LT(lp, -700.0);
  const double z = (0.7 - 0.5) / std::sqrt(phi_squared(TieStructure{60, 60, {}}));
  EXPECT_NEAR(log_pseudo_pvalue(0.7, TieStructure{60, 60, {}}), std::log(normal_upper_tail(z)), 1e-9);
}

TEST(PseudoP, ZeroVarianceIsAnError) {
  EXPECT_THROW(pseudo_pvalue(0.5, TieStructure{3, 3, {6}}), ComputeError);
}

/// Exhaustive record-wise label permutations of 12 fixed scores (6 per class).
std::map<int, int> exhaustive_u_counts() {
  std::vector<double> scores(12);
  for (int i = 0; i < 12; ++i) scores[i] = 0.1 * i;
  std::vector<Label> labels{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  std::map<int, int> counts;
  do counts[static_cast<int>(std::lround(roc_auc(scores, labels) * 36))]++;
  while (std::next_permutation(labels.begin(), labels.end()));
  return counts;
}

TEST(AnalyticP, CloseToExhaustivePermutationInTheTail) {
  const auto counts = exhaustive_u_counts();
  const TieStructure t{6, 6, {}};
  for (int k = 0; k <= 36; ++k) {
    int at_least = 0, above = 0;
    for (const auto& [u, c] : counts) at_least += u >= k ? c : 0, above += u > k ? c : 0;
    const double exact = at_least / 924.0;
    const double mid = (above + 0.5 * (at_least - above)) / 924.0;
    const double analytic = auc_analytic_pvalue(k / 36.0, t);
    EXPECT_NEAR(analytic, mid, 0.02) << k;
    if (exact <= 0.1) {
      EXPECT_NEAR(analytic, exact, 0.02) << k;
    }
  }
}

TEST(Roc, MonotoneFromOriginToOne) {
  std::mt19937_64 gen(12);
  for (int i = 0; i < 100; ++i) {
    const auto c = random_scores(gen, 100, i % 2 == 0);
    const auto pts = roc_points(c.scores, c.labels);
    ASSERT_EQ(pts.front().fpr, 0.0);
    ASSERT_EQ(pts.front().tpr, 0.0);
    ASSERT_EQ(pts.back().fpr, 1.0);
    ASSERT_EQ(pts.back().tpr, 1.0);
    double area = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      ASSERT_GE(pts[k].fpr, pts[k - 1].fpr);
      ASSERT_GE(pts[k].tpr, pts[k - 1].tpr);
      area += (pts[k].fpr - pts[k - 1].fpr) * 0.5 * (pts[k].tpr + pts[k - 1].tpr);
    }
    EXPECT_NEAR(area, roc_auc(c.scores, c.labels), 1e-12);
  }
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), ComputeError);
}

}  // namespace
}  // namespace idconf
