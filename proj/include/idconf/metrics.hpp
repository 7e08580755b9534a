// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"

namespace idconf {

/// Class counts and tie groups of a pooled score vector. Groups of size one
/// are not listed.
struct TieStructure {
  std::size_t n_neg = 0;
  std::size_t n_pos = 0;
  std::vector<std::size_t> tie_group_sizes;

  std::size_t n() const noexcept { return n_neg + n_pos; }
  std::size_t n_groups() const noexcept { return tie_group_sizes.size(); }

  friend bool operator==(const TieStructure&, const TieStructure&) = default;
};

namespace detail {

inline void count_classes(std::span<const Label> labels, std::size_t& n_neg, std::size_t& n_pos) {
  n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label{1}));
  n_neg = labels.size() - n_pos;
}

inline void require_two_classes(std::span<const double> scores, std::span<const Label> labels,
                                std::size_t n_neg, std::size_t n_pos) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  if (n_neg == 0 || n_pos == 0) throw ComputeError("AUC is undefined when only one class is present");
}

/// Midranks (1-based, ties averaged) of `scores`.
inline std::vector<double> midranks(std::span<const double> scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j; their mean is (i+1+j)/2
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace detail

/// Area under the ROC curve with half credit for tied (positive, negative)
/// pairs, computed from midranks in O(n log n).
inline double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  std::size_t n_neg = 0, n_pos = 0;
  detail::count_classes(labels, n_neg, n_pos);
  detail::require_two_classes(scores, labels, n_neg, n_pos);
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("scores must be finite");
  const auto ranks = detail::midranks(scores);
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i]) rank_sum_pos += ranks[i];
  const double np = static_cast<double>(n_pos);
  const double u_pos = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u_pos / (np * static_cast<double>(n_neg));
}

inline TieStructure tie_structure(std::span<const double> scores, std::span<const Label> labels) {
  TieStructure ties;
  detail::count_classes(labels, ties.n_neg, ties.n_pos);
  detail::require_two_classes(scores, labels, ties.n_neg, ties.n_pos);
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (j - i >= 2) ties.tie_group_sizes.push_back(j - i);
    i = j;
  }
  return ties;
}

/// Mann-Whitney U from an AUC: n_neg * n_pos * (1 - auc), snapped to the
/// nearest multiple of 1/2 (midrank U is always one).
inline double u_statistic(double auc, const TieStructure& ties) {
  const double u = static_cast<double>(ties.n_neg) * static_cast<double>(ties.n_pos) * (1.0 - auc);
  return std::round(2.0 * u) / 2.0;
}

/// Mann-Whitney U straight from the rank sum of the negatives (midranks):
/// the number of (negative, positive) pairs where the negative scores higher,
/// ties counted as one half.
inline double rank_sum_u(std::span<const double> scores, std::span<const Label> labels) {
  std::size_t n_neg = 0, n_pos = 0;
  detail::count_classes(labels, n_neg, n_pos);
  detail::require_two_classes(scores, labels, n_neg, n_pos);
  const auto ranks = detail::midranks(scores);
  double rank_sum_neg = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (!labels[i]) rank_sum_neg += ranks[i];
  const double nn = static_cast<double>(n_neg);
  return rank_sum_neg - nn * (nn + 1.0) / 2.0;
}

/// Tie-corrected variance of the AUC under random record-wise labelling.
inline double phi_squared(const TieStructure& ties) {
  const std::size_t n = ties.n();
  if (n < 2) throw ComputeError("AUC null variance needs at least two scores");
  const double nn = static_cast<double>(ties.n_neg);
  const double np = static_cast<double>(ties.n_pos);
  const double dn = static_cast<double>(n);
  double correction = 0.0;
  for (std::size_t t : ties.tie_group_sizes) {
    const double dt = static_cast<double>(t);
    correction += dt * (dt - 1.0) * (dt + 1.0);
  }
  const double base = (dn + 1.0) / (12.0 * nn * np);
  if (correction == 0.0) return base;
  return base - correction / (12.0 * nn * np * dn * (dn - 1.0));
}

/// Standard normal CDF.
inline double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// 1 - Phi(z) without cancellation in the right tail.
inline double normal_upper_tail(double z) noexcept { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// Natural log of 1 - Phi(z), finite even where the tail underflows.
inline double log_normal_upper_tail(double z) noexcept {
  if (z < 30.0) {
    const double p = normal_upper_tail(z);
    if (p > 0.0) return std::log(p);
  }
  // Asymptotic series of the Mills ratio, ample at z >= 30.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

namespace detail {

inline double auc_z_score(double auc, const TieStructure& ties) {
  const double var = phi_squared(ties);
  if (!(var > 0.0)) throw ComputeError("degenerate AUC null: zero variance");
  return (auc - 0.5) / std::sqrt(var);
}

}  // namespace detail

/// Right-tail p-value of an observed AUC under the normal approximation to
/// the record-wise label permutation null.
inline double auc_analytic_pvalue(double observed_auc, const TieStructure& ties) {
  return normal_upper_tail(detail::auc_z_score(observed_auc, ties));
}

/// The same normal tail evaluated at the median of a disease-recognition null.
/// Not a proper test: it screens for identity confounding and is conservative.
inline double pseudo_pvalue(double median_null_auc, const TieStructure& ties) {
  return normal_upper_tail(detail::auc_z_score(median_null_auc, ties));
}

inline double log_pseudo_pvalue(double median_null_auc, const TieStructure& ties) {
  return log_normal_upper_tail(detail::auc_z_score(median_null_auc, ties));
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC curve vertices from (0,0) to (1,1), one per distinct score threshold.
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const Label> labels) {
  std::size_t n_neg = 0, n_pos = 0;
  detail::count_classes(labels, n_neg, n_pos);
  detail::require_two_classes(scores, labels, n_neg, n_pos);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                      static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return points;
}

/// Median with the two middle values averaged for even counts.
inline double median(std::vector<double> values) {
  if (values.empty()) throw ComputeError("median of an empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace idconf
