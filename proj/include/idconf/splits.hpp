// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"
#include "idconf/rng.hpp"

namespace idconf {

enum class SplitStrategy { record_wise, subject_wise };

inline std::string_view to_string(SplitStrategy s) {
  return s == SplitStrategy::record_wise ? "record" : "subject";
}

inline SplitStrategy parse_split_strategy(std::string_view s) {
  if (s == "record" || s == "record_wise" || s == "record-wise") return SplitStrategy::record_wise;
  if (s == "subject" || s == "subject_wise" || s == "subject-wise") return SplitStrategy::subject_wise;
  throw DataError("unknown split strategy '" + std::string(s) + "'");
}

/// Disjoint train/test row sets, each sorted ascending.
struct SplitIndexes {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  SplitStrategy strategy = SplitStrategy::record_wise;

  friend bool operator==(const SplitIndexes&, const SplitIndexes&) = default;
};

inline constexpr int kDefaultSplitRetries = 100;

namespace detail {

inline bool has_both_classes(std::span<const std::size_t> rows, std::span<const Label> labels) {
  bool pos = false, neg = false;
  for (auto r : rows) (labels[r] ? pos : neg) = true;
  return pos && neg;
}

inline void check_fraction(double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DataError("train fraction must lie strictly between 0 and 1");
}

inline SplitIndexes rows_from_subjects(const RecordDataset& ds, std::span<const std::size_t> train_subjects) {
  std::vector<char> in_train(ds.n_subjects(), 0);
  for (auto s : train_subjects) in_train[s] = 1;
  SplitIndexes split;
  split.strategy = SplitStrategy::subject_wise;
  for (std::size_t r = 0; r < ds.n_records(); ++r)
    (in_train[ds.row_subject()[r]] ? split.train_rows : split.test_rows).push_back(r);
  return split;
}

}  // namespace detail

/// Checks the split invariants against a dataset; throws DataError.
inline void validate_split(const RecordDataset& ds, const SplitIndexes& split) {
  std::vector<int> seen(ds.n_records(), 0);
  for (auto r : split.train_rows) {
    if (r >= ds.n_records()) throw DataError("split row index out of range");
    seen[r] |= 1;
  }
  for (auto r : split.test_rows) {
    if (r >= ds.n_records()) throw DataError("split row index out of range");
    if (seen[r] & 1) throw DataError("split row appears in both train and test");
    seen[r] |= 2;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw DataError("split does not cover every row");
  if (!detail::has_both_classes(split.train_rows, ds.labels()) ||
      !detail::has_both_classes(split.test_rows, ds.labels()))
    throw DataError("each side of the split must contain both classes");
  if (split.strategy == SplitStrategy::subject_wise) {
    for (const auto& rows : ds.subject_rows()) {
      const int side = seen[rows.front()];
      for (auto r : rows)
        if (seen[r] != side) throw DataError("subject-wise split places a subject on both sides");
    }
  }
}

/// Records assigned to train uniformly at random, ignoring subjects.
/// Redrawn up to `max_retries` times if a side ends up single-class.
inline SplitIndexes record_wise_split(const RecordDataset& ds, double train_fraction, const Seed& seed,
                                      int max_retries = kDefaultSplitRetries) {
  detail::check_fraction(train_fraction);
  const std::size_t n = ds.n_records();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw DataError("train fraction leaves an empty train or test set");

  std::vector<std::size_t> order(n);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive(seed, StreamPurpose::split, {static_cast<std::uint64_t>(attempt)}));
    rng.shuffle(std::span(order));
    SplitIndexes split;
    split.strategy = SplitStrategy::record_wise;
    split.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(split.train_rows.begin(), split.train_rows.end());
    std::sort(split.test_rows.begin(), split.test_rows.end());
    if (detail::has_both_classes(split.train_rows, ds.labels()) &&
        detail::has_both_classes(split.test_rows, ds.labels()))
      return split;
  }
  throw ComputeError("record-wise split could not place both classes on each side");
}

/// Whole subjects assigned to train or test. With stratification the total
/// train subject count is round(fraction * subjects) and each class gets the
/// floor or ceiling of its own share; classes with the largest fractional
/// share receive the leftover slots, ties broken at random.
inline SplitIndexes subject_wise_split(const RecordDataset& ds, double train_fraction, const Seed& seed,
                                       bool stratify_by_class = true, int max_retries = kDefaultSplitRetries) {
  detail::check_fraction(train_fraction);
  const auto subject_labels = ds.subject_labels();
  std::vector<std::size_t> by_class[2];
  for (std::size_t s = 0; s < ds.n_subjects(); ++s) by_class[subject_labels[s]].push_back(s);

  if (stratify_by_class) {
    if (by_class[0].size() < 2 || by_class[1].size() < 2)
      throw DataError("stratified subject-wise split needs at least two subjects per class");
    Rng rng(derive(seed, StreamPurpose::split));
    const auto total = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(ds.n_subjects())));
    std::size_t take[2];
    double frac[2];
    for (int c = 0; c < 2; ++c) {
      const double share = train_fraction * static_cast<double>(by_class[c].size());
      take[c] = static_cast<std::size_t>(std::floor(share));
      frac[c] = share - std::floor(share);
    }
    std::size_t leftover = total > take[0] + take[1] ? total - take[0] - take[1] : 0;
    if (leftover > 0) {
      int first = frac[0] > frac[1] ? 0 : frac[1] > frac[0] ? 1 : static_cast<int>(rng.below(2));
      take[first]++;
      if (--leftover > 0) take[1 - first]++;
    }
    for (int c = 0; c < 2; ++c) take[c] = std::clamp<std::size_t>(take[c], 1, by_class[c].size() - 1);

    std::vector<std::size_t> train_subjects;
    for (int c = 0; c < 2; ++c) {
      auto pool = by_class[c];
      rng.shuffle(std::span(pool));
      train_subjects.insert(train_subjects.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
    return detail::rows_from_subjects(ds, train_subjects);
  }

  const std::size_t n_subjects = ds.n_subjects();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n_subjects)));
  if (n_subjects < 4 || n_train < 2 || n_subjects - n_train < 2)
    throw DataError("too few subjects for a subject-wise split with both classes on each side");
  std::vector<std::size_t> order(n_subjects);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive(seed, StreamPurpose::split, {static_cast<std::uint64_t>(attempt)}));
    rng.shuffle(std::span(order));
    auto split = detail::rows_from_subjects(ds, std::span(order).first(n_train));
    if (detail::has_both_classes(split.train_rows, ds.labels()) &&
        detail::has_both_classes(split.test_rows, ds.labels()))
      return split;
  }
  throw ComputeError("subject-wise split could not place both classes on each side");
}

inline SplitIndexes make_split(const RecordDataset& ds, SplitStrategy strategy, double train_fraction,
                               const Seed& seed) {
  return strategy == SplitStrategy::record_wise ? record_wise_split(ds, train_fraction, seed)
                                                : subject_wise_split(ds, train_fraction, seed, true);
}

/// Uniform permutation of the subject-level labels; every record takes its
/// subject's new label. Class counts at the subject level are preserved.
inline std::vector<Label> subject_wise_label_shuffle(const RecordDataset& ds, const Seed& seed) {
  std::vector<Label> subject_labels(ds.subject_labels().begin(), ds.subject_labels().end());
  Rng rng(seed);
  rng.shuffle(std::span(subject_labels));
  std::vector<Label> out(ds.n_records());
  const auto row_subject = ds.row_subject();
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = subject_labels[row_subject[r]];
  return out;
}

/// Row permutation applied by record_wise_feature_shuffle: row i of the
/// shuffled matrix is row perm[i] of the original.
inline std::vector<std::size_t> record_permutation(std::size_t n, const Seed& seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(perm));
  return perm;
}

/// Whole feature rows permuted; labels and subject ids stay in place.
inline Matrix record_wise_feature_shuffle(const RecordDataset& ds, const Seed& seed) {
  const auto perm = record_permutation(ds.n_records(), seed);
  return ds.features().select_rows(perm);
}

}  // namespace idconf
