// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"
#include "idconf/forest.hpp"
#include "idconf/metrics.hpp"
#include "idconf/parallel.hpp"
#include "idconf/rng.hpp"
#include "idconf/splits.hpp"

namespace idconf {

enum class Metric { auc, error_rate };
enum class Direction { larger_is_better, smaller_is_better };

inline std::string_view to_string(Metric m) { return m == Metric::auc ? "auc" : "error_rate"; }
inline std::string_view to_string(Direction d) {
  return d == Direction::larger_is_better ? "larger_is_better" : "smaller_is_better";
}
inline Direction natural_direction(Metric m) {
  return m == Metric::auc ? Direction::larger_is_better : Direction::smaller_is_better;
}

/// Permutation budgets and the statistic they are run with.
struct PermConfig {
  /// Subject-wise label shuffles for a disease-recognition null.
  std::size_t n_label_perms = 10000;
  /// Record-wise feature shuffles for the identity-confounding null.
  std::size_t n_feature_perms = 1000;
  /// Label shuffles inside each feature shuffle of the identity-confounding
  /// null, and for its observed median statistic.
  std::size_t n_inner_label_perms = 300;
  Metric metric = Metric::auc;
  Direction direction = Direction::larger_is_better;
  Seed seed{};
  /// Redraws allowed for a single permutation whose shuffled labels leave a
  /// side of the split with one class.
  std::size_t max_resamples = 1000;

  void validate() const {
    if (n_label_perms < 1 || n_feature_perms < 1 || n_inner_label_perms < 1)
      throw DataError("permutation counts must be at least 1");
  }
};

enum class NullKind { disease_recognition, identity_confounding };

inline std::string_view to_string(NullKind k) {
  return k == NullKind::disease_recognition ? "disease_recognition" : "identity_confounding";
}

struct NullDistribution {
  NullKind kind = NullKind::disease_recognition;
  /// Indexed by permutation number.
  std::vector<double> samples;
  double observed = 0.0;
  /// Plug-in estimate: share of samples at least as good as observed.
  double p_value = 1.0;
  /// (count + 1) / (p + 1); reported alongside, never instead.
  double p_value_smoothed = 1.0;
  /// Permutations redrawn because a side of the split became single-class.
  std::size_t resamples = 0;

  /// Observed run on the test rows (disease recognition only): classifier
  /// scores and the true labels they were scored against.
  std::vector<double> test_scores;
  std::vector<Label> test_labels;

  double median() const { return idconf::median(samples); }
};

/// Plug-in p-value and its add-one variant.
struct PValue {
  double plug_in = 1.0;
  double smoothed = 1.0;
  std::size_t exceedances = 0;
};

inline PValue permutation_pvalue(std::span<const double> samples, double observed, Direction direction) {
  if (samples.empty()) throw ComputeError("permutation p-value needs at least one sample");
  std::size_t count = 0;
  for (double m : samples)
    count += direction == Direction::larger_is_better ? (m >= observed) : (m <= observed);
  const double p = static_cast<double>(samples.size());
  return {static_cast<double>(count) / p, (static_cast<double>(count) + 1.0) / (p + 1.0), count};
}

namespace detail {

inline std::vector<Label> gather(std::span<const Label> labels, std::span<const std::size_t> rows) {
  std::vector<Label> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
  return out;
}

inline double evaluate_metric(Metric metric, std::span<const double> scores, std::span<const Label> labels) {
  if (metric == Metric::auc) return roc_auc(scores, labels);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) wrong += (scores[i] > 0.5 ? 1 : 0) != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(scores.size());
}

inline bool has_both_classes_labels(std::span<const Label> y) {
  bool pos = false, neg = false;
  for (Label l : y) (l ? pos : neg) = true;
  return pos && neg;
}

// Stream tags inside one test run.
inline constexpr std::uint64_t kObservedRun = ~std::uint64_t{0};

// Features of one (possibly feature-shuffled) dataset, already split.
template <BinaryClassifier C>
struct SplitFeatures {
  typename C::Prepared train;
  Matrix test;
};

template <BinaryClassifier C>
SplitFeatures<C> split_features(const C& clf, const Matrix& x, const SplitIndexes& split) {
  return {clf.prepare(x.select_rows(split.train_rows)), x.select_rows(split.test_rows)};
}

struct LabelRun {
  double metric;
  std::size_t resamples;
};

// One subject-wise label permutation: shuffle, split by the fixed indexes,
// train, evaluate. Redraws the shuffle while either side is single-class.
template <BinaryClassifier C>
LabelRun label_permutation(const RecordDataset& ds, const SplitIndexes& split, const SplitFeatures<C>& features,
                           const C& clf, const PermConfig& cfg, const Seed& seed) {
  std::size_t attempt = 0;
  for (;; ++attempt) {
    if (attempt > cfg.max_resamples) throw ComputeError("label shuffles keep leaving a split side single-class");
    const auto shuffled = subject_wise_label_shuffle(ds, derive(seed, StreamPurpose::label_shuffle, {attempt}));
    auto y_train = gather(shuffled, split.train_rows);
    auto y_test = gather(shuffled, split.test_rows);
    if (!has_both_classes_labels(y_train) || !has_both_classes_labels(y_test)) continue;
    const auto model = clf.fit(features.train, y_train, derive(seed, StreamPurpose::classifier));
    const auto scores = model.predict_proba(features.test);
    return {evaluate_metric(cfg.metric, scores, y_test), attempt};
  }
}

// Median of `count` label permutations, run serially (used inside the
// parallel outer loop of the identity-confounding null).
template <BinaryClassifier C>
double label_null_median(const RecordDataset& ds, const SplitIndexes& split, const SplitFeatures<C>& features,
                         const C& clf, const PermConfig& cfg, std::size_t count, const Seed& seed,
                         std::size_t& resamples) {
  std::vector<double> values(count);
  for (std::size_t j = 0; j < count; ++j) {
    const auto run = label_permutation(ds, split, features, clf, cfg, derive(seed, StreamPurpose::generic, {j}));
    values[j] = run.metric;
    resamples += run.resamples;
  }
  return idconf::median(std::move(values));
}

// The cfg.n_label_perms label permutations of a disease-recognition null,
// indexed by permutation number.
template <BinaryClassifier C>
void label_null_samples(const RecordDataset& ds, const SplitIndexes& split, const SplitFeatures<C>& features,
                        const C& clf, const PermConfig& cfg, const RunControl& control, std::vector<double>& samples,
                        std::size_t& total_resamples) {
  samples.assign(cfg.n_label_perms, 0.0);
  std::vector<std::size_t> resamples(cfg.n_label_perms, 0);
  const Seed base = derive(cfg.seed, StreamPurpose::generic, {static_cast<std::uint64_t>(NullKind::disease_recognition)});
  parallel_for(cfg.n_label_perms, control, [&](std::size_t i) {
    const auto run = label_permutation(ds, split, features, clf, cfg, derive(base, StreamPurpose::generic, {i}));
    samples[i] = run.metric;
    resamples[i] = run.resamples;
  });
  for (auto r : resamples) total_resamples += r;
}

}  // namespace detail

/// Disease-recognition null: subject-wise label shuffles with the feature
/// split held fixed. The classifier is retrained on every permutation with
/// its own seed, so classifier randomness is part of the null.
template <BinaryClassifier C = RandomForest>
NullDistribution disease_recognition_null(const RecordDataset& ds, const SplitIndexes& split, const PermConfig& cfg,
                                          const C& clf = {}, const RunControl& control = {}) {
  cfg.validate();
  validate_split(ds, split);
  const auto features = detail::split_features(clf, ds.features(), split);

  NullDistribution out;
  out.kind = NullKind::disease_recognition;
  out.test_labels = detail::gather(ds.labels(), split.test_rows);
  {
    const auto y_train = detail::gather(ds.labels(), split.train_rows);
    const auto model = clf.fit(features.train, y_train,
                               derive(cfg.seed, StreamPurpose::classifier, {detail::kObservedRun}));
    out.test_scores = model.predict_proba(features.test);
    out.observed = detail::evaluate_metric(cfg.metric, out.test_scores, out.test_labels);
  }

  detail::label_null_samples(ds, split, features, clf, cfg, control, out.samples, out.resamples);
  const auto p = permutation_pvalue(out.samples, out.observed, cfg.direction);
  out.p_value = p.plug_in;
  out.p_value_smoothed = p.smoothed;
  return out;
}

/// Identity-confounding null: the statistic is the median of the
/// disease-recognition null (cfg.n_label_perms label shuffles); the null for
/// it comes from record-wise feature shuffles, each followed by
/// cfg.n_inner_label_perms label shuffles. Split indexes stay fixed through
/// both loops. Pass the disease-recognition null of the same split and config
/// to reuse its median instead of recomputing it.
template <BinaryClassifier C = RandomForest>
NullDistribution identity_confounding_null(const RecordDataset& ds, const SplitIndexes& split, const PermConfig& cfg,
                                           const C& clf = {}, const RunControl& control = {},
                                           const NullDistribution* disease_null = nullptr) {
  cfg.validate();
  validate_split(ds, split);
  NullDistribution out;
  out.kind = NullKind::identity_confounding;

  const Seed base = derive(cfg.seed, StreamPurpose::generic, {static_cast<std::uint64_t>(NullKind::identity_confounding)});
  std::size_t observed_resamples = 0;
  if (disease_null) {
    if (disease_null->kind != NullKind::disease_recognition || disease_null->samples.size() != cfg.n_label_perms)
      throw DataError("disease-recognition null does not match the identity-confounding config");
    out.observed = disease_null->median();
  } else {
    const auto features = detail::split_features(clf, ds.features(), split);
    std::vector<double> samples;
    detail::label_null_samples(ds, split, features, clf, cfg, control, samples, observed_resamples);
    out.observed = idconf::median(std::move(samples));
  }

  out.samples.resize(cfg.n_feature_perms);
  std::vector<std::size_t> resamples(cfg.n_feature_perms, 0);
  parallel_for(cfg.n_feature_perms, control, [&](std::size_t i) {
    const Seed iteration = derive(base, StreamPurpose::generic, {i});
    const Matrix shuffled = record_wise_feature_shuffle(ds, derive(iteration, StreamPurpose::feature_shuffle));
    const auto features = detail::split_features(clf, shuffled, split);
    out.samples[i] = detail::label_null_median(ds, split, features, clf, cfg, cfg.n_inner_label_perms,
                                               derive(iteration, StreamPurpose::label_shuffle), resamples[i]);
  });
  out.resamples = observed_resamples;
  for (auto r : resamples) out.resamples += r;
  const auto p = permutation_pvalue(out.samples, out.observed, cfg.direction);
  out.p_value = p.plug_in;
  out.p_value_smoothed = p.smoothed;
  return out;
}

/// Split drawn from the config seed, so a test run is reproducible from its
/// seed and strategy alone.
inline SplitIndexes split_for(const RecordDataset& ds, SplitStrategy strategy, double train_fraction,
                              const PermConfig& cfg) {
  return make_split(ds, strategy, train_fraction, derive(cfg.seed, StreamPurpose::split));
}

template <BinaryClassifier C = RandomForest>
NullDistribution identity_confounding_null(const RecordDataset& ds, SplitStrategy strategy, double train_fraction,
                                           const PermConfig& cfg, const C& clf = {}, const RunControl& control = {}) {
  return identity_confounding_null(ds, split_for(ds, strategy, train_fraction, cfg), cfg, clf, control);
}

/// Pseudo p-value of a disease-recognition null whose observed run carries
/// the tie structure (metric must be AUC).
inline double pseudo_pvalue(const NullDistribution& dr) {
  return pseudo_pvalue(dr.median(), tie_structure(dr.test_scores, dr.test_labels));
}

struct SplitOutcome {
  std::size_t split_id = 0;
  bool ok = false;
  std::string error;
  double observed = 0.0;
  double null_median = 0.0;
  double null_q25 = 0.0;
  double null_q75 = 0.0;
  double p_value = 1.0;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ComputeError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Disease-recognition test repeated over independent splits. A failing
/// split is recorded and the run continues.
template <BinaryClassifier C = RandomForest>
std::vector<SplitOutcome> multi_split_harness(const RecordDataset& ds, SplitStrategy strategy, std::size_t n_splits,
                                              const PermConfig& cfg, double train_fraction = 0.5,
                                              const C& clf = {}, const RunControl& control = {}) {
  if (n_splits < 1) throw DataError("n_splits must be at least 1");
  std::vector<SplitOutcome> out(n_splits);
  for (std::size_t k = 0; k < n_splits; ++k) {
    auto& o = out[k];
    o.split_id = k;
    try {
      PermConfig split_cfg = cfg;
      split_cfg.seed = n_splits == 1 ? cfg.seed : derive(cfg.seed, StreamPurpose::generic, {k});
      const auto split = split_for(ds, strategy, train_fraction, split_cfg);
      const auto null = disease_recognition_null(ds, split, split_cfg, clf, control);
      o.ok = true;
      o.observed = null.observed;
      o.null_median = null.median();
      o.null_q25 = quantile(null.samples, 0.25);
      o.null_q75 = quantile(null.samples, 0.75);
      o.p_value = null.p_value;
    } catch (const Cancelled&) {
      throw;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  }
  return out;
}

enum class Recommendation { record_wise_acceptable, subject_wise };

inline std::string_view to_string(Recommendation r) {
  return r == Recommendation::record_wise_acceptable ? "record_wise_acceptable" : "subject_wise";
}

struct RecommendationReport {
  double alpha = 0.05;
  SplitIndexes record_split;
  NullDistribution record_disease_recognition;
  double pseudo_p = 1.0;
  double log_pseudo_p = 0.0;
  double analytic_p = 1.0;
  /// Only run when the pseudo p-value does not already flag confounding.
  std::optional<NullDistribution> identity_confounding;
  /// Run whenever the subject-wise split is recommended.
  std::optional<SplitIndexes> subject_split;
  std::optional<NullDistribution> subject_disease_recognition;
  Recommendation recommendation = Recommendation::record_wise_acceptable;
  /// Pseudo p-value was not significant but the permutation test was.
  bool pseudo_permutation_disagree = false;
  std::vector<std::string> steps;
};

/// Decision ladder for choosing a split strategy:
///  1. record-wise disease-recognition test;
///  2. pseudo p-value on its null median; below alpha means subject-wise;
///  3. otherwise the identity-confounding permutation test; not significant
///     means record-wise splitting is acceptable;
///  4. when subject-wise is recommended, the subject-wise disease-recognition
///     test assesses performance.
template <BinaryClassifier C = RandomForest>
RecommendationReport recommend_split(const RecordDataset& ds, const PermConfig& cfg, double alpha,
                                     double train_fraction = 0.5, const C& clf = {}, const RunControl& control = {}) {
  if (cfg.metric != Metric::auc) throw DataError("the split recommendation uses the AUC pseudo p-value");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must lie in (0, 1)");
  RecommendationReport rep;
  rep.alpha = alpha;
  rep.record_split = split_for(ds, SplitStrategy::record_wise, train_fraction, cfg);
  rep.record_disease_recognition = disease_recognition_null(ds, rep.record_split, cfg, clf, control);
  const auto& dr = rep.record_disease_recognition;
  rep.steps.push_back("record-wise disease recognition: observed AUC " + std::to_string(dr.observed) +
                      ", null median " + std::to_string(dr.median()) + ", p = " + std::to_string(dr.p_value));

  const auto ties = tie_structure(dr.test_scores, dr.test_labels);
  rep.pseudo_p = pseudo_pvalue(dr.median(), ties);
  rep.log_pseudo_p = log_pseudo_pvalue(dr.median(), ties);
  rep.analytic_p = auc_analytic_pvalue(dr.observed, ties);
  rep.steps.push_back("pseudo p-value " + std::to_string(rep.pseudo_p));

  if (rep.pseudo_p < alpha) {
    rep.recommendation = Recommendation::subject_wise;
    rep.steps.push_back("pseudo p-value below alpha: identity confounding detected");
  } else {
    rep.identity_confounding = identity_confounding_null(ds, rep.record_split, cfg, clf, control, &dr);
    const double p = rep.identity_confounding->p_value;
    rep.steps.push_back("identity-confounding permutation p-value " + std::to_string(p));
    if (p < alpha) {
      rep.recommendation = Recommendation::subject_wise;
      rep.pseudo_permutation_disagree = true;
      rep.steps.push_back("permutation test detects identity confounding the pseudo p-value missed");
    } else {
      rep.recommendation = Recommendation::record_wise_acceptable;
      rep.steps.push_back("no identity confounding detected: record-wise split acceptable");
    }
  }
  if (rep.recommendation == Recommendation::subject_wise) {
    rep.subject_split = split_for(ds, SplitStrategy::subject_wise, train_fraction, cfg);
    rep.subject_disease_recognition = disease_recognition_null(ds, *rep.subject_split, cfg, clf, control);
    rep.steps.push_back("subject-wise disease recognition: observed AUC " +
                        std::to_string(rep.subject_disease_recognition->observed) + ", p = " +
                        std::to_string(rep.subject_disease_recognition->p_value));
  }
  return rep;
}

}  // namespace idconf
