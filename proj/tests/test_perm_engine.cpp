// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "idconf/perm_engine.hpp"
#include "idconf/simgen.hpp"
#include "oracles.hpp"

namespace idconf {
namespace {

using testing::noise_dataset;

/// Deterministic scorer: distance of feature 0 to the control mean minus
/// distance to the case mean, squashed into (0, 1).
struct CentroidClassifier {
  using Prepared = Matrix;
  struct Model {
    double mean0 = 0.0, mean1 = 0.0;
    std::vector<double> predict_proba(const Matrix& x) const {
      std::vector<double> out(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double d = std::abs(x(r, 0) - mean0) - std::abs(x(r, 0) - mean1);
        out[r] = 1.0 / (1.0 + std::exp(-d));
      }
      return out;
    }
  };
  Prepared prepare(const Matrix& x) const { return x; }
  Model fit(const Prepared& x, std::span<const Label> y, const Seed&) const {
    Model m;
    double n0 = 0, n1 = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) (y[r] ? m.mean1 : m.mean0) += x(r, 0), (y[r] ? n1 : n0) += 1;
    m.mean0 /= n0;
    m.mean1 /= n1;
    return m;
  }
};
static_assert(BinaryClassifier<CentroidClassifier>);

/// Classifier whose fit always fails.
struct ThrowingClassifier : CentroidClassifier {
  Model fit(const Prepared&, std::span<const Label>, const Seed&) const { throw ComputeError("boom"); }
};

TEST(PermutationPValue, EdgeCases) {
  const std::vector<double> low{0.1, 0.2, 0.3};
  EXPECT_EQ(permutation_pvalue(low, 0.9, Direction::larger_is_better).plug_in, 0.0);
  EXPECT_EQ(permutation_pvalue(low, 0.9, Direction::larger_is_better).smoothed, 0.25);
  EXPECT_EQ(permutation_pvalue(low, 0.05, Direction::larger_is_better).plug_in, 1.0);
  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(permutation_pvalue(flat, 0.5, Direction::larger_is_better).plug_in, 1.0);
  EXPECT_EQ(permutation_pvalue(flat, 0.5, Direction::smaller_is_better).plug_in, 1.0);
  EXPECT_EQ(permutation_pvalue(low, 0.2, Direction::smaller_is_better).plug_in, 2.0 / 3.0);
  EXPECT_THROW(permutation_pvalue({}, 0.5, Direction::larger_is_better), ComputeError);
}

TEST(PermutationPValue, TimesCountIsTheExceedanceCount) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(1 + gen() % 300);
    for (auto& v : s) v = std::round(u(gen) * 20) / 20;
    const double obs = std::round(u(gen) * 20) / 20;
    const auto p = permutation_pvalue(s, obs, Direction::larger_is_better);
    const auto brute = std::count_if(s.begin(), s.end(), [&](double v) { return v >= obs; });
    const double scaled = p.plug_in * static_cast<double>(s.size());
    EXPECT_EQ(std::llround(scaled), static_cast<long long>(brute));
    EXPECT_LT(std::abs(scaled - static_cast<double>(std::llround(scaled))), 1e-9);
  }
}

/// Every subject-level relabelling keeping class counts, restricted to those
/// leaving both classes on both sides of the split, evaluated exhaustively.
std::vector<double> exhaustive_dr_null(const RecordDataset& ds, const SplitIndexes& split) {
  const CentroidClassifier clf;
  std::vector<Label> subject(ds.subject_labels().begin(), ds.subject_labels().end());
  std::sort(subject.begin(), subject.end());
  std::vector<double> out;
  const auto x_train = ds.features().select_rows(split.train_rows);
  const auto x_test = ds.features().select_rows(split.test_rows);
  do {
    std::vector<Label> y_train, y_test;
    for (auto r : split.train_rows) y_train.push_back(subject[ds.row_subject()[r]]);
    for (auto r : split.test_rows) y_test.push_back(subject[ds.row_subject()[r]]);
    if (!detail::has_both_classes_labels(y_train) || !detail::has_both_classes_labels(y_test)) continue;
    out.push_back(roc_auc(clf.fit(x_train, y_train, {}).predict_proba(x_test), y_test));
  } while (std::next_permutation(subject.begin(), subject.end()));
  return out;
}

TEST(DiseaseRecognitionNull, ConvergesToExhaustiveOracle) {
  const auto ds = noise_dataset(8, 3, 1, 21, 0.8);
  PermConfig cfg;
  cfg.n_label_perms = 20000;
  cfg.seed = Seed{5, 0};
  for (auto strategy : {SplitStrategy::record_wise, SplitStrategy::subject_wise}) {
    const auto split = split_for(ds, strategy, 0.5, cfg);
    const auto null = disease_recognition_null(ds, split, cfg, CentroidClassifier{});
    const auto exact = exhaustive_dr_null(ds, split);
    const double exact_p =
        std::count_if(exact.begin(), exact.end(), [&](double v) { return v >= null.observed; }) /
        static_cast<double>(exact.size());
    EXPECT_NEAR(null.p_value, exact_p, 0.015) << to_string(strategy);
    EXPECT_NEAR(null.median(), median(exact), 0.02) << to_string(strategy);
  }
}

TEST(DiseaseRecognitionNull, ObservedRunMatchesDirectFit) {
  const auto ds = noise_dataset(10, 4, 2, 3, 1.0);
  PermConfig cfg;
  cfg.n_label_perms = 50;
  const auto split = split_for(ds, SplitStrategy::subject_wise, 0.5, cfg);
  const auto null = disease_recognition_null(ds, split, cfg, CentroidClassifier{});
  const auto y_train = detail::gather(ds.labels(), split.train_rows);
  const auto y_test = detail::gather(ds.labels(), split.test_rows);
  const auto scores = CentroidClassifier{}
                          .fit(ds.features().select_rows(split.train_rows), y_train, {})
                          .predict_proba(ds.features().select_rows(split.test_rows));
  EXPECT_EQ(null.observed, roc_auc(scores, y_test));
  EXPECT_EQ(null.test_labels, y_test);
  EXPECT_EQ(null.samples.size(), 50u);
}

TEST(DiseaseRecognitionNull, SubjectWiseNullCentredAtChance) {
  auto spec = preset_spec(Preset::example1);
  spec.n_cases = 6;
  spec.n_controls = 6;
  spec.records_min = 5;
  spec.records_max = 8;
  const auto ds = simulate_dataset(spec, Seed{17, 0});
  PermConfig cfg;
  cfg.n_label_perms = 1000;
  ForestParams fp;
  fp.tree_count = 10;
  const auto null = disease_recognition_null(ds, split_for(ds, SplitStrategy::subject_wise, 0.5, cfg), cfg,
                                             RandomForest{fp});
  EXPECT_LT(std::abs(null.median() - 0.5), 0.05);
}

TEST(DiseaseRecognitionNull, IdenticalAcrossWorkerCounts) {
  const auto ds = noise_dataset(12, 4, 3, 8, 0.5);
  PermConfig cfg;
  cfg.n_label_perms = 64;
  cfg.n_feature_perms = 8;
  cfg.n_inner_label_perms = 5;
  cfg.seed = Seed{123, 0};
  ForestParams fp;
  fp.tree_count = 5;
  const RandomForest clf{fp};
  const auto split = split_for(ds, SplitStrategy::record_wise, 0.5, cfg);
  RunControl one, eight;
  one.threads = 1;
  eight.threads = 8;
  const auto a = disease_recognition_null(ds, split, cfg, clf, one);
  const auto b = disease_recognition_null(ds, split, cfg, clf, eight);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.p_value, b.p_value);
  const auto c = identity_confounding_null(ds, split, cfg, clf, one);
  const auto d = identity_confounding_null(ds, split, cfg, clf, eight);
  EXPECT_EQ(c.samples, d.samples);
  EXPECT_EQ(c.observed, d.observed);
}

TEST(DiseaseRecognitionNull, ErrorRateUsesSmallerIsBetter) {
  const auto ds = noise_dataset(10, 4, 1, 9, 3.0);
  PermConfig cfg;
  cfg.n_label_perms = 200;
  cfg.metric = Metric::error_rate;
  cfg.direction = natural_direction(cfg.metric);
  EXPECT_EQ(cfg.direction, Direction::smaller_is_better);
  const auto null =
      disease_recognition_null(ds, split_for(ds, SplitStrategy::subject_wise, 0.5, cfg), cfg, CentroidClassifier{});
  const auto brute = std::count_if(null.samples.begin(), null.samples.end(), [&](double v) { return v <= null.observed; });
  EXPECT_EQ(null.p_value, brute / 200.0);
  EXPECT_LT(null.observed, 0.2);
  EXPECT_LT(null.p_value, 0.1);
}

TEST(DiseaseRecognitionNull, ReportsProgressAndHonoursCancel) {
  const auto ds = noise_dataset(8, 3, 1, 2);
  PermConfig cfg;
  cfg.n_label_perms = 40;
  const auto split = split_for(ds, SplitStrategy::record_wise, 0.5, cfg);
  std::size_t calls = 0, last = 0;
  RunControl control;
  control.threads = 3;
  control.progress = [&](std::size_t done, std::size_t total) {
    ++calls;
    last = std::max(last, done);
    EXPECT_EQ(total, 40u);
  };
  disease_recognition_null(ds, split, cfg, CentroidClassifier{}, control);
  EXPECT_EQ(calls, 40u);
  EXPECT_EQ(last, 40u);

  std::atomic<bool> cancel{true};
  RunControl cancelled;
  cancelled.cancel = &cancel;
  EXPECT_THROW(disease_recognition_null(ds, split, cfg, CentroidClassifier{}, cancelled), Cancelled);
}

TEST(DiseaseRecognitionNull, ClassifierFailurePropagates) {
  const auto ds = noise_dataset(8, 3, 1, 2);
  PermConfig cfg;
  cfg.n_label_perms = 10;
  RunControl control;
  control.threads = 4;
  EXPECT_THROW(disease_recognition_null(ds, split_for(ds, SplitStrategy::record_wise, 0.5, cfg), cfg,
                                        ThrowingClassifier{}, control),
               ComputeError);
}

TEST(DiseaseRecognitionNull, BudgetsMustBePositive) {
  const auto ds = noise_dataset(8, 3, 1, 2);
  PermConfig cfg;
  cfg.n_label_perms = 0;
  EXPECT_THROW(disease_recognition_null(ds, record_wise_split(ds, 0.5, Seed{}), cfg, CentroidClassifier{}), DataError);
}

TEST(IdentityConfoundingNull, DetectsSubjectOffsetsOnlyRecordWise) {
  // Each subject gets its own offset on feature 0 and no label signal.
  const std::size_t subjects = 12, records = 6;
  Matrix x(subjects * records, 1);
  std::vector<Label> y;
  std::vector<std::string> ids;
  std::mt19937_64 gen(4);
  std::normal_distribution<double> normal;
  for (std::size_t s = 0; s < subjects; ++s) {
    const double offset = 4.0 * normal(gen);
    for (std::size_t r = 0; r < records; ++r) {
      x(ids.size(), 0) = offset + 0.1 * normal(gen);
      y.push_back(static_cast<Label>(s % 2));
      ids.push_back("s" + std::to_string(s));
    }
  }
  const auto ds = RecordDataset::create(std::move(x), y, ids);
  PermConfig cfg;
  cfg.n_feature_perms = 100;
  cfg.n_inner_label_perms = 31;
  ForestParams fp;
  fp.tree_count = 10;
  const RandomForest clf{fp};
  const auto record = identity_confounding_null(ds, SplitStrategy::record_wise, 0.5, cfg, clf);
  EXPECT_GT(record.observed, 0.6);
  EXPECT_LT(std::abs(record.median() - 0.5), 0.05);
  EXPECT_LT(record.p_value, 0.05);
  const auto subject = identity_confounding_null(ds, SplitStrategy::subject_wise, 0.5, cfg, clf);
  EXPECT_LT(std::abs(subject.median() - 0.5), 0.05);
  EXPECT_GT(subject.p_value, 0.05);
}

TEST(MultiSplit, OneSplitEqualsSingleRun) {
  const auto ds = noise_dataset(10, 3, 1, 6, 0.7);
  PermConfig cfg;
  cfg.n_label_perms = 30;
  cfg.seed = Seed{8, 0};
  const auto outcomes = multi_split_harness(ds, SplitStrategy::record_wise, 1, cfg, 0.5, CentroidClassifier{});
  const auto single =
      disease_recognition_null(ds, split_for(ds, SplitStrategy::record_wise, 0.5, cfg), cfg, CentroidClassifier{});
  ASSERT_EQ(outcomes.size(), 1u);
  EXPECT_TRUE(outcomes[0].ok);
  EXPECT_EQ(outcomes[0].p_value, single.p_value);
  EXPECT_EQ(outcomes[0].null_median, single.median());
  const auto many = multi_split_harness(ds, SplitStrategy::record_wise, 5, cfg, 0.5, CentroidClassifier{});
  EXPECT_EQ(many.size(), 5u);
  EXPECT_THROW(multi_split_harness(ds, SplitStrategy::record_wise, 0, cfg, 0.5, CentroidClassifier{}), DataError);
}

TEST(MultiSplit, FailingSplitsAreRecorded) {
  const auto ds = noise_dataset(10, 3, 1, 6);
  PermConfig cfg;
  cfg.n_label_perms = 5;
  const auto out = multi_split_harness(ds, SplitStrategy::record_wise, 3, cfg, 0.5, ThrowingClassifier{});
  for (const auto& o : out) {
    EXPECT_FALSE(o.ok);
    EXPECT_EQ(o.error, "boom");
  }
}

TEST(Recommend, SubjectShiftsLeadToSubjectWise) {
  const auto ds = simulate_dataset(Preset::example3, Seed{3, 0});
  PermConfig cfg;
  cfg.n_label_perms = 100;
  cfg.n_feature_perms = 20;
  cfg.n_inner_label_perms = 10;
  ForestParams fp;
  fp.tree_count = 10;
  const auto rep = recommend_split(ds, cfg, 0.05, 0.5, RandomForest{fp});
  EXPECT_LT(rep.pseudo_p, 0.05);
  EXPECT_EQ(rep.recommendation, Recommendation::subject_wise);
  EXPECT_FALSE(rep.identity_confounding.has_value());
  ASSERT_TRUE(rep.subject_disease_recognition.has_value());
  EXPECT_FALSE(rep.steps.empty());
}

TEST(Recommend, PureNoiseAllowsRecordWise) {
  const auto ds = simulate_dataset(Preset::example6, Seed{4, 0});
  PermConfig cfg;
  cfg.n_label_perms = 100;
  cfg.n_feature_perms = 20;
  cfg.n_inner_label_perms = 11;
  ForestParams fp;
  fp.tree_count = 10;
  const auto rep = recommend_split(ds, cfg, 0.05, 0.5, RandomForest{fp});
  EXPECT_GT(rep.pseudo_p, 0.05);
  ASSERT_TRUE(rep.identity_confounding.has_value());
  EXPECT_EQ(rep.recommendation, Recommendation::record_wise_acceptable);
  EXPECT_FALSE(rep.subject_disease_recognition.has_value());
}

TEST(Recommend, RejectsNonAucMetricAndBadAlpha) {
  const auto ds = noise_dataset(8, 3, 1, 2);
  PermConfig cfg;
  cfg.metric = Metric::error_rate;
  EXPECT_THROW(recommend_split(ds, cfg, 0.05, 0.5, CentroidClassifier{}), DataError);
  cfg.metric = Metric::auc;
  EXPECT_THROW(recommend_split(ds, cfg, 1.5, 0.5, CentroidClassifier{}), DataError);
}

}  // namespace
}  // namespace idconf
