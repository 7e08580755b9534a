// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/metrics.hpp"
#include "idconf/perm_engine.hpp"
#include "idconf/splits.hpp"

namespace idconf {

inline constexpr const char* kToolName = "idconf";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kReportSchemaVersion = "1.0";

/// Null samples are written in full up to this count; larger nulls are
/// summarized by a histogram and quantiles.
inline constexpr std::size_t kMaxInlineSamples = 10000;
inline constexpr std::size_t kHistogramBins = 1000;

enum class TestSelection { disease_recognition, identity_confounding, both, recommend };

inline std::string_view to_string(TestSelection t) {
  switch (t) {
    case TestSelection::disease_recognition: return "disease-recognition";
    case TestSelection::identity_confounding: return "identity-confounding";
    case TestSelection::both: return "both";
    case TestSelection::recommend: return "recommend";
  }
  return "disease-recognition";
}

inline TestSelection parse_test_selection(std::string_view s) {
  for (auto t : {TestSelection::disease_recognition, TestSelection::identity_confounding, TestSelection::both,
                 TestSelection::recommend})
    if (s == to_string(t)) return t;
  throw DataError("unknown test '" + std::string(s) + "'");
}

/// Everything that determines an analysis result. Thread count is absent on
/// purpose: results do not depend on it.
struct AnalyzeOptions {
  std::string input;
  Schema schema;
  SplitStrategy split = SplitStrategy::record_wise;
  double train_fraction = 0.5;
  TestSelection test = TestSelection::disease_recognition;
  std::uint64_t seed = 1;
  std::size_t perms = 10000;
  std::size_t label_perms = 300;
  std::size_t feature_perms = 1000;
  double alpha = 0.05;
  Metric metric = Metric::auc;
  ForestParams forest;

  PermConfig perm_config() const {
    PermConfig c;
    c.n_label_perms = perms;
    c.n_feature_perms = feature_perms;
    c.n_inner_label_perms = label_perms;
    c.metric = metric;
    c.direction = natural_direction(metric);
    c.seed = Seed{seed, 0};
    return c;
  }
};

inline nlohmann::json to_json(const AnalyzeOptions& o) {
  return {
      {"input", o.input},
      {"schema",
       {{"subject_column", o.schema.subject_column},
        {"label_column", o.schema.label_column},
        {"feature_columns", o.schema.feature_columns},
        {"case_label", o.schema.case_label}}},
      {"split", std::string(to_string(o.split))},
      {"train_fraction", o.train_fraction},
      {"test", std::string(to_string(o.test))},
      {"seed", o.seed},
      {"perms", o.perms},
      {"label_perms", o.label_perms},
      {"feature_perms", o.feature_perms},
      {"alpha", o.alpha},
      {"metric", std::string(to_string(o.metric))},
      {"forest",
       {{"tree_count", o.forest.tree_count},
        {"features_per_split", o.forest.features_per_split},
        {"min_node_size", o.forest.min_node_size},
        {"bootstrap", o.forest.bootstrap}}},
  };
}

inline AnalyzeOptions analyze_options_from_json(const nlohmann::json& j) {
  AnalyzeOptions o;
  o.input = j.at("input").get<std::string>();
  const auto& s = j.at("schema");
  o.schema.subject_column = s.at("subject_column").get<std::string>();
  o.schema.label_column = s.at("label_column").get<std::string>();
  o.schema.feature_columns = s.at("feature_columns").get<std::vector<std::string>>();
  o.schema.case_label = s.at("case_label").get<std::string>();
  o.split = parse_split_strategy(j.at("split").get<std::string>());
  o.train_fraction = j.at("train_fraction").get<double>();
  o.test = parse_test_selection(j.at("test").get<std::string>());
  o.seed = j.at("seed").get<std::uint64_t>();
  o.perms = j.at("perms").get<std::size_t>();
  o.label_perms = j.at("label_perms").get<std::size_t>();
  o.feature_perms = j.at("feature_perms").get<std::size_t>();
  o.alpha = j.at("alpha").get<double>();
  o.metric = j.at("metric").get<std::string>() == "auc" ? Metric::auc : Metric::error_rate;
  const auto& f = j.at("forest");
  o.forest.tree_count = f.at("tree_count").get<std::size_t>();
  o.forest.features_per_split = f.at("features_per_split").get<std::size_t>();
  o.forest.min_node_size = f.at("min_node_size").get<std::size_t>();
  o.forest.bootstrap = f.at("bootstrap").get<bool>();
  return o;
}

inline nlohmann::json to_json(const DatasetSummary& s) {
  return {{"records", s.n_records},
          {"subjects", s.n_subjects},
          {"cases", s.n_cases},
          {"controls", s.n_controls},
          {"records_per_subject_min", s.min_records_per_subject},
          {"records_per_subject_max", s.max_records_per_subject},
          {"features", s.n_features}};
}

inline nlohmann::json to_json(const TieStructure& t) {
  return {{"n_neg", t.n_neg}, {"n_pos", t.n_pos}, {"tie_group_sizes", t.tie_group_sizes}};
}

inline nlohmann::json split_descriptor(const RecordDataset& ds, const SplitIndexes& split, double train_fraction) {
  std::vector<char> train_subject(ds.n_subjects(), 0), test_subject(ds.n_subjects(), 0);
  for (auto r : split.train_rows) train_subject[ds.row_subject()[r]] = 1;
  for (auto r : split.test_rows) test_subject[ds.row_subject()[r]] = 1;
  return {{"strategy", std::string(to_string(split.strategy))},
          {"train_fraction", train_fraction},
          {"train_rows", split.train_rows.size()},
          {"test_rows", split.test_rows.size()},
          {"train_subjects", std::count(train_subject.begin(), train_subject.end(), 1)},
          {"test_subjects", std::count(test_subject.begin(), test_subject.end(), 1)}};
}

/// Full samples for small nulls; otherwise a fixed-width histogram.
inline nlohmann::json to_json(const NullDistribution& n) {
  nlohmann::json j = {{"kind", std::string(to_string(n.kind))},
                      {"observed", n.observed},
                      {"median", n.median()},
                      {"p_value", n.p_value},
                      {"p_value_smoothed", n.p_value_smoothed},
                      {"n_permutations", n.samples.size()},
                      {"resamples", n.resamples}};
  j["quantiles"] = {{"min", quantile(n.samples, 0.0)},  {"q025", quantile(n.samples, 0.025)},
                    {"q25", quantile(n.samples, 0.25)}, {"q50", quantile(n.samples, 0.5)},
                    {"q75", quantile(n.samples, 0.75)}, {"q975", quantile(n.samples, 0.975)},
                    {"max", quantile(n.samples, 1.0)}};
  if (n.samples.size() <= kMaxInlineSamples) {
    j["samples"] = n.samples;
  } else {
    const auto [lo_it, hi_it] = std::minmax_element(n.samples.begin(), n.samples.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<std::size_t> counts(kHistogramBins, 0);
    const double width = (hi - lo) / static_cast<double>(kHistogramBins);
    for (double v : n.samples) {
      std::size_t b = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      counts[std::min(b, kHistogramBins - 1)]++;
    }
    j["histogram"] = {{"bins", kHistogramBins}, {"min", lo}, {"max", hi}, {"counts", counts}};
  }
  return j;
}

inline nlohmann::json roc_json(std::span<const double> scores, std::span<const Label> labels) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : roc_points(scores, labels)) pts.push_back({p.fpr, p.tpr});
  return pts;
}

/// Observed-run block plus the analytic quantities derived from its ties.
inline void add_observed(nlohmann::json& report, const NullDistribution& dr, Metric metric) {
  report["observed"] = {{"metric", std::string(to_string(metric))}, {"value", dr.observed}};
  report["roc_points"] = roc_json(dr.test_scores, dr.test_labels);
  if (metric != Metric::auc) return;
  const auto ties = tie_structure(dr.test_scores, dr.test_labels);
  const double phi2 = phi_squared(ties);
  report["observed_auc"] = dr.observed;
  report["tie_structure"] = to_json(ties);
  report["pseudo_density"] = {{"mean", 0.5}, {"variance", phi2}};
  if (phi2 > 0.0) {
    report["pseudo_p"] = pseudo_pvalue(dr.median(), ties);
    report["log_pseudo_p"] = log_pseudo_pvalue(dr.median(), ties);
    report["analytic_h0sss_p"] = auc_analytic_pvalue(dr.observed, ties);
  }
}

inline nlohmann::json to_json(const RecommendationReport& r) {
  nlohmann::json j = {{"alpha", r.alpha},
                      {"recommendation", std::string(to_string(r.recommendation))},
                      {"pseudo_p", r.pseudo_p},
                      {"log_pseudo_p", r.log_pseudo_p},
                      {"analytic_h0sss_p", r.analytic_p},
                      {"pseudo_permutation_disagree", r.pseudo_permutation_disagree},
                      {"steps", r.steps},
                      {"record_disease_recognition", to_json(r.record_disease_recognition)}};
  if (r.identity_confounding) j["identity_confounding"] = to_json(*r.identity_confounding);
  if (r.subject_disease_recognition) j["subject_disease_recognition"] = to_json(*r.subject_disease_recognition);
  return j;
}

/// Runs the selected tests on a loaded dataset and assembles the report.
/// Re-running with the "config" block of the result reproduces it exactly.
template <BinaryClassifier C = RandomForest>
nlohmann::json run_analysis(const RecordDataset& ds, const AnalyzeOptions& opt, const RunControl& control = {}) {
  const C clf{opt.forest};
  const PermConfig cfg = opt.perm_config();
  nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                           {"tool", {{"name", kToolName}, {"version", kToolVersion}}},
                           {"config", to_json(opt)},
                           {"dataset", to_json(summarize(ds))},
                           {"warnings", nlohmann::json::array()},
                           {"glossary",
                            {{"disease_recognition",
                              "null from subject-wise label shuffles; tests whether the classifier recognizes the "
                              "label (H0: no disease recognition)"},
                             {"identity_confounding",
                              "null of the median disease-recognition AUC under record-wise feature shuffles; tests "
                              "whether the classifier identifies subjects (H0: no subject identification)"},
                             {"pseudo_p",
                              "normal right tail at the disease-recognition null median; a conservative screen, "
                              "not a proper test"},
                             {"analytic_h0sss_p",
                              "normal approximation to record-wise label shuffling (H0: neither disease recognition "
                              "nor subject identification)"}}}};

  if (opt.test == TestSelection::recommend) {
    const auto rec = recommend_split(ds, cfg, opt.alpha, opt.train_fraction, clf, control);
    report["split"] = split_descriptor(ds, rec.record_split, opt.train_fraction);
    add_observed(report, rec.record_disease_recognition, cfg.metric);
    report["disease_recognition"] = to_json(rec.record_disease_recognition);
    if (rec.identity_confounding) report["identity_confounding"] = to_json(*rec.identity_confounding);
    report["recommendation"] = to_json(rec);
    return report;
  }

  const auto split = split_for(ds, opt.split, opt.train_fraction, cfg);
  report["split"] = split_descriptor(ds, split, opt.train_fraction);
  const bool want_dr = opt.test != TestSelection::identity_confounding;
  const bool want_ic = opt.test != TestSelection::disease_recognition;
  if (want_ic && opt.split == SplitStrategy::subject_wise)
    report["warnings"].push_back(
        "subject-wise splits already neutralize identity confounding; the identity-confounding test is not "
        "needed here and was run for illustration");
  const auto dr = disease_recognition_null(ds, split, cfg, clf, control);
  add_observed(report, dr, cfg.metric);
  if (want_dr) report["disease_recognition"] = to_json(dr);
  if (want_ic)
    report["identity_confounding"] = to_json(identity_confounding_null(ds, split, cfg, clf, control, &dr));
  return report;
}

namespace detail {

inline void csv_row(std::ostream& out, std::string_view section, std::string_view key, double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << section << ',' << key << ',' << buf << '\n';
}

inline void null_csv(std::ostream& out, std::string_view section, const nlohmann::json& n) {
  for (const char* key : {"observed", "median", "p_value", "p_value_smoothed"}) csv_row(out, section, key, n.at(key));
  if (n.contains("samples"))
    for (double v : n["samples"]) csv_row(out, section, "sample", v);
}

}  // namespace detail

/// Long-format CSV (section,key,value) view of a report.
inline void write_report_csv(std::ostream& out, const nlohmann::json& report) {
  out << "section,key,value\n";
  for (const char* key : {"observed_auc", "pseudo_p", "log_pseudo_p", "analytic_h0sss_p"})
    if (report.contains(key)) detail::csv_row(out, "summary", key, report[key]);
  if (report.contains("disease_recognition")) detail::null_csv(out, "disease_recognition", report["disease_recognition"]);
  if (report.contains("identity_confounding"))
    detail::null_csv(out, "identity_confounding", report["identity_confounding"]);
  if (report.contains("roc_points"))
    for (const auto& p : report["roc_points"]) {
      detail::csv_row(out, "roc", "fpr", p[0]);
      detail::csv_row(out, "roc", "tpr", p[1]);
    }
}

}  // namespace idconf
