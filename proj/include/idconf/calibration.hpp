// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "idconf/metrics.hpp"
#include "idconf/perm_engine.hpp"
#include "idconf/simgen.hpp"

namespace idconf {

/// Budgets for a type-I error study on data simulated under both nulls.
struct NullStudyConfig {
  std::size_t n_datasets = 100;
  /// Label shuffles of each disease-recognition null.
  std::size_t perms = 100;
  /// Feature shuffles and inner label shuffles of each identity-confounding null.
  std::size_t feature_perms = 100;
  std::size_t inner_label_perms = 100;
  double train_fraction = 0.5;
  Seed seed{};
  ForestParams forest;
  bool run_identity_confounding = true;
};

/// Parameter box sampled by the Latin hypercube: X_s = c*V_s + d*E_s.
struct NullStudyBox {
  double c_lo = 0.1, c_hi = 2.0;
  double d_lo = 0.1, d_hi = 2.0;
  std::size_t subjects_lo = 5, subjects_hi = 10;  // per class
  std::size_t records_lo = 10, records_hi = 20;
};

struct NullStudyRow {
  std::size_t dataset_id = 0;
  double c = 0.0, d = 0.0;
  std::size_t n_cases = 0, n_controls = 0;
  std::string test;   // disease_recognition | identity_confounding | pseudo | analytic
  std::string split;  // record | subject
  double p_value = 0.0;
};

struct NullStudyFailure {
  std::size_t dataset_id = 0;
  std::string error;
};

struct NullStudyResult {
  std::vector<NullStudyRow> rows;
  std::vector<NullStudyFailure> failures;

  std::vector<double> p_values(const std::string& test, const std::string& split) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.test == test && r.split == split) out.push_back(r.p_value);
    return out;
  }
};

/// Share of values strictly below `level`.
inline double fraction_below(const std::vector<double>& values, double level) {
  if (values.empty()) return std::nan("");
  std::size_t k = 0;
  for (double v : values) k += v < level;
  return static_cast<double>(k) / static_cast<double>(values.size());
}

inline SimSpec null_study_spec(const std::vector<double>& unit, const NullStudyBox& box) {
  auto pick = [](double u, std::size_t lo, std::size_t hi) {
    const auto span = static_cast<double>(hi - lo + 1);
    return std::min(hi, lo + static_cast<std::size_t>(std::floor(u * span)));
  };
  SimSpec s;
  s.c = box.c_lo + unit[0] * (box.c_hi - box.c_lo);
  s.d = box.d_lo + unit[1] * (box.d_hi - box.d_lo);
  s.n_cases = pick(unit[2], box.subjects_lo, box.subjects_hi);
  s.n_controls = pick(unit[3], box.subjects_lo, box.subjects_hi);
  s.records_min = box.records_lo;
  s.records_max = box.records_hi;
  return s;
}

/// Simulates datasets from a Latin hypercube over the null parameter box and
/// runs every test under both split strategies. A dataset that fails is
/// recorded and the study continues.
inline NullStudyResult null_study(const NullStudyConfig& cfg, const NullStudyBox& box = {},
                                  const RunControl& control = {}) {
  if (cfg.n_datasets < 1) throw DataError("n_datasets must be at least 1");
  if (cfg.perms < 1) throw DataError("perms must be at least 1");
  const auto design = latin_hypercube(cfg.n_datasets, 4, cfg.seed);
  const RandomForest clf{cfg.forest};
  NullStudyResult result;
  for (std::size_t k = 0; k < cfg.n_datasets; ++k) {
    const SimSpec spec = null_study_spec(design[k], box);
    try {
      const Seed dataset_seed = derive(cfg.seed, StreamPurpose::simulation, {k});
      const auto ds = simulate_dataset(spec, dataset_seed);
      PermConfig pc;
      pc.n_label_perms = cfg.perms;
      pc.n_feature_perms = cfg.feature_perms;
      pc.n_inner_label_perms = cfg.inner_label_perms;
      pc.seed = derive(dataset_seed, StreamPurpose::generic);
      std::vector<NullStudyRow> rows;
      auto add = [&](const char* test, SplitStrategy split, double p) {
        rows.push_back({k, spec.c, spec.d, spec.n_cases, spec.n_controls, test, std::string(to_string(split)), p});
      };
      for (auto strategy : {SplitStrategy::record_wise, SplitStrategy::subject_wise}) {
        const auto split = split_for(ds, strategy, cfg.train_fraction, pc);
        const auto dr = disease_recognition_null(ds, split, pc, clf, control);
        const auto ties = tie_structure(dr.test_scores, dr.test_labels);
        add("disease_recognition", strategy, dr.p_value);
        add("pseudo", strategy, pseudo_pvalue(dr.median(), ties));
        add("analytic", strategy, auc_analytic_pvalue(dr.observed, ties));
        if (cfg.run_identity_confounding)
          add("identity_confounding", strategy, identity_confounding_null(ds, split, pc, clf, control, &dr).p_value);
      }
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    } catch (const Cancelled&) {
      throw;
    } catch (const std::exception& e) {
      result.failures.push_back({k, e.what()});
    }
  }
  return result;
}

}  // namespace idconf
