// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "idconf/calibration.hpp"
#include "idconf/report.hpp"
#include "idconf/simgen.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_cancel{false};

extern "C" void on_signal(int) { g_cancel = true; }

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Shared flags of analyze and simulate --analyze.
struct AnalyzeFlags {
  idconf::AnalyzeOptions opt;
  std::string split = "record";
  std::string test = "disease-recognition";
  std::string metric = "auc";
  std::string features;
  std::string format = "json";
  std::string out = "-";
  std::size_t threads = 0;
  bool recommend = false;
  bool progress = false;
};

void add_run_flags(CLI::App* app, AnalyzeFlags& f) {
  app->add_option("--seed", f.opt.seed, "Master seed")->capture_default_str();
  app->add_option("--threads", f.threads, "Worker threads (0 = auto)")->capture_default_str();
  app->add_option("--trees", f.opt.forest.tree_count, "Trees per forest")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--mtry", f.opt.forest.features_per_split, "Features tried per split (0 = floor(sqrt(p)))");
  app->add_option("--train-fraction", f.opt.train_fraction, "Share of records or subjects used for training")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  app->add_flag("--progress", f.progress, "Print a line-based progress counter to stderr");
}

void add_analyze_flags(CLI::App* app, AnalyzeFlags& f) {
  add_run_flags(app, f);
  app->add_option("--split", f.split, "Split strategy")
      ->check(CLI::IsMember({"record", "subject"}))
      ->capture_default_str();
  app->add_option("--test", f.test, "Test to run")
      ->check(CLI::IsMember({"disease-recognition", "identity-confounding", "both"}))
      ->capture_default_str();
  app->add_flag("--recommend", f.recommend, "Run the split-recommendation ladder");
  app->add_option("--perms", f.opt.perms, "Label shuffles of the disease-recognition null")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--label-perms", f.opt.label_perms, "Inner label shuffles per identity-confounding sample")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--feature-perms", f.opt.feature_perms, "Feature shuffles of the identity-confounding null")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--alpha", f.opt.alpha, "Significance level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  app->add_option("--metric", f.metric, "Performance metric")
      ->check(CLI::IsMember({"auc", "error_rate"}))
      ->capture_default_str();
  app->add_option("--format", f.format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
}

void add_schema_flags(CLI::App* app, AnalyzeFlags& f) {
  app->add_option("--subject-column", f.opt.schema.subject_column)->capture_default_str();
  app->add_option("--label-column", f.opt.schema.label_column)->capture_default_str();
  app->add_option("--case-label", f.opt.schema.case_label)->capture_default_str();
  app->add_option("--features", f.features, "Comma-separated feature columns (default: all others)");
}

idconf::RunControl make_control(const AnalyzeFlags& f) {
  idconf::RunControl control;
  control.threads = f.threads;
  control.cancel = &g_cancel;
  if (f.progress) {
    control.progress = [](std::size_t done, std::size_t total) {
      if (done == total || done % 100 == 0) std::fprintf(stderr, "progress %zu/%zu\n", done, total);
    };
  }
  return control;
}

void finalize(CLI::App* app, AnalyzeFlags& f) {
  if (f.recommend && (app->count("--test") > 0 || app->count("--split") > 0))
    throw UsageError("--recommend chooses tests and splits itself; drop --test and --split");
  f.opt.split = idconf::parse_split_strategy(f.split);
  f.opt.test = f.recommend ? idconf::TestSelection::recommend : idconf::parse_test_selection(f.test);
  f.opt.metric = f.metric == "auc" ? idconf::Metric::auc : idconf::Metric::error_rate;
  if (f.opt.metric != idconf::Metric::auc && f.recommend)
    throw UsageError("--recommend requires --metric auc");
  f.opt.schema.feature_columns = split_list(f.features, ',');
}

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw idconf::DataError("cannot open '" + path + "' for writing");
  fn(out);
  if (!out) throw idconf::ComputeError("failed writing '" + path + "'");
}

void emit_report(const nlohmann::json& report, const AnalyzeFlags& f) {
  for (const auto& w : report["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
  with_output(f.out, [&](std::ostream& out) {
    if (f.format == "csv")
      idconf::write_report_csv(out, report);
    else
      out << report.dump(2) << '\n';
  });
}

int run_analyze(CLI::App* app, AnalyzeFlags& f) {
  finalize(app, f);
  const auto ds = idconf::load_dataset(f.opt.input, f.opt.schema);
  emit_report(idconf::run_analysis(ds, f.opt, make_control(f)), f);
  return kExitOk;
}

idconf::SimSpec custom_spec(const std::string& text) {
  idconf::SimSpec s;
  for (const auto& item : split_list(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--custom expects key=value pairs, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    double v = 0.0;
    try {
      v = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("--custom value for '" + key + "' is not a number");
    }
    const auto count = static_cast<std::size_t>(v);
    if (key == "a") s.a = v;
    else if (key == "b") s.b = v;
    else if (key == "c") s.c = v;
    else if (key == "d") s.d = v;
    else if (key == "mu") s.mu = idconf::SubjectDraw::fixed(v);
    else if (key == "mu_sd") s.mu = idconf::SubjectDraw::normal(0.0, v);
    else if (key == "sigma") s.sigma = idconf::SubjectDraw::fixed(v);
    else if (key == "rho_r") s.rho_r = v;
    else if (key == "rho_f") s.rho_f = v;
    else if (key == "cases") s.n_cases = count;
    else if (key == "controls") s.n_controls = count;
    else if (key == "records_min") s.records_min = count;
    else if (key == "records_max") s.records_max = count;
    else if (key == "features") s.n_features = count;
    else throw UsageError("unknown --custom key '" + key + "'");
  }
  return s;
}

struct SimulateFlags {
  std::string preset;
  std::string custom;
  std::string data_out;
  bool analyze = false;
};

int run_simulate(CLI::App* app, SimulateFlags& s, AnalyzeFlags& f) {
  if (s.preset.empty() == s.custom.empty()) throw UsageError("give exactly one of --preset or --custom");
  if (!s.analyze && s.data_out.empty()) s.data_out = f.out;
  finalize(app, f);
  const idconf::SimSpec spec = s.preset.empty() ? custom_spec(s.custom)
                                                : idconf::preset_spec(idconf::parse_preset(s.preset));
  const auto ds = idconf::simulate_dataset(spec, idconf::Seed{f.opt.seed, 0});
  if (!s.data_out.empty()) with_output(s.data_out, [&](std::ostream& out) { idconf::write_dataset(out, ds); });
  if (!s.analyze) return kExitOk;
  f.opt.input = s.data_out.empty() || s.data_out == "-" ? "simulated:" + (s.preset.empty() ? s.custom : s.preset)
                                                        : s.data_out;
  emit_report(idconf::run_analysis(ds, f.opt, make_control(f)), f);
  return kExitOk;
}

struct CalibrateFlags {
  idconf::NullStudyConfig cfg;
  double time_cap = 3600.0;
  bool force = false;
  bool no_identity = false;
  std::string summary;
};

/// Seconds for one forest fit, measured on a dataset from the middle of the box.
double probe_fit_seconds(const idconf::NullStudyConfig& cfg) {
  idconf::SimSpec spec;
  spec.c = spec.d = 1.0;
  spec.n_cases = spec.n_controls = 8;
  const auto ds = idconf::simulate_dataset(spec, cfg.seed);
  const auto split = idconf::record_wise_split(ds, cfg.train_fraction, cfg.seed);
  const auto x = ds.features().select_rows(split.train_rows);
  std::vector<idconf::Label> y;
  for (auto r : split.train_rows) y.push_back(ds.labels()[r]);
  const idconf::TrainingFrame frame(x);
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kProbes = 3;
  for (int i = 0; i < kProbes; ++i) (void)idconf::fit_forest(frame, y, cfg.forest, idconf::Seed{cfg.seed.master_seed, 1u + i});
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / kProbes;
}

int run_calibrate(CalibrateFlags& c, AnalyzeFlags& f) {
  auto& cfg = c.cfg;
  cfg.seed = idconf::Seed{f.opt.seed, 0};
  cfg.forest = f.opt.forest;
  cfg.train_fraction = f.opt.train_fraction;
  cfg.run_identity_confounding = !c.no_identity;
  const auto control = make_control(f);

  const double fits_per_split =
      static_cast<double>(cfg.perms + 1) +
      (cfg.run_identity_confounding ? static_cast<double>(cfg.feature_perms + 1) * cfg.inner_label_perms : 0.0);
  const double estimate = probe_fit_seconds(cfg) * fits_per_split * 2.0 * static_cast<double>(cfg.n_datasets) /
                          static_cast<double>(control.resolved_threads());
  std::fprintf(stderr, "estimated runtime %.0f s on %zu worker(s)\n", estimate, control.resolved_threads());
  if (estimate > c.time_cap && !c.force) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "estimated runtime %.0f s exceeds --time-cap %.0f s; lower the budgets or pass --force",
                  estimate, c.time_cap);
    throw UsageError(msg);
  }

  const auto result = idconf::null_study(cfg, {}, control);
  for (const auto& fail : result.failures)
    std::fprintf(stderr, "dataset %zu failed: %s\n", fail.dataset_id, fail.error.c_str());

  with_output(f.out, [&](std::ostream& out) {
    out << "dataset_id,c,d,n_cases,n_controls,test,split,p_value\n";
    char buf[256];
    for (const auto& r : result.rows) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu,%zu,%s,%s,%.17g\n", r.dataset_id, r.c, r.d, r.n_cases,
                    r.n_controls, r.test.c_str(), r.split.c_str(), r.p_value);
      out << buf;
    }
  });

  std::ostringstream sum;
  sum << "test,split,n,below_0.01,below_0.05,below_0.1,median\n";
  for (const char* test : {"disease_recognition", "identity_confounding", "pseudo", "analytic"})
    for (const char* split : {"record", "subject"}) {
      const auto p = result.p_values(test, split);
      if (p.empty()) continue;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.4f,%.4f,%.4f,%.4f\n", test, split, p.size(),
                    idconf::fraction_below(p, 0.01), idconf::fraction_below(p, 0.05), idconf::fraction_below(p, 0.1),
                    idconf::median(p));
      sum << buf;
    }
  if (c.summary.empty())
    std::cerr << sum.str();
  else
    with_output(c.summary, [&](std::ostream& out) { out << sum.str(); });
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation tests for identity confounding in record-wise validation"};
  app.set_version_flag("--version", idconf::kToolVersion);
  app.require_subcommand(1);

  AnalyzeFlags flags;

  auto* analyze = app.add_subcommand("analyze", "Run permutation tests on a CSV dataset");
  analyze->set_config("--config", "", "Flat key=value file; flags override it");
  analyze->add_option("--input", flags.opt.input, "Input CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", flags.out, "Report path ('-' for stdout)")->capture_default_str();
  add_analyze_flags(analyze, flags);
  add_schema_flags(analyze, flags);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset, optionally analyzing it");
  simulate->set_config("--config", "", "Flat key=value file; flags override it");
  simulate->add_option("--preset", sim.preset, "Named scenario")
      ->check(CLI::IsMember({"example1", "example2", "example3", "example4", "example5", "example6"}));
  simulate->add_option("--custom", sim.custom, "Model parameters, e.g. a=1,b=2,c=1,d=0.5");
  simulate->add_option("--data-out", sim.data_out, "Dataset CSV path (default: --out unless --analyze)");
  simulate->add_option("--out", flags.out, "Output path ('-' for stdout)")->capture_default_str();
  simulate->add_flag("--analyze", sim.analyze, "Analyze the generated dataset and write the report to --out");
  add_analyze_flags(simulate, flags);

  CalibrateFlags cal;
  auto* calibrate = app.add_subcommand("calibrate", "Type-I error study on simulated null datasets");
  calibrate->set_config("--config", "", "Flat key=value file; flags override it");
  calibrate->add_option("--datasets", cal.cfg.n_datasets, "Null datasets")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  calibrate->add_option("--perms", cal.cfg.perms, "Label shuffles per disease-recognition null")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  calibrate->add_option("--feature-perms", cal.cfg.feature_perms, "Feature shuffles per identity-confounding null")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  calibrate->add_option("--label-perms", cal.cfg.inner_label_perms, "Inner label shuffles per identity sample")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  calibrate->add_option("--time-cap", cal.time_cap, "Refuse to start when the estimate exceeds this many seconds")
      ->capture_default_str();
  calibrate->add_flag("--force", cal.force, "Ignore --time-cap");
  calibrate->add_flag("--no-identity-confounding", cal.no_identity, "Skip the identity-confounding test");
  calibrate->add_option("--out", flags.out, "Long-format p-value CSV ('-' for stdout)")->capture_default_str();
  calibrate->add_option("--summary", cal.summary, "Summary CSV path (default: stderr)");
  add_run_flags(calibrate, flags);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*analyze) return run_analyze(analyze, flags);
    if (*simulate) return run_simulate(simulate, sim, flags);
    if (*calibrate) return run_calibrate(cal, flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const idconf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const idconf::Cancelled& e) {
    std::cerr << "cancelled\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
