// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"
#include "idconf/rng.hpp"

namespace idconf {

using DenseMatrix = Eigen::MatrixXd;

struct CovSpec {
  enum class Kind { identity, ar1, compound_symmetric };
  Kind kind = Kind::identity;
  std::size_t dim = 1;
  /// rho_r for ar1, rho_f for compound_symmetric; ignored for identity.
  double rho = 0.0;

  static CovSpec identity(std::size_t dim) { return {Kind::identity, dim, 0.0}; }
  static CovSpec ar1(std::size_t dim, double rho_r) { return {Kind::ar1, dim, rho_r}; }
  static CovSpec compound_symmetric(std::size_t dim, double rho_f) { return {Kind::compound_symmetric, dim, rho_f}; }
};

/// ar1: rho^|i-j|. compound_symmetric: 1 on the diagonal, rho elsewhere.
inline DenseMatrix build_cov(const CovSpec& spec) {
  if (spec.dim < 1) throw DataError("covariance dimension must be at least 1");
  const auto n = static_cast<Eigen::Index>(spec.dim);
  switch (spec.kind) {
    case CovSpec::Kind::identity:
      return DenseMatrix::Identity(n, n);
    case CovSpec::Kind::ar1: {
      if (!(std::abs(spec.rho) < 1.0)) throw DataError("AR(1) correlation must satisfy |rho_r| < 1");
      DenseMatrix m(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = std::pow(spec.rho, static_cast<double>(std::abs(i - j)));
      return m;
    }
    case CovSpec::Kind::compound_symmetric: {
      const double lower = spec.dim > 1 ? -1.0 / static_cast<double>(spec.dim - 1) : -1.0;
      if (!(spec.rho > lower && spec.rho < 1.0))
        throw DataError("compound-symmetric correlation must lie in (-1/(dim-1), 1)");
      DenseMatrix m = DenseMatrix::Constant(n, n, spec.rho);
      m.diagonal().setOnes();
      return m;
    }
  }
  throw DataError("unknown covariance kind");
}

/// Lower Cholesky factor; throws ComputeError if not positive definite.
inline DenseMatrix cholesky_lower(const DenseMatrix& cov) {
  if (cov.rows() != cov.cols()) throw ComputeError("covariance must be square");
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw ComputeError("covariance must be symmetric");
  Eigen::LLT<DenseMatrix> llt(cov);
  if (llt.info() != Eigen::Success) throw ComputeError("covariance is not positive definite");
  return llt.matrixL();
}

/// Matrix-normal draw W = M + L_row Z L_col^T with Z i.i.d. standard normal,
/// so vec(W) has covariance col_cov (x) row_cov.
inline DenseMatrix matnorm_sample(const DenseMatrix& mean, const DenseMatrix& row_cov, const DenseMatrix& col_cov,
                                  const Seed& seed) {
  if (row_cov.rows() != mean.rows() || col_cov.rows() != mean.cols())
    throw DataError("covariance shapes do not match the mean");
  const DenseMatrix l_row = cholesky_lower(row_cov);
  const DenseMatrix l_col = cholesky_lower(col_cov);
  Rng rng(seed);
  DenseMatrix z(mean.rows(), mean.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = rng.normal();
  return mean + l_row * z * l_col.transpose();
}

/// Per-subject value: fixed, normal(location, scale), or the square root of a
/// uniform(lo, hi) variance.
struct SubjectDraw {
  enum class Kind { fixed, normal, sqrt_uniform };
  Kind kind = Kind::fixed;
  double p1 = 0.0;
  double p2 = 0.0;

  static SubjectDraw fixed(double v) { return {Kind::fixed, v, 0.0}; }
  static SubjectDraw normal(double location, double scale) { return {Kind::normal, location, scale}; }
  static SubjectDraw sqrt_uniform(double lo, double hi) { return {Kind::sqrt_uniform, lo, hi}; }

  double draw(Rng& rng) const {
    switch (kind) {
      case Kind::fixed:
        return p1;
      case Kind::normal:
        return p1 + p2 * rng.normal();
      case Kind::sqrt_uniform:
        return std::sqrt(rng.uniform(p1, p2));
    }
    return p1;
  }
};

/// Parameters of the per-subject feature model
///   X_s = mu_s + a*y_s + b*U_s + c*sigma_s*V_s + d*E_s
/// with U_s ~ MN(0, AR1(rho_r), I), V_s ~ MN(0, I, I), E_s ~ MN(0, I, CS(rho_f)).
struct SimSpec {
  std::size_t n_cases = 13;
  std::size_t n_controls = 7;
  std::size_t records_min = 10;
  std::size_t records_max = 20;
  std::size_t n_features = 10;
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  SubjectDraw mu = SubjectDraw::fixed(0.0);
  SubjectDraw sigma = SubjectDraw::fixed(1.0);
  double rho_r = 0.95;
  double rho_f = 0.5;

  void validate() const {
    if (n_cases < 1 || n_controls < 1) throw DataError("simulation needs at least one case and one control");
    if (records_min < 1 || records_max < records_min) throw DataError("invalid records-per-subject range");
    if (n_features < 1) throw DataError("simulation needs at least one feature");
    if (!(std::abs(rho_r) < 1.0)) throw DataError("rho_r must satisfy |rho_r| < 1");
    const double lower = n_features > 1 ? -1.0 / static_cast<double>(n_features - 1) : -1.0;
    if (!(rho_f > lower && rho_f < 1.0)) throw DataError("rho_f out of range for the feature count");
    if (sigma.kind == SubjectDraw::Kind::fixed && !(sigma.p1 > 0.0)) throw DataError("sigma_s must be positive");
    if (sigma.kind == SubjectDraw::Kind::sqrt_uniform && !(sigma.p1 > 0.0 && sigma.p2 >= sigma.p1))
      throw DataError("sigma_s variance range must be positive");
  }
};

/// One subject's record-by-feature block. `y` is -1 for controls, +1 for cases.
inline DenseMatrix simulate_subject(const SimSpec& spec, int y, std::size_t n_records, double mu_s, double sigma_s,
                                    const Seed& seed) {
  if (y != -1 && y != 1) throw DataError("subject label must be -1 or +1");
  if (n_records < 1) throw DataError("subject needs at least one record");
  const auto r = static_cast<Eigen::Index>(n_records);
  const auto c = static_cast<Eigen::Index>(spec.n_features);
  DenseMatrix x = DenseMatrix::Constant(r, c, mu_s + spec.a * y);
  const DenseMatrix zero = DenseMatrix::Zero(r, c);
  if (spec.b != 0.0)
    x += spec.b * matnorm_sample(zero, build_cov(CovSpec::ar1(n_records, spec.rho_r)),
                                 DenseMatrix::Identity(c, c), derive(seed, StreamPurpose::simulation, {1}));
  if (spec.c != 0.0) {
    Rng rng(derive(seed, StreamPurpose::simulation, {2}));
    DenseMatrix v(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) v(i, j) = rng.normal();
    x += spec.c * sigma_s * v;
  }
  if (spec.d != 0.0)
    x += spec.d * matnorm_sample(zero, DenseMatrix::Identity(r, r),
                                 build_cov(CovSpec::compound_symmetric(spec.n_features, spec.rho_f)),
                                 derive(seed, StreamPurpose::simulation, {3}));
  return x;
}

enum class Preset { example1, example2, example3, example4, example5, example6 };

inline Preset parse_preset(std::string_view name) {
  static constexpr std::string_view names[] = {"example1", "example2", "example3",
                                                "example4", "example5", "example6"};
  for (int i = 0; i < 6; ++i)
    if (name == names[i]) return static_cast<Preset>(i);
  throw DataError("unknown preset '" + std::string(name) + "'");
}

inline std::string to_string(Preset p) { return "example" + std::to_string(static_cast<int>(p) + 1); }

/// The six synthetic scenarios on the default cohort: 13 cases, 7 controls,
/// 10-20 records each, 10 features, rho_r = 0.95, rho_f = 0.5.
inline SimSpec preset_spec(Preset p) {
  SimSpec s;
  switch (p) {
    case Preset::example1:  // 2U + V + 0.5E: serial dependence only
      s.b = 2.0, s.c = 1.0, s.d = 0.5;
      break;
    case Preset::example2:  // y + 2U + V + 0.5E
      s.a = 1.0, s.b = 2.0, s.c = 1.0, s.d = 0.5;
      break;
    case Preset::example3:  // mu_s + V, mu_s = 2 * N(0, 1) per subject
      s.c = 1.0;
      s.mu = SubjectDraw::normal(0.0, 2.0);
      break;
    case Preset::example4:  // y + V
      s.a = 1.0, s.c = 1.0;
      break;
    case Preset::example5:  // sigma_s V with sigma_s^2 ~ U(1, 10)
      s.c = 1.0;
      s.sigma = SubjectDraw::sqrt_uniform(1.0, 10.0);
      break;
    case Preset::example6:  // V
      s.c = 1.0;
      break;
  }
  return s;
}

/// Cases come first (subjects S001..), then controls. Records per subject
/// are uniform on [records_min, records_max].
inline RecordDataset simulate_dataset(const SimSpec& spec, const Seed& seed) {
  spec.validate();
  const std::size_t n_subjects = spec.n_cases + spec.n_controls;
  std::vector<DenseMatrix> blocks;
  std::vector<Label> labels;
  std::vector<std::string> subjects;
  std::size_t total = 0;
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const bool is_case = s < spec.n_cases;
    const Seed subject_seed = derive(seed, StreamPurpose::simulation, {s});
    Rng rng(derive(subject_seed, StreamPurpose::generic));
    const std::size_t n_records =
        spec.records_min + static_cast<std::size_t>(rng.below(spec.records_max - spec.records_min + 1));
    const double mu_s = spec.mu.draw(rng);
    const double sigma_s = spec.sigma.draw(rng);
    blocks.push_back(simulate_subject(spec, is_case ? 1 : -1, n_records, mu_s, sigma_s, subject_seed));
    char id[32];
    std::snprintf(id, sizeof id, "S%03zu", s + 1);
    for (std::size_t r = 0; r < n_records; ++r) {
      labels.push_back(is_case ? 1 : 0);
      subjects.emplace_back(id);
    }
    total += n_records;
  }
  Matrix x(total, spec.n_features);
  std::size_t row = 0;
  for (const auto& b : blocks)
    for (Eigen::Index i = 0; i < b.rows(); ++i, ++row)
      for (Eigen::Index j = 0; j < b.cols(); ++j) x(row, static_cast<std::size_t>(j)) = b(i, j);
  return RecordDataset::create(std::move(x), std::move(labels), std::move(subjects));
}

inline RecordDataset simulate_dataset(Preset preset, const Seed& seed) {
  return simulate_dataset(preset_spec(preset), seed);
}

/// n points in [0,1)^dims; along each axis, the n equal-width bins hold
/// exactly one point each.
inline std::vector<std::vector<double>> latin_hypercube(std::size_t n, std::size_t dims, const Seed& seed) {
  std::vector<std::vector<double>> points(n, std::vector<double>(dims));
  Rng rng(derive(seed, StreamPurpose::design));
  std::vector<std::size_t> strata(n);
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t i = 0; i < n; ++i) strata[i] = i;
    rng.shuffle(std::span(strata));
    for (std::size_t i = 0; i < n; ++i)
      points[i][d] = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(n);
  }
  return points;
}

}  // namespace idconf
