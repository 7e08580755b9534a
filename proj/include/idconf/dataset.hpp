// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "idconf/errors.hpp"

namespace idconf {

/// Dense row-major real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw DataError("matrix data size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Rows gathered in the given order.
  Matrix select_rows(std::span<const std::size_t> rows) const {
    Matrix out(rows.size(), cols_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * cols_), cols_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Label = std::uint8_t;  // 1 = case, 0 = control

/// Records from several subjects: features, one binary label per record and
/// the owning subject of each record. Immutable once built.
class RecordDataset {
 public:
  /// Validates and builds. Records of one subject need not be contiguous.
  static RecordDataset create(Matrix features, std::vector<Label> labels,
                              std::vector<std::string> subject_ids,
                              std::vector<std::string> feature_names = {},
                              std::string case_name = "case", std::string control_name = "control") {
    RecordDataset ds;
    const std::size_t n = features.rows();
    if (labels.size() != n || subject_ids.size() != n)
      throw DataError("features, labels and subject ids must have the same number of rows");
    if (n == 0) throw DataError("dataset has no records");
    if (features.cols() == 0) throw DataError("dataset has no feature columns");
    for (double v : features.data())
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    for (Label l : labels)
      if (l > 1) throw DataError("labels must be 0 or 1");

    std::unordered_map<std::string, std::size_t> index;
    ds.row_subject_.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto [it, inserted] = index.try_emplace(subject_ids[r], ds.subject_names_.size());
      if (inserted) {
        ds.subject_names_.push_back(subject_ids[r]);
        ds.subject_labels_.push_back(labels[r]);
        ds.subject_rows_.emplace_back();
      } else if (ds.subject_labels_[it->second] != labels[r]) {
        throw DataError("subject '" + subject_ids[r] + "' has inconsistent labels");
      }
      ds.row_subject_[r] = it->second;
      ds.subject_rows_[it->second].push_back(r);
    }
    const auto cases = std::count(ds.subject_labels_.begin(), ds.subject_labels_.end(), Label{1});
    if (cases == 0 || cases == static_cast<std::ptrdiff_t>(ds.subject_labels_.size()))
      throw DataError("dataset must contain both case and control subjects");

    if (feature_names.empty()) {
      for (std::size_t f = 0; f < features.cols(); ++f) feature_names.push_back("f" + std::to_string(f + 1));
    } else if (feature_names.size() != features.cols()) {
      throw DataError("feature name count does not match feature columns");
    }
    ds.features_ = std::move(features);
    ds.labels_ = std::move(labels);
    ds.subject_ids_ = std::move(subject_ids);
    ds.feature_names_ = std::move(feature_names);
    ds.case_name_ = std::move(case_name);
    ds.control_name_ = std::move(control_name);
    return ds;
  }

  const Matrix& features() const noexcept { return features_; }
  std::span<const Label> labels() const noexcept { return labels_; }
  std::span<const std::string> subject_ids() const noexcept { return subject_ids_; }
  std::span<const std::string> feature_names() const noexcept { return feature_names_; }
  const std::string& case_name() const noexcept { return case_name_; }
  const std::string& control_name() const noexcept { return control_name_; }

  std::size_t n_records() const noexcept { return labels_.size(); }
  std::size_t n_features() const noexcept { return features_.cols(); }
  std::size_t n_subjects() const noexcept { return subject_names_.size(); }

  /// Dense subject index (order of first appearance) for each record.
  std::span<const std::size_t> row_subject() const noexcept { return row_subject_; }
  std::span<const Label> subject_labels() const noexcept { return subject_labels_; }
  std::span<const std::string> subject_names() const noexcept { return subject_names_; }
  const std::vector<std::vector<std::size_t>>& subject_rows() const noexcept { return subject_rows_; }

  /// Same labels and subjects, different features (used by feature shuffles).
  RecordDataset with_features(Matrix features) const {
    if (features.rows() != features_.rows() || features.cols() != features_.cols())
      throw DataError("replacement feature matrix has the wrong shape");
    RecordDataset copy = *this;
    copy.features_ = std::move(features);
    return copy;
  }

  friend bool operator==(const RecordDataset&, const RecordDataset&) = default;

 private:
  RecordDataset() = default;

  Matrix features_;
  std::vector<Label> labels_;
  std::vector<std::string> subject_ids_;
  std::vector<std::string> feature_names_;
  std::string case_name_;
  std::string control_name_;

  std::vector<std::size_t> row_subject_;
  std::vector<std::string> subject_names_;
  std::vector<Label> subject_labels_;
  std::vector<std::vector<std::size_t>> subject_rows_;
};

/// Which CSV columns play which role.
struct Schema {
  std::string subject_column = "subject_id";
  std::string label_column = "label";
  /// Empty means every column other than the subject and label columns.
  std::vector<std::string> feature_columns;
  /// Label value that denotes a case; the other value is the control.
  std::string case_label = "case";
};

struct DatasetSummary {
  std::size_t n_records = 0;
  std::size_t n_subjects = 0;
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
  std::size_t min_records_per_subject = 0;
  std::size_t max_records_per_subject = 0;
  std::size_t n_features = 0;

  friend bool operator==(const DatasetSummary&, const DatasetSummary&) = default;
};

inline DatasetSummary summarize(const RecordDataset& ds) {
  DatasetSummary s;
  s.n_records = ds.n_records();
  s.n_subjects = ds.n_subjects();
  s.n_features = ds.n_features();
  for (Label l : ds.subject_labels()) (l == 1 ? s.n_cases : s.n_controls)++;
  s.min_records_per_subject = ds.n_records();
  for (const auto& rows : ds.subject_rows()) {
    s.min_records_per_subject = std::min(s.min_records_per_subject, rows.size());
    s.max_records_per_subject = std::max(s.max_records_per_subject, rows.size());
  }
  return s;
}

namespace detail {

// One CSV line into fields. Handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

/// Reads the CSV format: header row, one record per line, comma separated,
/// '.' decimal point.
inline RecordDataset read_dataset(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto& h : detail::split_csv_line(line)) header.emplace_back(detail::trim(h));

  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t subject_col = column_of(schema.subject_column);
  const std::size_t label_col = column_of(schema.label_column);
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == subject_col || c == label_col) continue;
      feature_cols.push_back(c);
      feature_names.push_back(header[c]);
    }
  } else {
    for (const auto& name : schema.feature_columns) {
      feature_cols.push_back(column_of(name));
      feature_names.push_back(name);
    }
  }
  if (feature_cols.empty()) throw DataError("schema selects no feature columns");

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::vector<std::string> subjects;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    subjects.emplace_back(detail::trim(fields[subject_col]));
    raw_labels.emplace_back(detail::trim(fields[label_col]));
    for (std::size_t c : feature_cols) {
      const auto cell = detail::trim(fields[c]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
        throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" + std::string(cell) +
                        "' in column '" + header[c] + "'");
      values.push_back(v);
    }
  }
  if (subjects.empty()) throw DataError("input has no records");

  std::vector<std::string> distinct;
  for (const auto& l : raw_labels)
    if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
  if (distinct.size() > 2) throw DataError("label column has more than two distinct values");
  if (distinct.size() < 2) throw DataError("dataset contains a single class");
  if (std::find(distinct.begin(), distinct.end(), schema.case_label) == distinct.end())
    throw DataError("case label '" + schema.case_label + "' does not occur in the label column");
  const std::string control_name = distinct[0] == schema.case_label ? distinct[1] : distinct[0];

  std::vector<Label> labels(raw_labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = raw_labels[i] == schema.case_label ? 1 : 0;

  const std::size_t n = subjects.size();
  return RecordDataset::create(Matrix(n, feature_cols.size(), std::move(values)), std::move(labels),
                               std::move(subjects), std::move(feature_names), schema.case_label, control_name);
}

inline RecordDataset load_dataset(const std::string& path, const Schema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_dataset(in, schema);
}

/// Writes the CSV format with 17 significant digits, so reading it back gives
/// bitwise-identical features.
inline void write_dataset(std::ostream& out, const RecordDataset& ds) {
  out << "subject_id,label";
  for (const auto& name : ds.feature_names()) out << ',' << detail::csv_escape(name);
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < ds.n_records(); ++r) {
    out << detail::csv_escape(ds.subject_ids()[r]) << ','
        << detail::csv_escape(ds.labels()[r] ? ds.case_name() : ds.control_name());
    for (double v : ds.features().row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

inline void save_dataset(const std::string& path, const RecordDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_dataset(out, ds);
}

}  // namespace idconf
