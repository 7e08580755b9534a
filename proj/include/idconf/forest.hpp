// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"
#include "idconf/rng.hpp"

namespace idconf {

struct ForestParams {
  std::size_t tree_count = 500;
  /// 0 selects floor(sqrt(n_features)), at least 1.
  std::size_t features_per_split = 0;
  std::size_t min_node_size = 1;
  bool bootstrap = true;
  /// Accumulate out-of-bag votes while fitting.
  bool compute_oob = false;

  std::size_t resolved_mtry(std::size_t n_features) const noexcept {
    if (features_per_split > 0) return std::min(features_per_split, n_features);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_features)))));
  }

  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

/// Training matrix stored column-major with each column's row order
/// presorted. Built once and reused for every refit on the same rows, which is
/// the common case inside a label permutation loop.
class TrainingFrame {
 public:
  explicit TrainingFrame(const Matrix& x) : n_rows_(x.rows()), n_features_(x.cols()) {
    columns_.resize(n_rows_ * n_features_);
    order_.resize(n_rows_ * n_features_);
    for (std::size_t r = 0; r < n_rows_; ++r)
      for (std::size_t f = 0; f < n_features_; ++f) columns_[f * n_rows_ + r] = x(r, f);
    for (std::size_t f = 0; f < n_features_; ++f) {
      auto* ord = order_.data() + f * n_rows_;
      std::iota(ord, ord + n_rows_, std::uint32_t{0});
      const double* col = columns_.data() + f * n_rows_;
      std::stable_sort(ord, ord + n_rows_, [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
  }

  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t features() const noexcept { return n_features_; }
  const double* column(std::size_t f) const noexcept { return columns_.data() + f * n_rows_; }
  const std::uint32_t* order(std::size_t f) const noexcept { return order_.data() + f * n_rows_; }

 private:
  std::size_t n_rows_;
  std::size_t n_features_;
  std::vector<double> columns_;
  std::vector<std::uint32_t> order_;
};

/// Flat axis-aligned decision tree. Internal nodes send x[feature] <= threshold
/// to `left`; leaves carry a class vote.
struct DecisionTree {
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    std::int32_t left = -1;
    std::int32_t right = -1;
    double threshold = 0.0;
    Label leaf_class = 0;

    friend bool operator==(const Node&, const Node&) = default;
  };
  std::vector<Node> nodes;

  Label predict(std::span<const double> x) const noexcept {
    std::int32_t i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].leaf_class;
  }

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

/// Fitted random forest. Probability of class 1 is the fraction of trees
/// voting 1.
class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(std::vector<DecisionTree> trees, std::size_t n_features, ForestParams params)
      : trees_(std::move(trees)), n_features_(n_features), params_(params) {}

  std::size_t n_features() const noexcept { return n_features_; }
  std::size_t tree_count() const noexcept { return trees_.size(); }
  const ForestParams& params() const noexcept { return params_; }
  std::span<const DecisionTree> trees() const noexcept { return trees_; }

  std::vector<double> predict_proba(const Matrix& x) const {
    if (x.cols() != n_features_)
      throw DataError("feature count mismatch: model expects " + std::to_string(n_features_) + ", got " +
                      std::to_string(x.cols()));
    std::vector<double> out(x.rows());
    const double scale = 1.0 / static_cast<double>(trees_.size());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto row = x.row(r);
      std::size_t votes = 0;
      for (const auto& t : trees_) votes += t.predict(row);
      out[r] = static_cast<double>(votes) * scale;
    }
    return out;
  }

  /// Out-of-bag accuracy; NaN unless fitted with compute_oob.
  double oob_accuracy() const noexcept { return oob_accuracy_; }
  void set_oob_accuracy(double v) noexcept { oob_accuracy_ = v; }

  friend bool operator==(const ForestModel& a, const ForestModel& b) {
    return a.trees_ == b.trees_ && a.n_features_ == b.n_features_ && a.params_ == b.params_;
  }

 private:
  std::vector<DecisionTree> trees_;
  std::size_t n_features_ = 0;
  ForestParams params_;
  double oob_accuracy_ = std::nan("");
};

namespace detail {

// Grows one tree on bootstrap weights. Working storage is reused across
// trees of a forest.
class TreeGrower {
 public:
  TreeGrower(const TrainingFrame& frame, std::span<const Label> labels, const ForestParams& params)
      : frame_(frame), labels_(labels), params_(params), mtry_(params.resolved_mtry(frame.features())) {
    weights_.resize(frame.rows());
    goes_left_.resize(frame.rows());
    feature_pool_.resize(frame.features());
  }

  DecisionTree grow(Rng& rng) {
    const std::size_t n = frame_.rows();
    const std::size_t nf = frame_.features();
    std::fill(weights_.begin(), weights_.end(), 0u);
    if (params_.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) ++weights_[rng.below(n)];
    } else {
      std::fill(weights_.begin(), weights_.end(), 1u);
    }
    std::size_t m = 0;
    for (auto w : weights_) m += w > 0;
    m_ = m;
    sorted_.resize(nf * m + 1);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto* ord = frame_.order(f);
      auto* dst = sorted_.data() + f * m;
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) {
        dst[k] = ord[i];
        k += weights_[ord[i]] > 0;
      }
    }
    scratch_.resize(m);

    DecisionTree tree;
    tree.nodes.reserve(2 * m);
    tree.nodes.emplace_back();
    struct Pending {
      std::int32_t node;
      std::size_t lo, hi;
    };
    std::vector<Pending> stack{{0, 0, m}};
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      if (p.hi - p.lo <= kSmallNode) {
        grow_small(tree, p.node, p.lo, p.hi, rng);
        continue;
      }
      std::size_t split_at = 0;
      const auto outcome = split_node(tree, p.node, p.lo, p.hi, rng, split_at);
      if (!outcome) continue;
      const auto left = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[static_cast<std::size_t>(p.node)].left = left;
      tree.nodes[static_cast<std::size_t>(p.node)].right = left + 1;
      stack.push_back({left + 1, split_at, p.hi});
      stack.push_back({left, p.lo, split_at});
    }
    return tree;
  }

  std::span<const std::uint32_t> weights() const noexcept { return weights_; }

 private:
  // Below this many distinct rows a node's subtree is grown by sorting only
  // the sampled features instead of partitioning every presorted column.
  // Both paths pick the same splits.
  static constexpr std::size_t kSmallNode = 24;

  struct ValueRow {
    double value;
    std::uint32_t row;
  };
  struct SmallPending {
    std::int32_t node;
    std::size_t lo, hi;
  };

  void sample_features(Rng& rng) {
    const std::size_t nf = frame_.features();
    std::iota(feature_pool_.begin(), feature_pool_.end(), std::size_t{0});
    for (std::size_t i = 0; i < mtry_; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(nf - i));
      std::swap(feature_pool_[i], feature_pool_[j]);
    }
    std::sort(feature_pool_.begin(), feature_pool_.begin() + static_cast<std::ptrdiff_t>(mtry_));
  }

  void grow_small(DecisionTree& tree, std::int32_t root, std::size_t lo, std::size_t hi, Rng& rng) {
    local_rows_.assign(sorted_.begin() + static_cast<std::ptrdiff_t>(lo),
                       sorted_.begin() + static_cast<std::ptrdiff_t>(hi));
    auto& stack = local_stack_;
    stack.assign(1, {root, 0, local_rows_.size()});
    while (!stack.empty()) {
      const SmallPending p = stack.back();
      stack.pop_back();
      const std::uint32_t* rows = local_rows_.data() + p.lo;
      const std::size_t len = p.hi - p.lo;
      double c0 = 0, c1 = 0;
      for (std::size_t i = 0; i < len; ++i) (labels_[rows[i]] ? c1 : c0) += weights_[rows[i]];
      auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
      if (c0 == 0 || c1 == 0 || c0 + c1 <= static_cast<double>(params_.min_node_size) || len < 2) {
        node.feature = -1;
        node.leaf_class = c1 > c0 ? 1 : c0 > c1 ? 0 : static_cast<Label>(rng.below(2));
        continue;
      }
      sample_features(rng);
      double best_score = -1.0;
      std::size_t best_feature = 0;
      double best_threshold = 0.0;
      for (std::size_t k = 0; k < mtry_; ++k) {
        const std::size_t f = feature_pool_[k];
        const double* col = frame_.column(f);
        for (std::size_t i = 0; i < len; ++i) {
          ValueRow v{col[rows[i]], rows[i]};
          std::size_t j = i;
          while (j > 0 && pairs_[j - 1].value > v.value) {
            pairs_[j] = pairs_[j - 1];
            --j;
          }
          pairs_[j] = v;
        }
        double l0 = 0, l1 = 0;
        for (std::size_t i = 0; i + 1 < len; ++i) {
          const std::uint32_t r = pairs_[i].row;
          (labels_[r] ? l1 : l0) += weights_[r];
          const double a = pairs_[i].value;
          const double b = pairs_[i + 1].value;
          if (!(a < b)) continue;
          const double r0 = c0 - l0, r1 = c1 - l1;
          const double nl = l0 + l1, nr = r0 + r1;
          const double score = ((l0 * l0 + l1 * l1) * nr + (r0 * r0 + r1 * r1) * nl) / (nl * nr);
          if (score > best_score) {
            best_score = score;
            best_feature = f;
            best_threshold = midpoint(a, b);
          }
        }
      }
      if (best_score < 0.0) {
        node.feature = -1;
        node.leaf_class = c1 > c0 ? 1 : c0 > c1 ? 0 : static_cast<Label>(rng.below(2));
        continue;
      }
      const double* col = frame_.column(best_feature);
      std::uint32_t* mrows = local_rows_.data() + p.lo;
      std::size_t n_left = 0;
      for (std::size_t i = 0; i < len; ++i) {
        if (col[mrows[i]] <= best_threshold) std::swap(mrows[i], mrows[n_left++]);
      }
      node.feature = static_cast<std::int32_t>(best_feature);
      node.threshold = best_threshold;
      const auto left = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[static_cast<std::size_t>(p.node)].left = left;
      tree.nodes[static_cast<std::size_t>(p.node)].right = left + 1;
      stack.push_back({left + 1, p.lo + n_left, p.hi});
      stack.push_back({left, p.lo, p.lo + n_left});
    }
  }

  static double midpoint(double a, double b) noexcept {
    double mid = 0.5 * a + 0.5 * b;
    if (!(mid < b) || mid < a) mid = a;
    return mid;
  }

  // Returns true if the node was split; children occupy [lo, split_at) and
  // [split_at, hi) of every feature's segment.
  bool split_node(DecisionTree& tree, std::int32_t node_index, std::size_t lo, std::size_t hi, Rng& rng,
                  std::size_t& split_at) {
    const std::size_t nf = frame_.features();
    const std::uint32_t* seg = sorted_.data() + lo;  // feature 0 ordering covers the node's rows
    double c0 = 0, c1 = 0;
    for (std::size_t i = 0; i < hi - lo; ++i) (labels_[seg[i]] ? c1 : c0) += weights_[seg[i]];

    auto make_leaf = [&] {
      auto& node = tree.nodes[static_cast<std::size_t>(node_index)];
      node.feature = -1;
      node.leaf_class = c1 > c0 ? 1 : c0 > c1 ? 0 : static_cast<Label>(rng.below(2));
      return false;
    };
    if (c0 == 0 || c1 == 0 || c0 + c1 <= static_cast<double>(params_.min_node_size) || hi - lo < 2)
      return make_leaf();

    // mtry features without replacement, visited in index order so equal
    // gains resolve to the lowest feature index.
    sample_features(rng);

    double best_score = -1.0;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    for (std::size_t k = 0; k < mtry_; ++k) {
      const std::size_t f = feature_pool_[k];
      const std::uint32_t* rows = sorted_.data() + f * m_ + lo;
      const double* col = frame_.column(f);
      double l0 = 0, l1 = 0;
      const std::size_t len = hi - lo;
      for (std::size_t i = 0; i + 1 < len; ++i) {
        const std::uint32_t r = rows[i];
        (labels_[r] ? l1 : l0) += weights_[r];
        const double a = col[r];
        const double b = col[rows[i + 1]];
        if (!(a < b)) continue;
        const double r0 = c0 - l0, r1 = c1 - l1;
        const double nl = l0 + l1, nr = r0 + r1;
        const double score = ((l0 * l0 + l1 * l1) * nr + (r0 * r0 + r1 * r1) * nl) / (nl * nr);
        if (score > best_score) {
          best_score = score;
          best_feature = f;
          best_threshold = midpoint(a, b);
        }
      }
    }
    if (best_score < 0.0) return make_leaf();

    const double* col = frame_.column(best_feature);
    const std::uint32_t* best_rows = sorted_.data() + best_feature * m_ + lo;
    std::size_t n_left = 0;
    for (std::size_t i = 0; i < hi - lo; ++i) {
      const bool left = col[best_rows[i]] <= best_threshold;
      goes_left_[best_rows[i]] = left;
      n_left += left;
    }
    for (std::size_t f = 0; f < nf; ++f) {
      std::uint32_t* rows = sorted_.data() + f * m_ + lo;
      std::size_t li = 0, ri = 0;
      for (std::size_t i = 0; i < hi - lo; ++i) {
        const std::uint32_t r = rows[i];
        const std::size_t left = static_cast<std::size_t>(goes_left_[r]);
        rows[li] = r;
        scratch_[ri] = r;
        li += left;
        ri += 1 - left;
      }
      std::copy_n(scratch_.begin(), ri, rows + li);
    }
    auto& node = tree.nodes[static_cast<std::size_t>(node_index)];
    node.feature = static_cast<std::int32_t>(best_feature);
    node.threshold = best_threshold;
    split_at = lo + n_left;
    return true;
  }

  const TrainingFrame& frame_;
  std::span<const Label> labels_;
  const ForestParams& params_;
  std::size_t mtry_;
  std::size_t m_ = 0;
  std::vector<std::uint32_t> weights_;
  std::vector<std::uint32_t> sorted_;
  std::vector<std::uint32_t> scratch_;
  std::vector<char> goes_left_;
  std::vector<std::size_t> feature_pool_;
  std::vector<std::uint32_t> local_rows_;
  std::vector<ValueRow> pairs_ = std::vector<ValueRow>(kSmallNode);
  std::vector<SmallPending> local_stack_;
};

}  // namespace detail

/// Fit on a prepared training frame. Tree t draws from its own stream derived
/// from `seed`, so the forest is identical however trees are scheduled.
inline ForestModel fit_forest(const TrainingFrame& frame, std::span<const Label> labels, const ForestParams& params,
                              const Seed& seed) {
  if (frame.rows() < 2) throw DataError("need at least two training rows");
  if (labels.size() != frame.rows()) throw DataError("labels and training rows differ in length");
  if (params.tree_count < 1) throw DataError("tree_count must be at least 1");
  const auto n_pos = std::count(labels.begin(), labels.end(), Label{1});
  if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw ComputeError("training labels contain a single class");

  detail::TreeGrower grower(frame, labels, params);
  std::vector<DecisionTree> trees;
  trees.reserve(params.tree_count);
  std::vector<std::uint32_t> oob_votes, oob_counts;
  std::vector<double> row(frame.features());
  if (params.compute_oob) {
    oob_votes.assign(frame.rows(), 0);
    oob_counts.assign(frame.rows(), 0);
  }
  for (std::size_t t = 0; t < params.tree_count; ++t) {
    Rng rng(derive(seed, StreamPurpose::classifier, {t}));
    trees.push_back(grower.grow(rng));
    if (params.compute_oob) {
      const auto w = grower.weights();
      for (std::size_t r = 0; r < frame.rows(); ++r) {
        if (w[r] > 0) continue;
        for (std::size_t f = 0; f < frame.features(); ++f) row[f] = frame.column(f)[r];
        oob_votes[r] += trees.back().predict(row);
        oob_counts[r]++;
      }
    }
  }
  ForestModel model(std::move(trees), frame.features(), params);
  if (params.compute_oob) {
    std::size_t correct = 0, scored = 0;
    for (std::size_t r = 0; r < frame.rows(); ++r) {
      if (oob_counts[r] == 0) continue;
      ++scored;
      const double p = static_cast<double>(oob_votes[r]) / oob_counts[r];
      const Label pred = p > 0.5 ? 1 : 0;
      correct += pred == labels[r];
    }
    model.set_oob_accuracy(scored ? static_cast<double>(correct) / static_cast<double>(scored) : std::nan(""));
  }
  return model;
}

inline ForestModel fit_forest(const Matrix& features, std::span<const Label> labels, const ForestParams& params,
                              const Seed& seed) {
  for (double v : features.data())
    if (!std::isfinite(v)) throw DataError("non-finite training feature");
  return fit_forest(TrainingFrame(features), labels, params, seed);
}

inline std::vector<double> predict_proba(const ForestModel& model, const Matrix& features) {
  return model.predict_proba(features);
}

/// Something that can be trained on a fixed training matrix many times with
/// different labels and seeds, producing class-1 scores for a test matrix.
template <typename C>
concept BinaryClassifier = requires(const C& c, const Matrix& x, std::span<const Label> y, const Seed& s) {
  typename C::Prepared;
  typename C::Model;
  { c.prepare(x) } -> std::convertible_to<typename C::Prepared>;
  { c.fit(std::declval<const typename C::Prepared&>(), y, s) } -> std::convertible_to<typename C::Model>;
  { std::declval<const typename C::Model&>().predict_proba(x) } -> std::convertible_to<std::vector<double>>;
};

/// The random forest behind the BinaryClassifier interface.
struct RandomForest {
  using Prepared = TrainingFrame;
  using Model = ForestModel;

  ForestParams params;

  Prepared prepare(const Matrix& x) const { return TrainingFrame(x); }
  Model fit(const Prepared& frame, std::span<const Label> y, const Seed& seed) const {
    return fit_forest(frame, y, params, seed);
  }
};

static_assert(BinaryClassifier<RandomForest>);

inline constexpr const char* kForestFormatTag = "idconf-forest";
inline constexpr int kForestFormatVersion = 1;

/// Text dump: header line, parameters, then one line per node.
inline void save_forest(std::ostream& out, const ForestModel& model) {
  const auto& p = model.params();
  out << kForestFormatTag << ' ' << kForestFormatVersion << '\n';
  out << "n_features " << model.n_features() << '\n';
  out << "params " << p.tree_count << ' ' << p.features_per_split << ' ' << p.min_node_size << ' '
      << int(p.bootstrap) << '\n';
  char buf[64];
  for (const auto& tree : model.trees()) {
    out << "tree " << tree.nodes.size() << '\n';
    for (const auto& n : tree.nodes) {
      std::snprintf(buf, sizeof buf, "%.17g", n.threshold);
      out << n.feature << ' ' << n.left << ' ' << n.right << ' ' << buf << ' ' << int(n.leaf_class) << '\n';
    }
  }
}

inline ForestModel load_forest(std::istream& in) {
  std::string tag, key;
  int version = 0;
  if (!(in >> tag >> version) || tag != kForestFormatTag) throw DataError("not a forest dump");
  if (version != kForestFormatVersion) throw DataError("unsupported forest dump version " + std::to_string(version));
  std::size_t n_features = 0;
  ForestParams p;
  int bootstrap = 1;
  if (!(in >> key >> n_features) || key != "n_features") throw DataError("forest dump: missing n_features");
  if (!(in >> key >> p.tree_count >> p.features_per_split >> p.min_node_size >> bootstrap) || key != "params")
    throw DataError("forest dump: missing params");
  p.bootstrap = bootstrap != 0;
  std::vector<DecisionTree> trees;
  std::size_t count = 0;
  while (in >> key >> count) {
    if (key != "tree") throw DataError("forest dump: expected tree record");
    DecisionTree t;
    t.nodes.resize(count);
    for (auto& n : t.nodes) {
      int leaf = 0;
      std::string threshold;
      if (!(in >> n.feature >> n.left >> n.right >> threshold >> leaf)) throw DataError("forest dump: truncated node");
      n.threshold = std::stod(threshold);
      n.leaf_class = static_cast<Label>(leaf);
      if (n.feature >= static_cast<std::int32_t>(n_features)) throw DataError("forest dump: feature index out of range");
    }
    trees.push_back(std::move(t));
  }
  if (trees.empty()) throw DataError("forest dump has no trees");
  return ForestModel(std::move(trees), n_features, p);
}

}  // namespace idconf
