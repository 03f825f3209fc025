#include "unis/forest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "unis/errors.hpp"
#include "unis/rng.hpp"

namespace unis {

namespace {

double gini(const std::vector<std::size_t>& counts, std::size_t total) {
  if (total == 0) return 0.0;
  double s = 1.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    s -= p * p;
  }
  return s;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x, std::span<const int> y, int n_classes,
              const ForestParams& params, std::size_t mtry, Rng& rng)
      : x_(x), y_(y), k_(static_cast<std::size_t>(n_classes)), params_(params), mtry_(mtry), rng_(rng) {}

  RandomForest::Tree build(std::vector<std::size_t> rows) {
    tree_.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::uint32_t grow(std::vector<std::size_t>& rows, std::size_t depth) {
    const auto index = static_cast<std::uint32_t>(tree_.size());
    tree_.emplace_back();
    std::vector<std::size_t> counts(k_, 0);
    for (std::size_t r : rows) ++counts[static_cast<std::size_t>(y_[r])];

    const bool pure = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
    if (pure || depth >= params_.max_depth || rows.size() < 2 * params_.min_leaf) {
      make_leaf(index, counts, rows.size());
      return index;
    }

    const double parent = gini(counts, rows.size());
    double best_gain = 0.0;
    std::int32_t best_feature = -1;
    double best_threshold = 0.0;

    const std::size_t n_features = x_.front().size();
    std::vector<std::size_t> features(n_features);
    std::iota(features.begin(), features.end(), std::size_t{0});
    for (std::size_t i = 0; i < mtry_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.below(n_features - i));
      std::swap(features[i], features[j]);
    }

    std::vector<std::pair<double, int>> column(rows.size());
    std::vector<std::size_t> left(k_);
    for (std::size_t fi = 0; fi < mtry_; ++fi) {
      const std::size_t f = features[fi];
      for (std::size_t i = 0; i < rows.size(); ++i) column[i] = {x_[rows[i]][f], y_[rows[i]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::fill(left.begin(), left.end(), 0);
      std::vector<std::size_t> right = counts;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        const auto cls = static_cast<std::size_t>(column[i].second);
        ++left[cls];
        --right[cls];
        const std::size_t n_left = i + 1;
        const std::size_t n_right = column.size() - n_left;
        if (column[i].first == column[i + 1].first) continue;
        if (n_left < params_.min_leaf || n_right < params_.min_leaf) continue;
        const double w = static_cast<double>(n_left) / static_cast<double>(column.size());
        const double gain = parent - w * gini(left, n_left) - (1.0 - w) * gini(right, n_right);
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_feature = static_cast<std::int32_t>(f);
          const double mid = column[i].first + (column[i + 1].first - column[i].first) / 2.0;
          best_threshold = mid < column[i + 1].first ? mid : column[i].first;
        }
      }
    }

    if (best_feature < 0) {
      make_leaf(index, counts, rows.size());
      return index;
    }
    std::vector<std::size_t> lrows;
    std::vector<std::size_t> rrows;
    for (std::size_t r : rows) {
      (x_[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? lrows : rrows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    tree_[index].feature = best_feature;
    tree_[index].threshold = best_threshold;
    const std::uint32_t l = grow(lrows, depth + 1);
    const std::uint32_t r = grow(rrows, depth + 1);
    tree_[index].left = l;
    tree_[index].right = r;
    return index;
  }

  void make_leaf(std::uint32_t index, const std::vector<std::size_t>& counts, std::size_t total) {
    auto& node = tree_[index];
    node.feature = -1;
    node.proba.resize(k_);
    for (std::size_t c = 0; c < k_; ++c) {
      node.proba[c] = total ? static_cast<double>(counts[c]) / static_cast<double>(total) : 0.0;
    }
  }

  const std::vector<std::vector<double>>& x_;
  std::span<const int> y_;
  std::size_t k_;
  const ForestParams& params_;
  std::size_t mtry_;
  Rng& rng_;
  RandomForest::Tree tree_;
};

const RandomForest::TreeNode& leaf_for(const RandomForest::Tree& tree, std::span<const double> x) {
  std::uint32_t i = 0;
  while (tree[i].feature >= 0) {
    i = x[static_cast<std::size_t>(tree[i].feature)] <= tree[i].threshold ? tree[i].left : tree[i].right;
  }
  return tree[i];
}

}  // namespace

RandomForest RandomForest::fit(const std::vector<std::vector<double>>& x, std::span<const int> y, int n_classes,
                               const ForestParams& params) {
  if (n_classes < 1) throw UsageError("forest: need at least one class");
  if (x.size() != y.size()) throw UsageError("forest: feature and label counts differ");
  if (x.empty()) throw UsageError("forest: no training samples");
  if (params.n_trees == 0 || params.min_leaf == 0) throw UsageError("forest: n_trees and min_leaf must be positive");
  const std::size_t nf = x.front().size();
  for (const auto& row : x) {
    if (row.size() != nf) throw UsageError("forest: ragged feature matrix");
  }
  for (int label : y) {
    if (label < 0 || label >= n_classes) throw UsageError("forest: label out of range");
  }

  RandomForest forest;
  forest.params_ = params;
  forest.n_classes_ = n_classes;
  forest.n_features_ = nf;
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int label : y) ++counts[static_cast<std::size_t>(label)];
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2 || nf == 0) {
    forest.constant_ = true;
    forest.constant_label_ = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    return forest;
  }

  std::size_t mtry = params.max_features;
  if (mtry == 0) mtry = static_cast<std::size_t>(std::sqrt(static_cast<double>(nf)));
  mtry = std::clamp<std::size_t>(mtry, 1, nf);

  Rng rng(params.seed);
  TreeBuilder builder(x, y, n_classes, params, mtry, rng);
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    std::vector<std::size_t> rows(x.size());
    for (auto& r : rows) r = static_cast<std::size_t>(rng.below(x.size()));
    forest.trees_.push_back(builder.build(std::move(rows)));
  }
  return forest;
}

void RandomForest::check_features(std::span<const double> x) const {
  if (x.size() != n_features_) {
    throw UsageError("forest: expected " + std::to_string(n_features_) + " features, got " + std::to_string(x.size()));
  }
}

std::vector<double> RandomForest::votes(std::span<const double> x) const {
  check_features(x);
  std::vector<double> v(static_cast<std::size_t>(n_classes_), 0.0);
  if (constant_) {
    v[static_cast<std::size_t>(constant_label_)] = 1.0;
    return v;
  }
  for (const auto& tree : trees_) {
    const auto& leaf = leaf_for(tree, x);
    const auto top = std::max_element(leaf.proba.begin(), leaf.proba.end()) - leaf.proba.begin();
    v[static_cast<std::size_t>(top)] += 1.0;
  }
  return v;
}

std::vector<double> RandomForest::proba_sum(std::span<const double> x) const {
  check_features(x);
  std::vector<double> p(static_cast<std::size_t>(n_classes_), 0.0);
  if (constant_) {
    p[static_cast<std::size_t>(constant_label_)] = 1.0;
    return p;
  }
  for (const auto& tree : trees_) {
    const auto& leaf = leaf_for(tree, x);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += leaf.proba[c];
  }
  return p;
}

std::vector<int> RandomForest::ranking(std::span<const double> x) const {
  const auto v = votes(x);
  const auto p = proba_sum(x);
  std::vector<int> order(static_cast<std::size_t>(n_classes_));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    if (v[ia] != v[ib]) return v[ia] > v[ib];
    return p[ia] > p[ib];
  });
  return order;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'F', 'O', 'R'};
constexpr std::uint32_t kVersion = 1;

void put(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(buf, bytes);
}
void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v), 8); }

std::uint64_t get(std::istream& in, int bytes) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), bytes);
  if (in.gcount() != bytes) throw DataError("forest: unexpected end of model data");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}
double get_f64(std::istream& in) { return std::bit_cast<double>(get(in, 8)); }

}  // namespace

void RandomForest::save(std::ostream& out) const {
  out.write(kMagic, 4);
  put(out, kVersion, 4);
  put(out, static_cast<std::uint64_t>(n_classes_), 4);
  put(out, n_features_, 8);
  put(out, params_.n_trees, 8);
  put(out, params_.max_depth, 8);
  put(out, params_.min_leaf, 8);
  put(out, params_.max_features, 8);
  put(out, params_.seed, 8);
  put(out, constant_ ? 1 : 0, 1);
  put(out, static_cast<std::uint64_t>(constant_label_), 4);
  put(out, trees_.size(), 8);
  for (const auto& tree : trees_) {
    put(out, tree.size(), 8);
    for (const auto& node : tree) {
      put(out, static_cast<std::uint32_t>(node.feature), 4);
      put_f64(out, node.threshold);
      put(out, node.left, 4);
      put(out, node.right, 4);
      if (node.feature < 0) {
        for (double p : node.proba) put_f64(out, p);
      }
    }
  }
}

RandomForest RandomForest::load(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError("forest: bad magic");
  if (get(in, 4) != kVersion) throw DataError("forest: unsupported version");
  RandomForest f;
  f.n_classes_ = static_cast<int>(get(in, 4));
  f.n_features_ = get(in, 8);
  f.params_.n_trees = get(in, 8);
  f.params_.max_depth = get(in, 8);
  f.params_.min_leaf = get(in, 8);
  f.params_.max_features = get(in, 8);
  f.params_.seed = get(in, 8);
  f.constant_ = get(in, 1) != 0;
  f.constant_label_ = static_cast<int>(get(in, 4));
  if (f.n_classes_ < 1 || f.n_classes_ > 1024 || f.constant_label_ >= f.n_classes_) {
    throw DataError("forest: corrupt header");
  }
  const std::uint64_t n_trees = get(in, 8);
  if (n_trees > 100000) throw DataError("forest: implausible tree count");
  for (std::uint64_t t = 0; t < n_trees; ++t) {
    const std::uint64_t n_nodes = get(in, 8);
    if (n_nodes == 0 || n_nodes > (std::uint64_t{1} << 32)) throw DataError("forest: implausible node count");
    Tree tree(static_cast<std::size_t>(n_nodes));
    for (std::size_t idx = 0; idx < tree.size(); ++idx) {
      auto& node = tree[idx];
      node.feature = static_cast<std::int32_t>(static_cast<std::uint32_t>(get(in, 4)));
      node.threshold = get_f64(in);
      node.left = static_cast<std::uint32_t>(get(in, 4));
      node.right = static_cast<std::uint32_t>(get(in, 4));
      if (node.feature < 0) {
        node.proba.resize(static_cast<std::size_t>(f.n_classes_));
        for (double& p : node.proba) p = get_f64(in);
      } else if (static_cast<std::size_t>(node.feature) >= f.n_features_ || node.left >= n_nodes ||
                 node.right >= n_nodes || node.left <= idx || node.right <= idx) {
        throw DataError("forest: corrupt node");
      }
    }
    f.trees_.push_back(std::move(tree));
  }
  return f;
}

}  // namespace unis
