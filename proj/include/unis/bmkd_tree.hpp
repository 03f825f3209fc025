#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unis/geometry.hpp"
#include "unis/quantile_model.hpp"
#include "unis/rng.hpp"

namespace unis {

enum class PivotMethod : std::uint8_t {
  predicted,   ///< candidate window from the node's CDF model
  exact_sort,  ///< full per-node sort; the baseline builder
};

struct TreeConfig {
  std::size_t c = 30;
  double delta = 0.01;
  std::size_t l = 100;
  double kappa = 0.15;
  double omega = 0.75;
  std::size_t t = 2;
  bool t_auto = false;
  std::size_t t_max = 64;
  std::uint64_t seed = 42;
  PivotMethod pivot_method = PivotMethod::predicted;

  /// Throws UsageError when a field is out of range.
  void validate() const;
  /// Largest partition number for which an evenly split node can satisfy the
  /// omega-balance bound, i.e. the largest t with t < 1 / (1 - omega).
  [[nodiscard]] std::size_t balance_t_limit() const;
};

struct Node {
  std::uint32_t depth = 0;
  std::uint32_t split_dim = 0;
  std::vector<double> pivots;                   // strictly ascending, degree - 1 entries
  std::vector<std::unique_ptr<Node>> children;  // empty for a leaf
  std::vector<PointId> points;                  // leaf payload
  std::size_t size = 0;
  Mbr mbr;
  Mbb mbb;
  std::optional<CdfModel> model;         // split-dimension model of a non-leaf
  std::vector<double> pending_inserted;  // sampled insert values not yet folded into the model
  double sample_credit = 0.0;

  [[nodiscard]] bool is_leaf() const noexcept { return children.empty(); }
  [[nodiscard]] std::size_t degree() const noexcept { return children.size(); }
  /// Child receiving split-dimension value x: the first i with x <= pivots[i], else the last.
  [[nodiscard]] std::size_t route(double x) const noexcept;
};

/// Child-index sequence from the root to a leaf.
using LeafPathCode = std::vector<std::uint32_t>;

struct RebuildEvent {
  std::uint32_t depth = 0;
  std::size_t degree = 0;
  std::size_t offending_child = 0;
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  bool full_range = false;
  std::size_t selective_points = 0;  // points under the rebuilt child range
  std::size_t scapegoat_points = 0;  // points under the whole offending node
};

struct InsertReport {
  std::size_t inserted = 0;
  std::size_t leaf_splits = 0;
  std::vector<RebuildEvent> rebuilds;
};

struct AuditReport {
  std::vector<std::string> violations;
  std::size_t nodes = 0;
  std::size_t leaves = 0;
  std::size_t oversized_duplicate_leaves = 0;
  std::size_t unbalanceable_nodes = 0;  // no split of the node's split-dimension values meets the bound
  [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
};

/// True when every child is strictly below omega * S(node) / (degree - 1).
/// A node with a single child is unbalanced once it holds two or more points.
[[nodiscard]] bool is_omega_balanced(std::span<const std::size_t> child_sizes, double omega);
[[nodiscard]] bool is_omega_balanced(const Node& node, double omega);

/// Smallest-mass contiguous child range [i0, i1] containing child i whose total
/// size is below (k / (degree - 1)) * omega * S(node), k = i1 - i0 + 1, and
/// whose even k-way split keeps every child under the per-child bound. Ties
/// prefer fewer children, then the leftmost range. Falls back to the full range.
[[nodiscard]] std::pair<std::size_t, std::size_t> select_rebuild_range(std::span<const std::size_t> child_sizes,
                                                                       std::size_t i, double omega);
[[nodiscard]] std::pair<std::size_t, std::size_t> select_rebuild_range(const Node& node, std::size_t i,
                                                                       double omega);

/// Pivots splitting `values` into between 2 and t groups that all meet the
/// omega bound for their group count, cutting only between distinct values.
/// More groups are preferred. Empty when no such split exists, which happens
/// when one value repeats too often or the node is too small for the bound.
[[nodiscard]] std::optional<std::vector<double>> balanced_split_pivots(std::vector<double> values, std::size_t t,
                                                                       double omega);

class BmkdTree {
 public:
  BmkdTree() = default;
  BmkdTree(BmkdTree&&) noexcept = default;
  BmkdTree& operator=(BmkdTree&&) noexcept = default;

  /// Builds over all points of `data`. Requires at least one point.
  static BmkdTree build(PointSet data, const TreeConfig& cfg);

  /// Appends the points (row-major, dim() values each) and restores balance.
  InsertReport insert(std::span<const double> coords);
  InsertReport insert(const PointSet& batch) { return insert(std::span<const double>(batch.raw())); }

  /// Rebuilds children [i0, i1] of `node`, a non-leaf of this tree. A range
  /// covering every child re-splits the node into t children.
  void rebuild_range(Node& node, std::size_t i0, std::size_t i1);

  [[nodiscard]] const Node* root() const noexcept { return root_.get(); }
  /// Direct node access for tests and tools. Shape changes made through it are
  /// not reflected in shape_fingerprint() until the next insert or rebuild.
  [[nodiscard]] Node* mutable_root() noexcept { return root_.get(); }
  [[nodiscard]] const PointSet& points() const noexcept { return points_; }
  [[nodiscard]] const TreeConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t t() const noexcept { return t_; }
  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return points_.dim(); }

  [[nodiscard]] LeafPathCode leaf_path(Coords q) const;
  /// Path codes of all leaves in pre-order.
  [[nodiscard]] std::vector<LeafPathCode> leaf_codes() const;
  /// Hash of leaf_codes(), maintained by build, insert, rebuild_range and load.
  [[nodiscard]] std::uint64_t shape_fingerprint() const noexcept { return shape_fingerprint_; }
  [[nodiscard]] std::map<std::uint32_t, std::size_t> leaf_depth_histogram() const;
  [[nodiscard]] std::size_t height() const;

  void save(std::ostream& out) const;
  static BmkdTree load(std::istream& in);
  void save_file(const std::string& path) const;
  static BmkdTree load_file(const std::string& path);

 private:
  std::unique_ptr<Node> build_node(std::vector<PointId> ids, std::uint32_t depth);
  bool split_node(Node& node, std::vector<PointId>& ids);
  std::vector<double> choose_pivots(std::span<const double> values, const CdfModel* model,
                                    std::span<const QuantileTarget> targets, std::size_t parts);
  void insert_into(Node& node, std::vector<PointId> ids, InsertReport& report);
  void rebalance(Node& node, InsertReport& report);
  void rebuild_children(Node& node, std::size_t i0, std::size_t i1);
  void refresh_volumes(Node& node) const;
  std::uint64_t next_seed();
  void refresh_fingerprint();

  PointSet points_;
  TreeConfig cfg_;
  std::size_t t_ = 2;
  std::uint64_t seed_counter_ = 0;
  std::unique_ptr<Node> root_;
  std::uint64_t shape_fingerprint_ = 0;
  // Set while a subtree is being built; every node of that build samples from it.
  Rng* build_rng_ = nullptr;
};

/// FNV-1a over the path codes, with the code length mixed in before each code.
[[nodiscard]] std::uint64_t fingerprint_codes(const std::vector<LeafPathCode>& codes) noexcept;

/// Point ids stored under a node, in pre-order of the leaves.
[[nodiscard]] std::vector<PointId> collect_ids(const Node& node);

/// Mean number of pivot comparisons from the root to each point's leaf. At a
/// node of degree g, reaching child i (0-based) costs i + 1 comparisons,
/// except the last child which costs g - 1.
[[nodiscard]] double aepl_empirical(const BmkdTree& tree);

/// Full structural check: sizes, routing intervals, bounding volumes, leaf
/// capacity, omega-balance and that every stored id appears exactly once.
[[nodiscard]] AuditReport audit(const BmkdTree& tree);

}  // namespace unis
