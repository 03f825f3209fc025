#include "unis/bmkd_tree.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "unis/errors.hpp"
#include "unis/partition.hpp"
#include "unis/rng.hpp"

namespace unis {

// ---------------------------------------------------------------------------
// Configuration

void TreeConfig::validate() const {
  if (c == 0) throw UsageError("leaf capacity c must be positive");
  if (!(delta > 0.0 && delta <= 1.0)) throw UsageError("delta must lie in (0, 1]");
  if (l == 0) throw UsageError("l must be positive");
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw UsageError("kappa must lie in [0, 1]");
  if (!(omega > 0.5 && omega < 1.0)) throw UsageError("omega must lie in (0.5, 1)");
  if (t < 2) throw UsageError("t must be at least 2");
  if (t_max < 2) throw UsageError("t_max must be at least 2");
}

std::size_t TreeConfig::balance_t_limit() const {
  std::size_t limit = 2;
  while (limit < t_max && static_cast<double>(limit + 1) * (1.0 - omega) < 1.0) ++limit;
  return limit;
}

std::size_t Node::route(double x) const noexcept {
  return static_cast<std::size_t>(std::lower_bound(pivots.begin(), pivots.end(), x) - pivots.begin());
}

// ---------------------------------------------------------------------------
// Balance predicates

bool is_omega_balanced(std::span<const std::size_t> child_sizes, double omega) {
  const std::size_t total = std::accumulate(child_sizes.begin(), child_sizes.end(), std::size_t{0});
  if (child_sizes.size() <= 1) return total < 2;
  const double bound = omega * static_cast<double>(total) / static_cast<double>(child_sizes.size() - 1);
  return std::all_of(child_sizes.begin(), child_sizes.end(),
                     [bound](std::size_t s) { return static_cast<double>(s) < bound; });
}

namespace {

std::vector<std::size_t> child_sizes_of(const Node& node) {
  std::vector<std::size_t> sizes;
  sizes.reserve(node.children.size());
  for (const auto& ch : node.children) sizes.push_back(ch->size);
  return sizes;
}

}  // namespace

bool is_omega_balanced(const Node& node, double omega) {
  if (node.is_leaf()) return true;
  const auto sizes = child_sizes_of(node);
  return is_omega_balanced(sizes, omega);
}

std::pair<std::size_t, std::size_t> select_rebuild_range(std::span<const std::size_t> child_sizes, std::size_t i,
                                                         double omega) {
  const std::size_t deg = child_sizes.size();
  if (i >= deg) throw UsageError("select_rebuild_range: child index out of range");
  const std::pair<std::size_t, std::size_t> full{0, deg == 0 ? 0 : deg - 1};
  if (deg <= 1) return full;
  const double total = static_cast<double>(std::accumulate(child_sizes.begin(), child_sizes.end(), std::size_t{0}));

  std::vector<std::size_t> prefix(deg + 1, 0);
  for (std::size_t j = 0; j < deg; ++j) prefix[j + 1] = prefix[j] + child_sizes[j];

  const double per_child = omega * total / static_cast<double>(deg - 1);
  bool found = false;
  std::pair<std::size_t, std::size_t> best = full;
  std::size_t best_mass = 0;
  for (std::size_t i0 = 0; i0 <= i; ++i0) {
    for (std::size_t i1 = i; i1 < deg; ++i1) {
      if (i0 == 0 && i1 == deg - 1) continue;
      const std::size_t k = i1 - i0 + 1;
      const std::size_t mass = prefix[i1 + 1] - prefix[i0];
      const double bound = static_cast<double>(k) / static_cast<double>(deg - 1) * omega * total;
      if (!(static_cast<double>(mass) < bound)) continue;
      // An even k-way split still leaves ceil(mass / k) points in some child.
      const std::size_t largest = (mass + k - 1) / k;
      if (!(static_cast<double>(largest) < per_child)) continue;
      const bool better = !found || mass < best_mass ||
                          (mass == best_mass && (k < best.second - best.first + 1 ||
                                                 (k == best.second - best.first + 1 && i0 < best.first)));
      if (better) {
        found = true;
        best = {i0, i1};
        best_mass = mass;
      }
    }
  }
  return best;
}

std::pair<std::size_t, std::size_t> select_rebuild_range(const Node& node, std::size_t i, double omega) {
  const auto sizes = child_sizes_of(node);
  return select_rebuild_range(sizes, i, omega);
}

// ---------------------------------------------------------------------------
// Helpers

std::optional<std::vector<double>> balanced_split_pivots(std::vector<double> values, std::size_t t, double omega) {
  std::sort(values.begin(), values.end());
  struct Run {
    double value;
    std::size_t count;
  };
  std::vector<Run> runs;
  for (double v : values) {
    if (runs.empty() || runs.back().value != v) {
      runs.push_back({v, 1});
    } else {
      ++runs.back().count;
    }
  }
  const double total = static_cast<double>(values.size());
  // A group is a half-open run interval [first, last) with its point count.
  struct Group {
    std::size_t first, last, size;
  };
  for (std::size_t g = std::min(t, runs.size()); g >= 2; --g) {
    const double bound = omega * total / static_cast<double>(g - 1);
    std::vector<Group> groups;
    Group cur{0, 0, 0};
    bool fits = true;
    for (std::size_t r = 0; r < runs.size() && fits; ++r) {
      if (static_cast<double>(runs[r].count) >= bound) fits = false;
      if (cur.size > 0 && static_cast<double>(cur.size + runs[r].count) >= bound) {
        groups.push_back(cur);
        cur = {r, r, 0};
      }
      cur.last = r + 1;
      cur.size += runs[r].count;
    }
    groups.push_back(cur);
    if (!fits || groups.size() > g) continue;

    // Greedy filling used as few groups as possible; split the largest
    // multi-run groups until there are exactly g.
    while (groups.size() < g) {
      std::size_t pick = groups.size();
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i].last - groups[i].first < 2) continue;
        if (pick == groups.size() || groups[i].size > groups[pick].size) pick = i;
      }
      const Group whole = groups[pick];
      std::size_t left = 0;
      std::size_t best_cut = whole.first + 1;
      std::size_t best_max = whole.size;
      for (std::size_t r = whole.first; r + 1 < whole.last; ++r) {
        left += runs[r].count;
        const std::size_t worst = std::max(left, whole.size - left);
        if (worst < best_max) {
          best_max = worst;
          best_cut = r + 1;
        }
      }
      std::size_t left_size = 0;
      for (std::size_t r = whole.first; r < best_cut; ++r) left_size += runs[r].count;
      groups[pick] = {whole.first, best_cut, left_size};
      groups.insert(groups.begin() + static_cast<std::ptrdiff_t>(pick + 1),
                    Group{best_cut, whole.last, whole.size - left_size});
    }
    std::vector<double> pivots;
    for (std::size_t i = 0; i + 1 < groups.size(); ++i) pivots.push_back(runs[groups[i].last - 1].value);
    return pivots;
  }
  return std::nullopt;
}

std::vector<PointId> collect_ids(const Node& node) {
  std::vector<PointId> out;
  out.reserve(node.size);
  std::vector<const Node*> stack{&node};
  while (!stack.empty()) {
    const Node* cur = stack.back();
    stack.pop_back();
    if (cur->is_leaf()) {
      out.insert(out.end(), cur->points.begin(), cur->points.end());
      continue;
    }
    for (auto it = cur->children.rbegin(); it != cur->children.rend(); ++it) stack.push_back(it->get());
  }
  return out;
}

namespace {

struct Split {
  std::vector<double> pivots;
  std::vector<std::vector<PointId>> buckets;
};

// Routes ids by `pivots` on dimension `dim`, then drops empty buckets. A kept
// bucket keeps its own right-hand pivot; the last kept bucket has none.
Split split_by_pivots(const PointSet& pts, std::span<const PointId> ids, std::size_t dim,
                      std::vector<double> pivots) {
  std::sort(pivots.begin(), pivots.end());
  pivots.erase(std::unique(pivots.begin(), pivots.end()), pivots.end());
  std::vector<std::vector<PointId>> buckets(pivots.size() + 1);
  for (PointId id : ids) {
    const double x = pts.coord(id, dim);
    const auto b = static_cast<std::size_t>(std::lower_bound(pivots.begin(), pivots.end(), x) - pivots.begin());
    buckets[b].push_back(id);
  }
  Split out;
  std::size_t prev = buckets.size();
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (buckets[b].empty()) continue;
    if (prev != buckets.size()) out.pivots.push_back(pivots[prev]);
    out.buckets.push_back(std::move(buckets[b]));
    prev = b;
  }
  return out;
}

// Largest value strictly below the maximum; separates the maximum's duplicates.
double below_max(std::span<const double> values) {
  const double hi = *std::max_element(values.begin(), values.end());
  double best = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v < hi && v > best) best = v;
  }
  return best;
}

// Small nodes, a large t or heavy duplicates can leave the quantile split
// outside the omega bound; a balanced alternative replaces it when one exists.
void rebalance_split(Split& split, std::span<const PointId> ids, std::size_t dim, std::span<const double> values,
                     const PointSet& pts, std::size_t t, double omega) {
  std::vector<std::size_t> sizes;
  for (const auto& b : split.buckets) sizes.push_back(b.size());
  if (is_omega_balanced(sizes, omega)) return;
  auto pivots = balanced_split_pivots(std::vector<double>(values.begin(), values.end()), t, omega);
  if (pivots) split = split_by_pivots(pts, ids, dim, std::move(*pivots));
}

std::vector<double> dim_values(const PointSet& pts, std::span<const PointId> ids, std::size_t dim) {
  std::vector<double> values(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) values[i] = pts.coord(ids[i], dim);
  return values;
}

// Pivot j of a k-way split of `count` values sits at 0-based rank ceil(j*count/k) - 1.
std::size_t pivot_rank(std::size_t j, std::size_t count, std::size_t k) { return (j * count + k - 1) / k - 1; }

}  // namespace

// ---------------------------------------------------------------------------
// Construction

std::uint64_t BmkdTree::next_seed() { return mix_seed(cfg_.seed ^ mix_seed(++seed_counter_)); }

void BmkdTree::refresh_fingerprint() { shape_fingerprint_ = fingerprint_codes(leaf_codes()); }

std::uint64_t fingerprint_codes(const std::vector<LeafPathCode>& codes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFFU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(codes.size());
  for (const auto& code : codes) {
    mix(code.size());
    for (std::uint32_t c : code) mix(c);
  }
  return h;
}

BmkdTree BmkdTree::build(PointSet data, const TreeConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw UsageError("build: dataset is empty");
  BmkdTree tree;
  tree.cfg_ = cfg;
  tree.points_ = std::move(data);
  if (cfg.t_auto) {
    const std::size_t limit = cfg.balance_t_limit();
    tree.t_ = select_t(tree.points_.size(), cfg.c, limit, AnnealParams{}, mix_seed(cfg.seed)).t;
  } else {
    tree.t_ = cfg.t;
  }
  std::vector<PointId> ids(tree.points_.size());
  std::iota(ids.begin(), ids.end(), PointId{0});
  tree.root_ = tree.build_node(std::move(ids), 0);
  tree.refresh_fingerprint();
  return tree;
}

std::vector<double> BmkdTree::choose_pivots(std::span<const double> values, const CdfModel* model,
                                            std::span<const QuantileTarget> targets, std::size_t parts) {
  if (model != nullptr) {
    const double cap = 1.0 / static_cast<double>(parts);
    return select_by_model(values, *model, targets, std::min(cfg_.kappa, cap), cap);
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(sorted[t.rank]);
  return out;
}

std::unique_ptr<Node> BmkdTree::build_node(std::vector<PointId> ids, std::uint32_t depth) {
  if (build_rng_ == nullptr) {
    Rng rng(next_seed());
    build_rng_ = &rng;
    struct Reset {
      Rng*& slot;
      ~Reset() { slot = nullptr; }
    } reset{build_rng_};
    return build_node(std::move(ids), depth);
  }
  auto node = std::make_unique<Node>();
  node->depth = depth;
  node->split_dim = static_cast<std::uint32_t>(depth % dim());
  node->size = ids.size();
  bounding_volumes(points_, ids, node->mbr, node->mbb);
  if (ids.size() <= cfg_.c || !split_node(*node, ids)) node->points = std::move(ids);
  return node;
}

bool BmkdTree::split_node(Node& node, std::vector<PointId>& ids) {
  const std::size_t n = ids.size();
  const std::size_t d = dim();
  for (std::size_t attempt = 0; attempt < d; ++attempt) {
    const std::size_t sd = (node.depth + attempt) % d;
    const std::vector<double> values = dim_values(points_, ids, sd);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) continue;

    std::optional<CdfModel> model;
    if (cfg_.pivot_method == PivotMethod::predicted) model = cdf_train(values, cfg_.delta, cfg_.l, *build_rng_);
    std::vector<QuantileTarget> targets;
    for (std::size_t j = 1; j < t_; ++j) {
      targets.push_back({static_cast<double>(j) / static_cast<double>(t_), pivot_rank(j, n, t_)});
    }
    Split split = split_by_pivots(points_, ids, sd, choose_pivots(values, model ? &*model : nullptr, targets, t_));
    if (split.buckets.size() < 2) split = split_by_pivots(points_, ids, sd, {below_max(values)});
    rebalance_split(split, ids, sd, values, points_, t_, cfg_.omega);

    node.split_dim = static_cast<std::uint32_t>(sd);
    node.pivots = std::move(split.pivots);
    node.model = std::move(model);
    for (auto& bucket : split.buckets) node.children.push_back(build_node(std::move(bucket), node.depth + 1));
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Insertion

InsertReport BmkdTree::insert(std::span<const double> coords) {
  InsertReport report;
  if (coords.empty()) return report;
  const std::size_t d = dim();
  if (d == 0 || !root_) throw UsageError("insert: tree has not been built");
  if (coords.size() % d != 0) throw UsageError("insert: coordinate count is not a multiple of the tree dimension");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!std::isfinite(coords[i])) throw DataError("insert: non-finite coordinate in row " + std::to_string(i / d));
  }
  std::vector<PointId> ids;
  ids.reserve(coords.size() / d);
  for (std::size_t i = 0; i < coords.size(); i += d) ids.push_back(points_.add(coords.subspan(i, d)));
  report.inserted = ids.size();
  insert_into(*root_, std::move(ids), report);
  refresh_fingerprint();
  return report;
}

void BmkdTree::insert_into(Node& node, std::vector<PointId> ids, InsertReport& report) {
  node.size += ids.size();
  for (PointId id : ids) node.mbr.expand(points_[id]);

  if (node.is_leaf()) {
    node.points.insert(node.points.end(), ids.begin(), ids.end());
    if (node.points.size() > cfg_.c) {
      auto rebuilt = build_node(std::move(node.points), node.depth);
      node = std::move(*rebuilt);
      ++report.leaf_splits;
    } else {
      node.mbb = mbb_of(points_, node.points);
    }
    return;
  }

  std::vector<std::vector<PointId>> buckets(node.degree());
  for (PointId id : ids) {
    const double x = points_.coord(id, node.split_dim);
    node.sample_credit += cfg_.delta;
    if (node.sample_credit >= 1.0) {
      node.sample_credit -= 1.0;
      node.pending_inserted.push_back(x);
    }
    buckets[node.route(x)].push_back(id);
  }
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (!buckets[i].empty()) insert_into(*node.children[i], std::move(buckets[i]), report);
  }
  rebalance(node, report);
  refresh_volumes(node);
}

void BmkdTree::refresh_volumes(Node& node) const {
  const auto ids = collect_ids(node);
  node.mbb = mbb_of(points_, ids);
}

void BmkdTree::rebalance(Node& node, InsertReport& report) {
  const std::size_t max_rounds = node.degree() + 1;
  for (std::size_t round = 0; round < max_rounds && !node.is_leaf(); ++round) {
    const auto sizes = child_sizes_of(node);
    if (is_omega_balanced(sizes, cfg_.omega)) return;
    const std::size_t deg = sizes.size();
    std::size_t offending = 0;
    if (deg > 1) {
      const double bound = cfg_.omega * static_cast<double>(node.size) / static_cast<double>(deg - 1);
      while (offending < deg && static_cast<double>(sizes[offending]) < bound) ++offending;
    }
    auto [i0, i1] = select_rebuild_range(sizes, offending, cfg_.omega);
    if (round + 1 == max_rounds) {
      // Partial rebuilds have not settled the node; re-split all of it.
      i0 = 0;
      i1 = deg - 1;
    }
    RebuildEvent ev;
    ev.depth = node.depth;
    ev.degree = deg;
    ev.offending_child = offending;
    ev.i0 = i0;
    ev.i1 = i1;
    ev.full_range = (i0 == 0 && i1 + 1 == deg);
    ev.scapegoat_points = node.size;
    ev.selective_points = std::accumulate(sizes.begin() + static_cast<std::ptrdiff_t>(i0),
                                          sizes.begin() + static_cast<std::ptrdiff_t>(i1 + 1), std::size_t{0});
    report.rebuilds.push_back(ev);
    rebuild_children(node, i0, i1);
    if (ev.full_range) return;
  }
}

void BmkdTree::rebuild_range(Node& node, std::size_t i0, std::size_t i1) {
  rebuild_children(node, i0, i1);
  refresh_fingerprint();
}

void BmkdTree::rebuild_children(Node& node, std::size_t i0, std::size_t i1) {
  if (node.is_leaf()) throw UsageError("rebuild_range: node is a leaf");
  const std::size_t deg = node.degree();
  if (i0 > i1 || i1 >= deg) throw UsageError("rebuild_range: invalid child range");
  const bool full = (i0 == 0 && i1 + 1 == deg);

  std::vector<PointId> ids;
  std::size_t below = 0;
  for (std::size_t j = 0; j < i0; ++j) below += node.children[j]->size;
  for (std::size_t j = i0; j <= i1; ++j) {
    auto part = collect_ids(*node.children[j]);
    ids.insert(ids.end(), part.begin(), part.end());
  }

  if (node.model && !node.pending_inserted.empty()) {
    node.model = update_incremental(*node.model, node.pending_inserted, {});
  }
  node.pending_inserted.clear();

  const std::size_t sd = node.split_dim;
  const std::vector<double> values = dim_values(points_, ids, sd);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    if (full) {
      // Nothing separates on this dimension; start the node over.
      auto rebuilt = build_node(std::move(ids), node.depth);
      node = std::move(*rebuilt);
      return;
    }
    // The range collapses into one child.
    auto child = build_node(std::move(ids), node.depth + 1);
    node.children.erase(node.children.begin() + static_cast<std::ptrdiff_t>(i0 + 1),
                        node.children.begin() + static_cast<std::ptrdiff_t>(i1 + 1));
    node.children[i0] = std::move(child);
    node.pivots.erase(node.pivots.begin() + static_cast<std::ptrdiff_t>(i0),
                      node.pivots.begin() + static_cast<std::ptrdiff_t>(i1));
    return;
  }

  const std::size_t k = full ? t_ : i1 - i0 + 1;
  if (k == 1) {
    node.children[i0] = build_node(std::move(ids), node.depth + 1);
    return;
  }
  const std::size_t count = ids.size();
  const double total = static_cast<double>(node.size);
  std::vector<QuantileTarget> targets;
  for (std::size_t j = 1; j < k; ++j) {
    const double centre = (static_cast<double>(below) + static_cast<double>(j * count) / static_cast<double>(k)) / total;
    targets.push_back({centre, pivot_rank(j, count, k)});
  }
  std::vector<double> chosen;
  if (node.model) {
    // The range covers only part of the node's distribution, so the window
    // scales with the range's share of the node.
    const double share = static_cast<double>(count) / total;
    const double cap = share;
    chosen = select_by_model(values, *node.model, targets,
                             std::min(cfg_.kappa, 1.0 / static_cast<double>(k)) * share, cap);
  } else {
    chosen = choose_pivots(values, nullptr, targets, k);
  }
  Split split = split_by_pivots(points_, ids, sd, std::move(chosen));
  if (split.buckets.size() < 2) split = split_by_pivots(points_, ids, sd, {below_max(values)});
  if (full) rebalance_split(split, ids, sd, values, points_, t_, cfg_.omega);

  std::vector<std::unique_ptr<Node>> fresh;
  for (auto& bucket : split.buckets) fresh.push_back(build_node(std::move(bucket), node.depth + 1));

  std::vector<std::unique_ptr<Node>> children;
  std::vector<double> pivots;
  for (std::size_t j = 0; j < i0; ++j) {
    children.push_back(std::move(node.children[j]));
    pivots.push_back(node.pivots[j]);
  }
  for (auto& ch : fresh) children.push_back(std::move(ch));
  pivots.insert(pivots.end(), split.pivots.begin(), split.pivots.end());
  for (std::size_t j = i1 + 1; j < deg; ++j) {
    pivots.push_back(node.pivots[j - 1]);
    children.push_back(std::move(node.children[j]));
  }
  node.children = std::move(children);
  node.pivots = std::move(pivots);
}

// ---------------------------------------------------------------------------
// Paths and summaries

LeafPathCode BmkdTree::leaf_path(Coords q) const {
  if (q.size() != dim()) throw UsageError("leaf_path: dimension mismatch");
  LeafPathCode code;
  for (const Node* cur = root_.get(); cur != nullptr && !cur->is_leaf();) {
    const std::size_t i = cur->route(q[cur->split_dim]);
    code.push_back(static_cast<std::uint32_t>(i));
    cur = cur->children[i].get();
  }
  return code;
}

namespace {

template <typename Visit>
void for_each_leaf(const Node& node, LeafPathCode& path, Visit&& visit) {
  if (node.is_leaf()) {
    visit(node, path);
    return;
  }
  for (std::size_t i = 0; i < node.children.size(); ++i) {
    path.push_back(static_cast<std::uint32_t>(i));
    for_each_leaf(*node.children[i], path, visit);
    path.pop_back();
  }
}

}  // namespace

std::vector<LeafPathCode> BmkdTree::leaf_codes() const {
  std::vector<LeafPathCode> out;
  if (!root_) return out;
  LeafPathCode path;
  for_each_leaf(*root_, path, [&out](const Node&, const LeafPathCode& p) { out.push_back(p); });
  return out;
}

std::map<std::uint32_t, std::size_t> BmkdTree::leaf_depth_histogram() const {
  std::map<std::uint32_t, std::size_t> hist;
  if (!root_) return hist;
  LeafPathCode path;
  for_each_leaf(*root_, path, [&hist](const Node& leaf, const LeafPathCode&) { ++hist[leaf.depth]; });
  return hist;
}

std::size_t BmkdTree::height() const {
  const auto hist = leaf_depth_histogram();
  return hist.empty() ? 0 : hist.rbegin()->first;
}

double aepl_empirical(const BmkdTree& tree) {
  if (tree.root() == nullptr || tree.size() == 0) return 0.0;
  double total = 0.0;
  std::vector<std::pair<const Node*, std::size_t>> stack{{tree.root(), 0}};
  while (!stack.empty()) {
    const auto [node, cost] = stack.back();
    stack.pop_back();
    if (node->is_leaf()) {
      total += static_cast<double>(cost) * static_cast<double>(node->points.size());
      continue;
    }
    const std::size_t deg = node->degree();
    for (std::size_t i = 0; i < deg; ++i) {
      const std::size_t step = (i + 1 < deg) ? i + 1 : deg - 1;
      stack.emplace_back(node->children[i].get(), cost + step);
    }
  }
  return total / static_cast<double>(tree.size());
}

// ---------------------------------------------------------------------------
// Audit

namespace {

class Auditor {
 public:
  Auditor(const BmkdTree& tree, AuditReport& report)
      : tree_(tree), pts_(tree.points()), report_(report), seen_(tree.size(), false) {}

  std::vector<PointId> visit(const Node& node, const std::string& where) {
    ++report_.nodes;
    std::vector<PointId> ids;
    if (node.is_leaf()) {
      ++report_.leaves;
      ids = node.points;
      if (ids.size() > tree_.config().c) {
        if (all_identical(ids)) {
          ++report_.oversized_duplicate_leaves;
        } else {
          fail(where, "leaf holds " + std::to_string(ids.size()) + " points, capacity " +
                          std::to_string(tree_.config().c));
        }
      }
      for (PointId id : ids) {
        if (id >= seen_.size()) {
          fail(where, "unknown point id " + std::to_string(id));
        } else if (seen_[id]) {
          fail(where, "point id " + std::to_string(id) + " stored twice");
        } else {
          seen_[id] = true;
        }
      }
    } else {
      if (node.pivots.size() + 1 != node.children.size()) fail(where, "pivot count does not match degree");
      for (std::size_t i = 1; i < node.pivots.size(); ++i) {
        if (!(node.pivots[i - 1] < node.pivots[i])) fail(where, "pivots not strictly ascending");
      }
      if (node.split_dim >= pts_.dim()) fail(where, "split dimension out of range");
      std::size_t sum = 0;
      for (std::size_t i = 0; i < node.children.size(); ++i) {
        const Node& ch = *node.children[i];
        if (ch.depth != node.depth + 1) fail(where, "child depth is not parent depth + 1");
        auto sub = visit(ch, where + "/" + std::to_string(i));
        sum += ch.size;
        for (PointId id : sub) {
          if (id >= pts_.size()) continue;
          const double x = pts_.coord(id, node.split_dim);
          const bool left_ok = i == 0 || i - 1 >= node.pivots.size() || x > node.pivots[i - 1];
          const bool right_ok = i >= node.pivots.size() || x <= node.pivots[i];
          if (!left_ok || !right_ok) {
            fail(where, "point " + std::to_string(id) + " outside the pivot interval of child " + std::to_string(i));
            break;
          }
        }
        ids.insert(ids.end(), sub.begin(), sub.end());
      }
      if (sum != node.size) fail(where, "cached size differs from the sum of child sizes");
      if (!is_omega_balanced(node, tree_.config().omega)) {
        std::vector<double> values;
        values.reserve(ids.size());
        for (PointId id : ids) {
          if (id < pts_.size()) values.push_back(pts_.coord(id, node.split_dim));
        }
        if (balanced_split_pivots(std::move(values), tree_.t(), tree_.config().omega)) {
          fail(where, "node is not omega-balanced");
        } else {
          ++report_.unbalanceable_nodes;
        }
      }
    }
    if (ids.size() != node.size) fail(where, "cached size differs from stored point count");
    check_volumes(node, ids, where);
    return ids;
  }

  void finish() {
    std::size_t missing = 0;
    for (bool s : seen_) missing += s ? 0 : 1;
    if (missing != 0) report_.violations.push_back(std::to_string(missing) + " points are not reachable");
  }

 private:
  void fail(const std::string& where, const std::string& what) {
    report_.violations.push_back((where.empty() ? std::string("root") : where) + ": " + what);
  }

  bool all_identical(std::span<const PointId> ids) const {
    for (PointId id : ids) {
      if (id >= pts_.size()) return false;
      for (std::size_t j = 0; j < pts_.dim(); ++j) {
        if (pts_.coord(id, j) != pts_.coord(ids.front(), j)) return false;
      }
    }
    return true;
  }

  void check_volumes(const Node& node, std::span<const PointId> ids, const std::string& where) {
    std::vector<PointId> valid;
    for (PointId id : ids) {
      if (id < pts_.size()) valid.push_back(id);
    }
    if (valid.empty()) return;
    if (!(mbr_of(pts_, valid) == node.mbr)) fail(where, "MBR is not the exact bounding rectangle");
    if (node.mbb.center.size() != pts_.dim()) {
      fail(where, "MBB has wrong dimension");
      return;
    }
    for (PointId id : valid) {
      if (squared_distance(pts_[id].data(), node.mbb.center.data(), pts_.dim()) >
          node.mbb.radius * node.mbb.radius) {
        if (dist(pts_[id], node.mbb.center) > node.mbb.radius) {
          fail(where, "MBB does not enclose point " + std::to_string(id));
          return;
        }
      }
    }
  }

  const BmkdTree& tree_;
  const PointSet& pts_;
  AuditReport& report_;
  std::vector<bool> seen_;
};

}  // namespace

AuditReport audit(const BmkdTree& tree) {
  AuditReport report;
  if (tree.root() == nullptr) {
    if (tree.size() != 0) report.violations.push_back("points stored without a root node");
    return report;
  }
  Auditor auditor(tree, report);
  auditor.visit(*tree.root(), "");
  auditor.finish();
  return report;
}

// ---------------------------------------------------------------------------
// Snapshot I/O (little-endian regardless of host order)

namespace {

constexpr char kMagic[4] = {'U', 'N', 'I', 'S'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(v, 4); }
  void u64(std::uint64_t v) { raw(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }

 private:
  void raw(std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    out_.write(buf, bytes);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t count) {
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t count(std::uint64_t limit, const char* what) {
    const std::uint64_t n = u64();
    if (n > limit) throw DataError(std::string("snapshot: implausible ") + what + " count");
    return static_cast<std::size_t>(n);
  }

 private:
  std::uint64_t raw(int bytes) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), bytes);
    if (in_.gcount() != bytes) throw DataError("snapshot: unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
};

constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 40;

void write_node(Writer& w, const Node& node, std::size_t d) {
  w.u8(node.is_leaf() ? 0 : 1);
  w.u32(node.depth);
  w.u32(node.split_dim);
  w.u64(node.size);
  w.f64s(node.mbr.lo);
  w.f64s(node.mbr.hi);
  w.f64s(node.mbb.center);
  w.f64(node.mbb.radius);
  (void)d;
  if (node.is_leaf()) {
    w.u64(node.points.size());
    for (PointId id : node.points) w.u64(id);
    return;
  }
  w.u64(node.children.size());
  w.f64s(node.pivots);
  w.u8(node.model ? 1 : 0);
  if (node.model) {
    w.u64(node.model->l());
    w.u64(node.model->sample().size());
    for (const auto& e : node.model->sample()) {
      w.f64(e.x);
      w.f64(e.u);
    }
  }
  w.u64(node.pending_inserted.size());
  w.f64s(node.pending_inserted);
  w.f64(node.sample_credit);
  for (const auto& ch : node.children) write_node(w, *ch, d);
}

std::unique_ptr<Node> read_node(Reader& r, std::size_t d, std::size_t n_points) {
  auto node = std::make_unique<Node>();
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw DataError("snapshot: bad node kind");
  node->depth = r.u32();
  node->split_dim = r.u32();
  if (node->split_dim >= d) throw DataError("snapshot: split dimension out of range");
  node->size = static_cast<std::size_t>(r.u64());
  node->mbr.lo = r.f64s(d);
  node->mbr.hi = r.f64s(d);
  node->mbb.center = r.f64s(d);
  node->mbb.radius = r.f64();
  if (kind == 0) {
    const std::size_t count = r.count(n_points, "leaf point");
    node->points.resize(count);
    for (auto& id : node->points) {
      id = r.u64();
      if (id >= n_points) throw DataError("snapshot: point id out of range");
    }
    return node;
  }
  const std::size_t deg = r.count(kMaxCount, "child");
  if (deg == 0) throw DataError("snapshot: non-leaf without children");
  node->pivots = r.f64s(deg - 1);
  if (r.u8() != 0) {
    const std::size_t l = r.count(kMaxCount, "sub-model");
    const std::size_t m = r.count(kMaxCount, "model sample");
    std::vector<SampleEntry> sample(m);
    for (auto& e : sample) {
      e.x = r.f64();
      e.u = r.f64();
    }
    node->model = CdfModel::from_sample(std::move(sample), l);
  }
  node->pending_inserted = r.f64s(r.count(kMaxCount, "pending value"));
  node->sample_credit = r.f64();
  for (std::size_t i = 0; i < deg; ++i) node->children.push_back(read_node(r, d, n_points));
  return node;
}

}  // namespace

void BmkdTree::save(std::ostream& out) const {
  if (!root_) throw UsageError("save: tree has not been built");
  Writer w(out);
  out.write(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dim()));
  w.u64(size());
  w.u32(static_cast<std::uint32_t>(cfg_.c));
  w.u32(static_cast<std::uint32_t>(t_));
  w.f64(cfg_.delta);
  w.u64(cfg_.l);
  w.f64(cfg_.kappa);
  w.f64(cfg_.omega);
  w.u64(cfg_.t);
  w.u64(cfg_.seed);
  w.u8(static_cast<std::uint8_t>(cfg_.pivot_method));
  w.u8(cfg_.t_auto ? 1 : 0);
  w.u64(cfg_.t_max);
  w.u64(seed_counter_);
  w.f64s(points_.raw());
  write_node(w, *root_, dim());
  if (!out) throw DataError("save: write failed");
}

BmkdTree BmkdTree::load(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError("snapshot: bad magic");
  Reader r(in);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw DataError("snapshot: unsupported version " + std::to_string(version));
  BmkdTree tree;
  const std::size_t d = r.u32();
  if (d == 0) throw DataError("snapshot: zero dimension");
  const std::size_t n = r.count(kMaxCount, "point");
  tree.cfg_.c = r.u32();
  tree.t_ = r.u32();
  tree.cfg_.delta = r.f64();
  tree.cfg_.l = static_cast<std::size_t>(r.u64());
  tree.cfg_.kappa = r.f64();
  tree.cfg_.omega = r.f64();
  tree.cfg_.t = static_cast<std::size_t>(r.u64());
  tree.cfg_.seed = r.u64();
  const std::uint8_t method = r.u8();
  if (method > 1) throw DataError("snapshot: bad pivot method");
  tree.cfg_.pivot_method = static_cast<PivotMethod>(method);
  tree.cfg_.t_auto = r.u8() != 0;
  tree.cfg_.t_max = static_cast<std::size_t>(r.u64());
  tree.seed_counter_ = r.u64();
  try {
    tree.cfg_.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("snapshot: invalid configuration: ") + e.what());
  }
  tree.points_ = PointSet(d, r.f64s(n * d));
  tree.root_ = read_node(r, d, n);
  tree.refresh_fingerprint();
  return tree;
}

void BmkdTree::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  save(out);
}

BmkdTree BmkdTree::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load(in);
}

}  // namespace unis
