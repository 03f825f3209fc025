#include "unis/search.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <limits>

#include "unis/errors.hpp"

namespace unis {

std::string_view strategy_name(Strategy s) noexcept {
  switch (s) {
    case Strategy::r_dfs:
      return "R_DFS";
    case Strategy::r_bfs:
      return "R_BFS";
    case Strategy::b_dfs:
      return "B_DFS";
    case Strategy::b_bfs:
      return "B_BFS";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  std::string key;
  for (char ch : name) {
    if (ch != '_' && ch != '-') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (key == "rdfs") return Strategy::r_dfs;
  if (key == "rbfs") return Strategy::r_bfs;
  if (key == "bdfs") return Strategy::b_dfs;
  if (key == "bbfs") return Strategy::b_bfs;
  throw UsageError("unknown strategy '" + std::string(name) + "'");
}

BoundedMaxQueue::BoundedMaxQueue(std::size_t k) : k_(k) {
  if (k == 0) throw UsageError("k must be at least 1");
}

bool BoundedMaxQueue::push(const Hit& h) {
  if (heap_.size() < k_) {
    heap_.push_back(h);
    std::push_heap(heap_.begin(), heap_.end(), hit_less);
    return true;
  }
  if (!hit_less(h, heap_.front())) return false;
  std::pop_heap(heap_.begin(), heap_.end(), hit_less);
  heap_.back() = h;
  std::push_heap(heap_.begin(), heap_.end(), hit_less);
  return true;
}

double BoundedMaxQueue::bound() const noexcept {
  return full() ? heap_.front().distance : std::numeric_limits<double>::infinity();
}

std::vector<Hit> BoundedMaxQueue::sorted() const {
  std::vector<Hit> out = heap_;
  std::sort(out.begin(), out.end(), hit_less);
  return out;
}

std::vector<PointId> RadiusResult::ids() const {
  std::vector<PointId> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.id);
  return out;
}

namespace {

// Shared traversal skeleton. `Prune` decides whether a node can be skipped,
// `Scan` consumes a leaf, and `bound` is read fresh at each node so pruning
// tightens as results accumulate.
class Traversal {
 public:
  Traversal(const BmkdTree& tree, Coords q, Strategy strategy, const SearchOptions& opts)
      : tree_(tree), q_(q), strategy_(strategy), opts_(opts) {}

  template <typename Prune, typename Scan>
  bool run(Prune&& prune, Scan&& scan) {
    if (tree_.root() == nullptr) return true;
    if (is_dfs(strategy_)) return dfs(*tree_.root(), prune, scan);
    std::deque<const Node*> fifo{tree_.root()};
    while (!fifo.empty()) {
      const Node* node = fifo.front();
      fifo.pop_front();
      if (!enter(*node, prune)) {
        if (aborted_) return false;
        continue;
      }
      if (node->is_leaf()) {
        scan(*node);
      } else {
        for (const auto& ch : node->children) fifo.push_back(ch.get());
      }
    }
    return true;
  }

  [[nodiscard]] bool aborted() const noexcept { return aborted_; }

 private:
  template <typename Prune>
  bool enter(const Node& node, Prune& prune) {
    if (opts_.stats) ++opts_.stats->nodes_visited;
    if (opts_.deadline && (++visits_ & 63U) == 0 && std::chrono::steady_clock::now() > *opts_.deadline) {
      aborted_ = true;
      return false;
    }
    if (prune(node)) {
      if (opts_.stats) {
        ++opts_.stats->nodes_pruned;
        if (opts_.stats->pruned_nodes) opts_.stats->pruned_nodes->push_back(&node);
      }
      return false;
    }
    return true;
  }

  template <typename Prune, typename Scan>
  bool dfs(const Node& node, Prune& prune, Scan& scan) {
    if (!enter(node, prune)) return !aborted_;
    if (node.is_leaf()) {
      scan(node);
      return true;
    }
    // Nearest child first, measured with the strategy's own bounding volume.
    const std::size_t deg = node.children.size();
    std::vector<std::pair<double, std::size_t>> order(deg);
    for (std::size_t i = 0; i < deg; ++i) {
      const Node& ch = *node.children[i];
      order[i] = {uses_mbr(strategy_) ? min_dist_point_mbr(q_, ch.mbr) : min_dist_point_mbb(q_, ch.mbb), i};
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [key, i] : order) {
      if (!dfs(*node.children[i], prune, scan)) return false;
    }
    return true;
  }

  const BmkdTree& tree_;
  Coords q_;
  Strategy strategy_;
  const SearchOptions& opts_;
  std::uint32_t visits_ = 0;
  bool aborted_ = false;
};

void check_query(const BmkdTree& tree, Coords q) {
  if (q.size() != tree.dim()) {
    throw UsageError("query has dimension " + std::to_string(q.size()) + ", tree has " + std::to_string(tree.dim()));
  }
  for (double v : q) {
    if (!std::isfinite(v)) throw DataError("query has a non-finite coordinate");
  }
}

}  // namespace

KnnResult knn(const BmkdTree& tree, Coords q, std::size_t k, Strategy strategy, const SearchOptions& opts) {
  check_query(tree, q);
  BoundedMaxQueue queue(k);
  const PointSet& pts = tree.points();
  const std::size_t d = pts.dim();

  auto prune = [&](const Node& node) {
    const double r = queue.bound();
    if (std::isinf(r)) return false;
    if (is_dfs(strategy)) return query_box_misses(q, r, node.mbr);
    if (uses_mbr(strategy)) return ball_ball_prunable(node.mbb, q, r);
    return min_dist_point_mbr(q, node.mbr) > r;
  };
  auto scan = [&](const Node& leaf) {
    for (PointId id : leaf.points) {
      queue.push({id, std::sqrt(squared_distance(pts[id].data(), q.data(), d))});
    }
    if (opts.stats) opts.stats->point_accesses += leaf.points.size();
  };

  Traversal walk(tree, q, strategy, opts);
  walk.run(prune, scan);
  return {queue.sorted(), walk.aborted()};
}

RadiusResult radius_search(const BmkdTree& tree, Coords q, double r, Strategy strategy, const SearchOptions& opts) {
  check_query(tree, q);
  if (!(r >= 0.0)) throw UsageError("radius must be non-negative");
  const PointSet& pts = tree.points();
  const std::size_t d = pts.dim();
  RadiusResult out;

  auto prune = [&](const Node& node) {
    if (is_dfs(strategy)) return ball_ball_prunable(node.mbb, q, r);
    return query_box_misses(q, r, node.mbr);
  };
  auto scan = [&](const Node& leaf) {
    for (PointId id : leaf.points) {
      const double dd = std::sqrt(squared_distance(pts[id].data(), q.data(), d));
      if (dd <= r) out.hits.push_back({id, dd});
    }
    if (opts.stats) opts.stats->point_accesses += leaf.points.size();
  };

  Traversal walk(tree, q, strategy, opts);
  walk.run(prune, scan);
  out.aborted = walk.aborted();
  std::sort(out.hits.begin(), out.hits.end(), hit_less);
  return out;
}

std::vector<Hit> linear_knn(const PointSet& pts, Coords q, std::size_t k) {
  std::vector<Hit> all;
  all.reserve(pts.size());
  for (PointId id = 0; id < pts.size(); ++id) all.push_back({id, std::sqrt(squared_distance(pts[id].data(), q.data(), q.size()))});
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), hit_less);
  all.resize(keep);
  return all;
}

std::vector<Hit> linear_radius(const PointSet& pts, Coords q, double r) {
  std::vector<Hit> out;
  for (PointId id = 0; id < pts.size(); ++id) {
    const double dd = std::sqrt(squared_distance(pts[id].data(), q.data(), q.size()));
    if (dd <= r) out.push_back({id, dd});
  }
  std::sort(out.begin(), out.end(), hit_less);
  return out;
}

}  // namespace unis
