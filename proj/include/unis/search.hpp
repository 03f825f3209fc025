#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unis/bmkd_tree.hpp"
#include "unis/geometry.hpp"

namespace unis {

/// Traversal order x bounding volume. The enum order is the label order used
/// by the selector and in every serialized artifact.
enum class Strategy : std::uint8_t { r_dfs = 0, r_bfs = 1, b_dfs = 2, b_bfs = 3 };

inline constexpr std::array<Strategy, 4> kAllStrategies{Strategy::r_dfs, Strategy::r_bfs, Strategy::b_dfs,
                                                        Strategy::b_bfs};

[[nodiscard]] constexpr bool is_dfs(Strategy s) noexcept { return s == Strategy::r_dfs || s == Strategy::b_dfs; }
[[nodiscard]] constexpr bool uses_mbr(Strategy s) noexcept { return s == Strategy::r_dfs || s == Strategy::r_bfs; }
[[nodiscard]] std::string_view strategy_name(Strategy s) noexcept;
/// Accepts "rdfs", "r_dfs", "R_DFS" and similar spellings. Throws UsageError otherwise.
[[nodiscard]] Strategy parse_strategy(std::string_view name);

struct Hit {
  PointId id = 0;
  double distance = 0.0;
  bool operator==(const Hit&) const = default;
};

/// Total order used everywhere results are ranked: distance, then id.
[[nodiscard]] inline bool hit_less(const Hit& a, const Hit& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

/// Keeps the k best hits under hit_less; the worst retained hit sits on top.
class BoundedMaxQueue {
 public:
  explicit BoundedMaxQueue(std::size_t k);
  /// Returns true if the hit was retained.
  bool push(const Hit& h);
  /// Current k-th best distance, or +inf while fewer than k hits are held.
  [[nodiscard]] double bound() const noexcept;
  [[nodiscard]] std::size_t size() const noexcept { return heap_.size(); }
  [[nodiscard]] bool full() const noexcept { return heap_.size() >= k_; }
  /// Retained hits in ascending hit_less order.
  [[nodiscard]] std::vector<Hit> sorted() const;

 private:
  std::size_t k_;
  std::vector<Hit> heap_;
};

struct SearchStats {
  std::size_t point_accesses = 0;
  std::size_t nodes_visited = 0;
  std::size_t nodes_pruned = 0;
  /// When non-null, every pruned node is appended here.
  std::vector<const Node*>* pruned_nodes = nullptr;
};

struct SearchOptions {
  SearchStats* stats = nullptr;
  /// Abandon the query once this instant has passed (checked every 64 node visits).
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

struct KnnResult {
  std::vector<Hit> hits;  // ascending by (distance, id)
  bool aborted = false;
};

struct RadiusResult {
  std::vector<Hit> hits;  // ascending by (distance, id)
  bool aborted = false;
  [[nodiscard]] std::vector<PointId> ids() const;
};

/// Exact k nearest neighbours. k larger than the tree returns every point.
[[nodiscard]] KnnResult knn(const BmkdTree& tree, Coords q, std::size_t k, Strategy strategy,
                            const SearchOptions& opts = {});

/// Every point with dist(p, q) <= r.
[[nodiscard]] RadiusResult radius_search(const BmkdTree& tree, Coords q, double r, Strategy strategy,
                                         const SearchOptions& opts = {});

/// Reference scans over a bare point set.
[[nodiscard]] std::vector<Hit> linear_knn(const PointSet& pts, Coords q, std::size_t k);
[[nodiscard]] std::vector<Hit> linear_radius(const PointSet& pts, Coords q, double r);

}  // namespace unis
