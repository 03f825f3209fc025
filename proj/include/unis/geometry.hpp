#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace unis {

using PointId = std::uint64_t;
using Coords = std::span<const double>;

/// Flat, append-only store of d-dimensional points. A point's id is its
/// insertion index, so ids are unique and never reused.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::size_t dim);
  /// Takes ownership of row-major coordinates; size must be a multiple of dim.
  PointSet(std::size_t dim, std::vector<double> coords);

  /// Appends one point and returns its id. Throws DataError on NaN/inf and
  /// UsageError on a dimension mismatch.
  PointId add(Coords coords);

  [[nodiscard]] Coords operator[](PointId id) const {
    return {coords_.data() + id * dim_, dim_};
  }
  [[nodiscard]] double coord(PointId id, std::size_t j) const { return coords_[id * dim_ + j]; }

  [[nodiscard]] std::size_t size() const noexcept { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] bool empty() const noexcept { return coords_.empty(); }
  [[nodiscard]] const std::vector<double>& raw() const noexcept { return coords_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
};

/// Axis-aligned minimum bounding rectangle (lo = bp, hi = tp).
struct Mbr {
  std::vector<double> lo;
  std::vector<double> hi;

  static Mbr of_point(Coords p);
  void expand(Coords p);
  void expand(const Mbr& other);
  [[nodiscard]] bool contains(Coords p) const;
  [[nodiscard]] std::size_t dim() const noexcept { return lo.size(); }
  bool operator==(const Mbr&) const = default;
};

/// Bounding ball centred at the centroid of the enclosed points.
struct Mbb {
  std::vector<double> center;
  double radius = 0.0;
  bool operator==(const Mbb&) const = default;
};

/// Sum of squared coordinate differences; no dimension check.
[[nodiscard]] inline double squared_distance(const double* a, const double* b, std::size_t d) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

/// Euclidean distance. Throws UsageError when dimensions differ.
[[nodiscard]] double dist(Coords a, Coords b);

/// The rectangles share at least one point (touching counts).
[[nodiscard]] bool mbr_intersects(const Mbr& a, const Mbr& b);

/// Ball-ball pruning: true iff dist(b.center, q) > b.radius + r (strict).
/// The comparison carries a guard of a few ulps per dimension, so a ball that
/// holds a point whose computed distance to q is at most r is never pruned.
[[nodiscard]] bool ball_ball_prunable(const Mbb& b, Coords q, double r);

/// Distance from q to the nearest point of the rectangle; 0 iff q is inside.
[[nodiscard]] double min_dist_point_mbr(Coords q, const Mbr& r);

/// Lower bound on the distance from q to any point of the ball.
[[nodiscard]] double min_dist_point_mbb(Coords q, const Mbb& b);

/// The rectangle circumscribing the ball (q, r).
[[nodiscard]] Mbr query_mbr(Coords q, double r);

/// Same answer as !mbr_intersects(query_mbr(q, r), m) in exact arithmetic, but
/// measured per axis as the gap from q to m. Forming q - r and q + r rounds and
/// can exclude a point whose computed distance is exactly r.
[[nodiscard]] bool query_box_misses(Coords q, double r, const Mbr& m);

/// Bounding volumes of an explicit point list.
[[nodiscard]] Mbr mbr_of(const PointSet& pts, std::span<const PointId> ids);
[[nodiscard]] Mbb mbb_of(const PointSet& pts, std::span<const PointId> ids);
/// Both volumes in two passes over the points; equal to mbr_of and mbb_of.
void bounding_volumes(const PointSet& pts, std::span<const PointId> ids, Mbr& mbr, Mbb& mbb);

}  // namespace unis
