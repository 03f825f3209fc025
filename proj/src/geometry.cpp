#include "unis/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "unis/errors.hpp"

namespace unis {

namespace {

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw UsageError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

}  // namespace

PointSet::PointSet(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw UsageError("PointSet: dimension must be positive");
}

PointSet::PointSet(std::size_t dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
  if (dim == 0) throw UsageError("PointSet: dimension must be positive");
  if (coords_.size() % dim != 0) throw UsageError("PointSet: coordinate count is not a multiple of dim");
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    if (!std::isfinite(coords_[i])) {
      throw DataError("non-finite coordinate in row " + std::to_string(i / dim));
    }
  }
}

PointId PointSet::add(Coords coords) {
  require_same_dim(coords.size(), dim_, "PointSet::add");
  for (double v : coords) {
    if (!std::isfinite(v)) throw DataError("non-finite coordinate in row " + std::to_string(size()));
  }
  const PointId id = size();
  coords_.insert(coords_.end(), coords.begin(), coords.end());
  return id;
}

Mbr Mbr::of_point(Coords p) {
  return Mbr{{p.begin(), p.end()}, {p.begin(), p.end()}};
}

void Mbr::expand(Coords p) {
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::min(lo[i], p[i]);
    hi[i] = std::max(hi[i], p[i]);
  }
}

void Mbr::expand(const Mbr& other) {
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::min(lo[i], other.lo[i]);
    hi[i] = std::max(hi[i], other.hi[i]);
  }
}

bool Mbr::contains(Coords p) const {
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (p[i] < lo[i] || p[i] > hi[i]) return false;
  }
  return true;
}

double dist(Coords a, Coords b) {
  require_same_dim(a.size(), b.size(), "dist");
  return std::sqrt(squared_distance(a.data(), b.data(), a.size()));
}

bool mbr_intersects(const Mbr& a, const Mbr& b) {
  require_same_dim(a.dim(), b.dim(), "mbr_intersects");
  for (std::size_t i = 0; i < a.dim(); ++i) {
    if (std::max(a.lo[i], b.lo[i]) > std::min(a.hi[i], b.hi[i])) return false;
  }
  return true;
}

bool ball_ball_prunable(const Mbb& b, Coords q, double r) {
  require_same_dim(b.center.size(), q.size(), "ball_ball_prunable");
  const double centre_dist = std::sqrt(squared_distance(b.center.data(), q.data(), q.size()));
  const double guard = 4.0 * static_cast<double>(q.size() + 2) * std::numeric_limits<double>::epsilon() *
                       (centre_dist + b.radius + r);
  return centre_dist - guard > b.radius + r;
}

double min_dist_point_mbr(Coords q, const Mbr& r) {
  require_same_dim(q.size(), r.dim(), "min_dist_point_mbr");
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double clamped = std::clamp(q[i], r.lo[i], r.hi[i]);
    const double diff = q[i] - clamped;
    s += diff * diff;
  }
  return std::sqrt(s);
}

double min_dist_point_mbb(Coords q, const Mbb& b) {
  require_same_dim(q.size(), b.center.size(), "min_dist_point_mbb");
  return std::max(0.0, std::sqrt(squared_distance(b.center.data(), q.data(), q.size())) - b.radius);
}

Mbr query_mbr(Coords q, double r) {
  Mbr m{std::vector<double>(q.size()), std::vector<double>(q.size())};
  for (std::size_t i = 0; i < q.size(); ++i) {
    m.lo[i] = q[i] - r;
    m.hi[i] = q[i] + r;
  }
  return m;
}

Mbr mbr_of(const PointSet& pts, std::span<const PointId> ids) {
  if (ids.empty()) throw UsageError("mbr_of: empty point list");
  Mbr m = Mbr::of_point(pts[ids.front()]);
  for (PointId id : ids.subspan(1)) m.expand(pts[id]);
  return m;
}

Mbb mbb_of(const PointSet& pts, std::span<const PointId> ids) {
  if (ids.empty()) throw UsageError("mbb_of: empty point list");
  const std::size_t d = pts.dim();
  Mbb b{std::vector<double>(d, 0.0), 0.0};
  for (PointId id : ids) {
    const Coords p = pts[id];
    for (std::size_t j = 0; j < d; ++j) b.center[j] += p[j];
  }
  for (double& c : b.center) c /= static_cast<double>(ids.size());
  double max_sq = 0.0;
  for (PointId id : ids) max_sq = std::max(max_sq, squared_distance(pts[id].data(), b.center.data(), d));
  b.radius = std::sqrt(max_sq);
  return b;
}

bool query_box_misses(Coords q, double r, const Mbr& m) {
  require_same_dim(q.size(), m.dim(), "query_box_misses");
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (m.lo[i] - q[i] > r || q[i] - m.hi[i] > r) return true;
  }
  return false;
}

void bounding_volumes(const PointSet& pts, std::span<const PointId> ids, Mbr& mbr, Mbb& mbb) {
  if (ids.empty()) throw UsageError("bounding_volumes: empty point list");
  const std::size_t d = pts.dim();
  const double* base = pts.raw().data();
  const double* first = base + ids.front() * d;
  mbr.lo.assign(first, first + d);
  mbr.hi.assign(first, first + d);
  mbb.center.assign(d, 0.0);
  double* lo = mbr.lo.data();
  double* hi = mbr.hi.data();
  double* centre = mbb.center.data();
  for (PointId id : ids) {
    const double* p = base + id * d;
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], p[j]);
      hi[j] = std::max(hi[j], p[j]);
      centre[j] += p[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) centre[j] /= static_cast<double>(ids.size());
  double max_sq = 0.0;
  for (PointId id : ids) max_sq = std::max(max_sq, squared_distance(base + id * d, centre, d));
  mbb.radius = std::sqrt(max_sq);
}

}  // namespace unis
