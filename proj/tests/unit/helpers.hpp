#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unis/geometry.hpp"
#include "unis/rng.hpp"

namespace unis::test {

inline PointSet random_points(std::size_t n, std::size_t d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> raw(n * d);
  for (double& v : raw) v = rng.uniform(lo, hi);
  return PointSet(d, std::move(raw));
}

/// Points on a coarse integer grid, so ties in distance and coordinates are common.
inline PointSet grid_points(std::size_t n, std::size_t d, std::uint64_t seed, int cells = 6) {
  Rng rng(seed);
  std::vector<double> raw(n * d);
  for (double& v : raw) v = static_cast<double>(rng.below(static_cast<std::uint64_t>(cells)));
  return PointSet(d, std::move(raw));
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

inline std::vector<double> random_query(std::size_t d, Rng& rng, double lo = -0.1, double hi = 1.1) {
  std::vector<double> q(d);
  for (double& v : q) v = rng.uniform(lo, hi);
  return q;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("unis_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace unis::test
