#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>

#include "unis/geometry.hpp"

namespace unis {

// Text format: one point per line, comma-separated decimals, optional header
// line. Binary format: "UPTS", u32 version, u64 n, u32 d, n*d little-endian f64.

PointSet parse_csv(std::istream& in, const std::string& source = "<stream>");
PointSet read_csv(const std::string& path);
void write_csv(const std::string& path, const PointSet& pts);

PointSet read_bin(const std::string& path);
void write_bin(const std::string& path, const PointSet& pts);

/// Picks the reader from the file's leading bytes.
PointSet read_dataset(const std::string& path);

enum class Distribution { uniform, gaussian, clustered };
Distribution parse_distribution(std::string_view name);

/// Synthetic data: uniform on [0,1)^d, standard normal, or a mixture of 16
/// tight Gaussian clusters with centres uniform on [0,1)^d.
PointSet generate(Distribution dist, std::size_t n, std::size_t d, std::uint64_t seed);

}  // namespace unis
