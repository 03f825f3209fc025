#include "unis/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <vector>

#include "unis/errors.hpp"
#include "unis/rng.hpp"

namespace unis {

namespace {

constexpr char kMagic[4] = {'U', 'P', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Returns false when some field is not a number at all (a header candidate).
bool parse_row(std::string_view line, std::vector<double>& row) {
  row.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    const std::string_view field = trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    double v = 0.0;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (field.empty() || ec != std::errc() || ptr != end) return false;
    row.push_back(v);
    if (comma == std::string_view::npos) return true;
    start = comma + 1;
  }
}

}  // namespace

PointSet parse_csv(std::istream& in, const std::string& source) {
  std::vector<double> coords;
  std::vector<double> row;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::size_t data_rows = 0;
  bool seen_content = false;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const bool first_content = !seen_content;
    seen_content = true;
    if (!parse_row(text, row)) {
      if (first_content) continue;  // header
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed number");
    }
    if (dim == 0) dim = row.size();
    if (row.size() != dim) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) + " values, found " +
                      std::to_string(row.size()));
    }
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw DataError(source + ":" + std::to_string(line_no) + ": non-finite value in row " +
                        std::to_string(data_rows));
      }
    }
    coords.insert(coords.end(), row.begin(), row.end());
    ++data_rows;
  }
  if (dim == 0) throw DataError(source + ": no data rows");
  return PointSet(dim, std::move(coords));
}

PointSet read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_csv(in, path);
}

void write_csv(const std::string& path, const PointSet& pts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  char buf[32];
  for (PointId id = 0; id < pts.size(); ++id) {
    for (std::size_t j = 0; j < pts.dim(); ++j) {
      if (j) out.put(',');
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, pts.coord(id, j));
      out.write(buf, ptr - buf);
    }
    out.put('\n');
  }
  if (!out) throw DataError("write failed: " + path);
}

namespace {

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(buf, bytes);
}

std::uint64_t get_le(std::istream& in, int bytes, const std::string& path) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), bytes);
  if (in.gcount() != bytes) throw DataError(path + ": truncated binary dataset");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

PointSet read_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError(path + ": bad magic");
  const auto version = static_cast<std::uint32_t>(get_le(in, 4, path));
  if (version != kVersion) throw DataError(path + ": unsupported version " + std::to_string(version));
  const std::uint64_t n = get_le(in, 8, path);
  const auto d = static_cast<std::uint32_t>(get_le(in, 4, path));
  if (d == 0) throw DataError(path + ": zero dimension");
  if (n > (std::uint64_t{1} << 40) / d) throw DataError(path + ": implausible point count");
  std::vector<double> coords(static_cast<std::size_t>(n) * d);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    coords[i] = std::bit_cast<double>(get_le(in, 8, path));
    if (!std::isfinite(coords[i])) throw DataError(path + ": non-finite value in row " + std::to_string(i / d));
  }
  return PointSet(d, std::move(coords));
}

void write_bin(const std::string& path, const PointSet& pts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_le(out, kVersion, 4);
  put_le(out, pts.size(), 8);
  put_le(out, pts.dim(), 4);
  for (double v : pts.raw()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  if (!out) throw DataError("write failed: " + path);
}

PointSet read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::equal(magic, magic + 4, kMagic);
  in.close();
  return binary ? read_bin(path) : read_csv(path);
}

Distribution parse_distribution(std::string_view name) {
  if (name == "uniform") return Distribution::uniform;
  if (name == "gaussian" || name == "normal") return Distribution::gaussian;
  if (name == "clustered") return Distribution::clustered;
  throw UsageError("unknown distribution '" + std::string(name) + "'");
}

PointSet generate(Distribution dist, std::size_t n, std::size_t d, std::uint64_t seed) {
  if (d == 0) throw UsageError("generate: dimension must be positive");
  Rng rng(seed);
  std::vector<double> coords(n * d);
  switch (dist) {
    case Distribution::uniform:
      for (double& v : coords) v = rng.unit();
      break;
    case Distribution::gaussian:
      for (double& v : coords) v = rng.normal();
      break;
    case Distribution::clustered: {
      constexpr std::size_t kClusters = 16;
      constexpr double kSpread = 0.02;
      std::vector<double> centres(kClusters * d);
      for (double& v : centres) v = rng.unit();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = static_cast<std::size_t>(rng.below(kClusters));
        for (std::size_t j = 0; j < d; ++j) coords[i * d + j] = centres[c * d + j] + kSpread * rng.normal();
      }
      break;
    }
  }
  return PointSet(d, std::move(coords));
}

}  // namespace unis
