#pragma once

#include <cstddef>
#include <cstdint>

namespace unis {

/// Smallest e >= 0 with t^e * c >= n, i.e. ceil(log_t(n / c)) without rounding error.
[[nodiscard]] unsigned depth_exponent(std::uint64_t n, std::uint64_t c, std::uint64_t t);

/// Points per leaf implied by an ideal t-way split of n points down to capacity c:
/// n / t^e rounded half-down, never below 1.
[[nodiscard]] std::uint64_t c0(std::uint64_t n, std::uint64_t c, std::uint64_t t);

/// Closed-form partition cost (c0 * (t^2/2 + t/2 - 1))^e.
[[nodiscard]] double objective_h(std::uint64_t n, std::uint64_t c, std::uint64_t t);

enum class SelectMethod { automatic, exhaustive, annealing };

struct AnnealParams {
  double initial_temperature = 0.0;  // <= 0 means objective_h(n, c, 2)
  double cooling = 0.95;
  unsigned iterations = 500;
  unsigned max_step = 3;
  /// One chain runs per band of this many t values, starting inside its band.
  unsigned band_width = 16;
};

struct PartitionChoice {
  std::uint64_t t = 2;
  double objective = 1.0;
  SelectMethod method = SelectMethod::exhaustive;
};

/// Chooses the partition number minimising objective_h over [2, t_max]. The
/// automatic method sweeps exhaustively up to t_max = 64 and anneals above.
[[nodiscard]] PartitionChoice select_t(std::uint64_t n, std::uint64_t c, std::uint64_t t_max,
                                       const AnnealParams& params, std::uint64_t rng_seed,
                                       SelectMethod method = SelectMethod::automatic);

}  // namespace unis
