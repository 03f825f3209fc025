#include "unis/partition.hpp"

#include <algorithm>
#include <cmath>

#include "unis/errors.hpp"
#include "unis/rng.hpp"

namespace unis {

namespace {

void check_args(std::uint64_t n, std::uint64_t c, std::uint64_t t) {
  if (n == 0 || c == 0) throw UsageError("partition: n and c must be positive");
  if (t < 2) throw UsageError("partition: t must be at least 2");
}

}  // namespace

unsigned depth_exponent(std::uint64_t n, std::uint64_t c, std::uint64_t t) {
  check_args(n, c, t);
  unsigned e = 0;
  // cap stays below n * t, far from overflow for any realistic n.
  for (std::uint64_t cap = c; cap < n; cap *= t) ++e;
  return e;
}

std::uint64_t c0(std::uint64_t n, std::uint64_t c, std::uint64_t t) {
  const unsigned e = depth_exponent(n, c, t);
  std::uint64_t denom = 1;
  for (unsigned i = 0; i < e; ++i) denom *= t;
  const std::uint64_t whole = n / denom;
  const std::uint64_t rem = n % denom;
  // Fractional part rem/denom compared with one half, in integers.
  const std::uint64_t rounded = (2 * rem <= denom) ? whole : whole + 1;
  return rounded == 0 ? 1 : rounded;
}

double objective_h(std::uint64_t n, std::uint64_t c, std::uint64_t t) {
  const unsigned e = depth_exponent(n, c, t);
  const double td = static_cast<double>(t);
  const double base = static_cast<double>(c0(n, c, t)) * (td * td / 2.0 + td / 2.0 - 1.0);
  return std::pow(base, static_cast<double>(e));
}

PartitionChoice select_t(std::uint64_t n, std::uint64_t c, std::uint64_t t_max, const AnnealParams& params,
                         std::uint64_t rng_seed, SelectMethod method) {
  if (t_max < 2) throw UsageError("select_t: t_max must be at least 2");
  check_args(n, c, 2);
  if (method == SelectMethod::automatic) {
    method = t_max <= 64 ? SelectMethod::exhaustive : SelectMethod::annealing;
  }

  PartitionChoice best{2, objective_h(n, c, 2), method};
  if (method == SelectMethod::exhaustive) {
    for (std::uint64_t t = 3; t <= t_max; ++t) {
      const double h = objective_h(n, c, t);
      if (h < best.objective) best = {t, h, method};
    }
    return best;
  }

  Rng rng(rng_seed);
  const double t0 = params.initial_temperature > 0.0 ? params.initial_temperature : objective_h(n, c, 2);
  const auto max_step = static_cast<std::int64_t>(params.max_step == 0 ? 1 : params.max_step);
  const auto hi_t = static_cast<std::int64_t>(t_max);
  auto consider = [&best](std::uint64_t t, double h) {
    if (h < best.objective || (h == best.objective && t < best.t)) {
      best.t = t;
      best.objective = h;
    }
  };

  // A single chain rarely lands on the sharp minima of this objective, so
  // independent chains cover [2, t_max] in bands.
  const std::uint64_t width = params.band_width == 0 ? t_max : params.band_width;
  const std::uint64_t chains = std::max<std::uint64_t>(1, (t_max - 1 + width - 1) / width);
  for (std::uint64_t j = 0; j < chains; ++j) {
    const auto lo = static_cast<std::int64_t>(2 + j * (t_max - 1) / chains);
    const auto hi = std::max(lo, static_cast<std::int64_t>(2 + (j + 1) * (t_max - 1) / chains) - 1);
    double temperature = t0;
    auto cur = static_cast<std::uint64_t>(rng.between(lo, hi));
    double cur_h = objective_h(n, c, cur);
    consider(cur, cur_h);
    for (unsigned it = 0; it < params.iterations; ++it) {
      std::int64_t step = rng.between(1, max_step);
      if (rng.below(2) == 0) step = -step;
      const auto cand = static_cast<std::uint64_t>(std::clamp<std::int64_t>(static_cast<std::int64_t>(cur) + step, 2, hi_t));
      const double h = objective_h(n, c, cand);
      const double u = rng.unit();
      if (h <= cur_h || (temperature > 0.0 && u < std::exp((cur_h - h) / temperature))) {
        cur = cand;
        cur_h = h;
      }
      consider(cur, cur_h);
      temperature *= params.cooling;
    }
  }

  // Descend from the best state over its step neighbourhood until it is a local minimum.
  for (bool moved = true; moved;) {
    moved = false;
    const auto centre = static_cast<std::int64_t>(best.t);
    for (std::int64_t t = std::max<std::int64_t>(2, centre - max_step); t <= std::min(hi_t, centre + max_step); ++t) {
      const auto ut = static_cast<std::uint64_t>(t);
      const double h = objective_h(n, c, ut);
      if (h < best.objective) {
        consider(ut, h);
        moved = true;
      }
    }
  }
  return best;
}

}  // namespace unis
