#include "unis/quantile_model.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "unis/errors.hpp"
#include "unis/rng.hpp"

namespace unis {

// ---------------------------------------------------------------------------
// ExactSum: partials are kept non-overlapping and increasing in magnitude, so
// their exact sum equals the exact sum of every input (Shewchuk 1997). value()
// follows the round-half-even correction used by CPython's math.fsum.

void ExactSum::add(double x) {
  std::size_t kept = 0;
  for (double y : partials_) {
    if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[kept++] = lo;
    x = hi;
  }
  partials_.resize(kept);
  partials_.push_back(x);
}

double ExactSum::value() const {
  std::size_t n = partials_.size();
  if (n == 0) return 0.0;
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

void SufficientStats::add(double x, double u) {
  ++n_pts;
  s_x.add(x);
  s_x2.add(x * x);
  s_u.add(u);
  s_xu.add(x * u);
}

void SufficientStats::remove(double x, double u) {
  if (n_pts == 0) throw UsageError("SufficientStats::remove on empty statistics");
  --n_pts;
  s_x.subtract(x);
  s_x2.subtract(x * x);
  s_u.subtract(u);
  s_xu.subtract(x * u);
}

bool SufficientStats::same_values(const SufficientStats& o) const {
  return n_pts == o.n_pts && s_x.value() == o.s_x.value() && s_x2.value() == o.s_x2.value() &&
         s_u.value() == o.s_u.value() && s_xu.value() == o.s_xu.value();
}

// ---------------------------------------------------------------------------

std::size_t RootModel::route(double x) const {
  const double ld = static_cast<double>(l);
  const double u = std::floor(ld * alpha * x + ld * beta);
  if (!(u > 0.0)) return 0;  // also catches NaN
  if (u >= ld - 1.0) return l - 1;
  return static_cast<std::size_t>(u);
}

double SubModel::predict(double x) const {
  if (x_max == x_min) return x <= x_min ? cdf_min : cdf_max;
  const double frac = (x - x_min) / (x_max - x_min);
  return std::clamp(cdf_min + frac * (cdf_max - cdf_min), cdf_min, cdf_max);
}

RootFit fit_root(const SufficientStats& stats, std::size_t l) {
  if (stats.n_pts == 0) return {0.0, 0.0};
  const double n = static_cast<double>(stats.n_pts);
  const double sx = stats.s_x.value();
  const double sx2 = stats.s_x2.value();
  const double su = stats.s_u.value();
  const double sxu = stats.s_xu.value();

  // Least squares for u ~ a*x + b; the model stores a = l*alpha, b = l*beta.
  const double den = n * sx2 - sx * sx;
  double a = 0.0;
  if (den > 0.0 && std::isfinite(den)) {
    a = (n * sxu - sx * su) / den;
    if (!(a > 0.0) || !std::isfinite(a)) a = 0.0;
  }
  const double b = (su - a * sx) / n;
  const double ld = static_cast<double>(l);
  return {a / ld, std::isfinite(b) ? b / ld : 0.0};
}

// ---------------------------------------------------------------------------

CdfModel CdfModel::from_sample(std::vector<SampleEntry> sample, std::size_t l) {
  if (l == 0) throw UsageError("CdfModel: l must be positive");
  if (sample.size() < 2) throw UsageError("CdfModel: need at least two sample values");
  CdfModel m;
  m.root_.l = l;
  std::sort(sample.begin(), sample.end(),
            [](const SampleEntry& a, const SampleEntry& b) { return a.x < b.x || (a.x == b.x && a.u < b.u); });
  for (const auto& e : sample) m.root_.stats.add(e.x, e.u);
  m.sample_ = std::move(sample);
  const RootFit fit = fit_root(m.root_.stats, l);
  m.root_.alpha = fit.alpha;
  m.root_.beta = fit.beta;
  m.refit_subs();
  return m;
}

void CdfModel::refit_subs() {
  const std::size_t l = root_.l;
  const std::size_t m = sample_.size();
  step_ = sample_.front().x == sample_.back().x;
  subs_.assign(l, SubModel{});
  if (step_) {
    const double c = sample_.front().x;
    for (auto& s : subs_) s = SubModel{c, c, 0.0, 1.0};
    return;
  }

  // Routing is monotone, so each cluster is a contiguous run of the sorted sample.
  std::vector<bool> filled(l, false);
  const double md = static_cast<double>(m);
  std::size_t i = 0;
  while (i < m) {
    const std::size_t k = root_.route(sample_[i].x);
    std::size_t j = i;
    while (j + 1 < m && root_.route(sample_[j + 1].x) == k) ++j;
    subs_[k] = SubModel{sample_[i].x, sample_[j].x, static_cast<double>(i) / md, static_cast<double>(j) / md};
    filled[k] = true;
    i = j + 1;
  }

  std::size_t first = 0;
  while (!filled[first]) ++first;
  std::size_t last = l - 1;
  while (!filled[last]) --last;
  for (std::size_t k = 0; k < first; ++k) {
    subs_[k] = SubModel{subs_[first].x_min, subs_[first].x_min, subs_[first].cdf_min, subs_[first].cdf_min};
  }
  for (std::size_t k = last + 1; k < l; ++k) {
    subs_[k] = SubModel{subs_[last].x_max, subs_[last].x_max, subs_[last].cdf_max, subs_[last].cdf_max};
  }
  std::size_t prev = first;
  for (std::size_t k = first + 1; k <= last; ++k) {
    if (!filled[k]) continue;
    for (std::size_t e = prev + 1; e < k; ++e) {
      subs_[e] = SubModel{subs_[prev].x_max, subs_[k].x_min, subs_[prev].cdf_max, subs_[k].cdf_min};
    }
    prev = k;
  }
}

double CdfModel::predict(double x) const {
  if (sample_.empty()) return 0.0;
  if (x < sample_.front().x) return 0.0;
  if (x > sample_.back().x) return 1.0;
  if (step_) return 1.0;
  return std::clamp(subs_[root_.route(x)].predict(x), 0.0, 1.0);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(m);
  if (m * 4 > n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
    return out;
  }
  // Floyd's algorithm: m draws, no rejection loop.
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(m * 2);
  for (std::size_t j = n - m; j < n; ++j) {
    const std::size_t v = static_cast<std::size_t>(rng.below(j + 1));
    const std::size_t pick = chosen.insert(v).second ? v : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  return out;
}

}  // namespace

CdfModel cdf_train(std::span<const double> values, double delta, std::size_t l, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return cdf_train(values, delta, l, rng);
}

CdfModel cdf_train(std::span<const double> values, double delta, std::size_t l, Rng& rng) {
  if (values.size() < 2) throw UsageError("cdf_train: need at least two values");
  if (!(delta > 0.0 && delta <= 1.0)) throw UsageError("cdf_train: delta must lie in (0, 1]");
  if (l == 0) throw UsageError("cdf_train: l must be positive");
  const std::size_t n = values.size();
  std::size_t m = static_cast<std::size_t>(std::ceil(delta * static_cast<double>(n)));
  m = std::min(n, std::max<std::size_t>(2, m));

  std::vector<double> xs;
  xs.reserve(m);
  if (m == n) {
    xs.assign(values.begin(), values.end());
  } else {
    for (std::size_t i : sample_indices(n, m, rng)) xs.push_back(values[i]);
  }
  std::sort(xs.begin(), xs.end());

  std::vector<SampleEntry> sample(m);
  for (std::size_t i = 0; i < m; ++i) {
    sample[i] = SampleEntry{xs[i], static_cast<double>((l * i) / m)};
  }
  return CdfModel::from_sample(std::move(sample), l);
}

CdfModel update_incremental(const CdfModel& m, std::span<const double> inserted, std::span<const double> removed) {
  if (m.empty()) throw UsageError("update_incremental: model is untrained");
  CdfModel out = m;
  for (double x : inserted) {
    if (!std::isfinite(x)) throw DataError("update_incremental: non-finite value");
    const double u = static_cast<double>(m.root_.route(x));
    out.root_.stats.add(x, u);
    out.sample_.push_back(SampleEntry{x, u});
  }
  for (double x : removed) {
    auto it = std::find_if(out.sample_.begin(), out.sample_.end(), [x](const SampleEntry& e) { return e.x == x; });
    if (it == out.sample_.end()) {
      throw UsageError("update_incremental: removed value " + std::to_string(x) + " is not in the retained sample");
    }
    out.root_.stats.remove(it->x, it->u);
    out.sample_.erase(it);
  }
  if (out.root_.stats.n_pts <= 1) throw UsageError("update_incremental: update leaves fewer than two values");
  if (inserted.empty() && removed.empty()) return out;

  std::sort(out.sample_.begin(), out.sample_.end(),
            [](const SampleEntry& a, const SampleEntry& b) { return a.x < b.x || (a.x == b.x && a.u < b.u); });
  const RootFit fit = fit_root(out.root_.stats, out.root_.l);
  out.root_.alpha = fit.alpha;
  out.root_.beta = fit.beta;
  out.refit_subs();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Order-preserving map between finite doubles and unsigned keys.
std::uint64_t order_key(double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  return (bits >> 63) != 0 ? ~bits : bits | (std::uint64_t{1} << 63);
}

double from_order_key(std::uint64_t k) {
  return std::bit_cast<double>((k >> 63) != 0 ? k & ~(std::uint64_t{1} << 63) : ~k);
}

// Smallest x in [lo, hi] with predict(x) >= level, or +inf if there is none.
// predict is non-decreasing in x, so a bisection over the ordered keys finds it.
double first_reaching(const CdfModel& m, double level, double lo, double hi) {
  if (m.predict(hi) < level) return std::numeric_limits<double>::infinity();
  if (m.predict(lo) >= level) return lo;
  std::uint64_t a = order_key(lo);  // predict < level
  std::uint64_t b = order_key(hi);  // predict >= level
  while (b - a > 1) {
    const std::uint64_t mid = a + (b - a) / 2;
    if (m.predict(from_order_key(mid)) >= level) {
      b = mid;
    } else {
      a = mid;
    }
  }
  return from_order_key(b);
}

// Largest x in [lo, hi] with predict(x) <= level, or -inf if there is none.
double last_within(const CdfModel& m, double level, double lo, double hi) {
  if (m.predict(lo) > level) return -std::numeric_limits<double>::infinity();
  if (m.predict(hi) <= level) return hi;
  std::uint64_t a = order_key(lo);  // predict <= level
  std::uint64_t b = order_key(hi);  // predict > level
  while (b - a > 1) {
    const std::uint64_t mid = a + (b - a) / 2;
    if (m.predict(from_order_key(mid)) <= level) {
      a = mid;
    } else {
      b = mid;
    }
  }
  return from_order_key(a);
}

}  // namespace

std::vector<double> select_by_model(std::span<const double> values, const CdfModel& model,
                                    std::span<const QuantileTarget> targets, double kappa, double kappa_cap,
                                    SelectionStats* stats) {
  const std::size_t n = values.size();
  std::vector<double> result(targets.size(), 0.0);
  if (targets.empty()) return result;
  if (n == 0) throw UsageError("select_by_model: no values");
  for (const auto& t : targets) {
    if (t.rank >= n) throw UsageError("select_by_model: target rank out of range");
  }
  const auto [vmin_it, vmax_it] = std::minmax_element(values.begin(), values.end());
  const double vmin = *vmin_it;
  const double vmax = *vmax_it;

  struct Pending {
    std::size_t target;
    double kappa;
    bool last_try;
  };
  std::vector<Pending> pending;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double k0 = std::min(kappa, kappa_cap);
    pending.push_back({i, k0, k0 >= kappa_cap});
  }
  std::vector<std::size_t> exact;

  // A value's prediction lies in [q - kappa, q + kappa] exactly when the value
  // lies in [from, to], because predict is monotone. In direct mode the bounds
  // apply to the prediction itself.
  std::vector<double> from;
  std::vector<double> to;
  std::vector<std::vector<double>> cand;
  std::vector<std::size_t> below;
  while (!pending.empty()) {
    if (stats) ++stats->scans;
    const std::size_t w_count = pending.size();
    from.resize(w_count);
    to.resize(w_count);
    cand.assign(w_count, {});
    below.assign(w_count, 0);
    // Each bisection costs about 128 predictions, so small inputs are
    // classified by predicting every value instead.
    const bool direct = n < 128 * w_count;
    for (std::size_t w = 0; w < w_count; ++w) {
      const double q = targets[pending[w].target].quantile;
      if (direct) {
        from[w] = q - pending[w].kappa;
        to[w] = q + pending[w].kappa;
      } else {
        from[w] = first_reaching(model, q - pending[w].kappa, vmin, vmax);
        to[w] = last_within(model, q + pending[w].kappa, vmin, vmax);
      }
      cand[w].reserve(static_cast<std::size_t>(2.0 * pending[w].kappa * static_cast<double>(n) * 1.25) + 16);
    }
    if (direct) {
      for (double x : values) {
        const double p = model.predict(x);
        for (std::size_t w = 0; w < w_count; ++w) {
          if (p < from[w]) {
            ++below[w];
          } else if (p <= to[w]) {
            cand[w].push_back(x);
          }
        }
      }
    } else if (w_count == 1) {
      const double a = from[0];
      const double b = to[0];
      std::size_t under = 0;
      for (double x : values) {
        if (x < a) {
          ++under;
        } else if (x <= b) {
          cand[0].push_back(x);
        }
      }
      below[0] = under;
    } else {
      for (double x : values) {
        for (std::size_t w = 0; w < w_count; ++w) {
          if (x < from[w]) {
            ++below[w];
          } else if (x <= to[w]) {
            cand[w].push_back(x);
          }
        }
      }
    }
    std::vector<Pending> next;
    for (std::size_t w = 0; w < w_count; ++w) {
      const auto& t = targets[pending[w].target];
      auto& c = cand[w];
      if (stats) stats->candidates += c.size();
      if (t.rank >= below[w] && t.rank - below[w] < c.size()) {
        const auto nth = c.begin() + static_cast<std::ptrdiff_t>(t.rank - below[w]);
        std::nth_element(c.begin(), nth, c.end());
        result[pending[w].target] = *nth;
      } else if (pending[w].last_try) {
        exact.push_back(pending[w].target);
      } else {
        if (stats) ++stats->widenings;
        const double widened = std::min(pending[w].kappa * 2.0, kappa_cap);
        next.push_back({pending[w].target, widened, widened >= kappa_cap});
      }
    }
    pending = std::move(next);
  }

  if (!exact.empty()) {
    std::vector<double> all(values.begin(), values.end());
    for (std::size_t idx : exact) {
      if (stats) ++stats->exact_fallbacks;
      const auto nth = all.begin() + static_cast<std::ptrdiff_t>(targets[idx].rank);
      std::nth_element(all.begin(), nth, all.end());
      result[idx] = *nth;
    }
  }
  return result;
}

std::size_t quantile_rank(double q, std::size_t n) {
  if (n == 0) throw UsageError("quantile_rank: empty input");
  const double r = std::ceil(q * static_cast<double>(n));
  if (!(r >= 1.0)) return 0;
  return std::min(n - 1, static_cast<std::size_t>(r) - 1);
}

double empirical_quantile(std::span<const double> values, double v) {
  if (values.empty()) throw UsageError("empirical_quantile: empty input");
  std::size_t less = 0;
  std::size_t equal = 0;
  for (double x : values) {
    if (x < v) {
      ++less;
    } else if (x == v) {
      ++equal;
    }
  }
  return (static_cast<double>(less) + 0.5 * static_cast<double>(equal)) / static_cast<double>(values.size());
}

double prediction_error_r(const CdfModel& m, std::span<const double> values, double q, double kappa) {
  if (values.empty()) throw UsageError("prediction_error_r: empty input");
  const QuantileTarget target{q, quantile_rank(q, values.size())};
  const double v = select_by_model(values, m, std::span<const QuantileTarget>(&target, 1), kappa, 1.0).front();
  return std::fabs(q - empirical_quantile(values, v));
}

}  // namespace unis
