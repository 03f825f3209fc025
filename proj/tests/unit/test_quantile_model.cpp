#include <doctest.h>
#include <mpfr.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "unis/errors.hpp"
#include "unis/quantile_model.hpp"
#include "unis/rng.hpp"

using namespace unis;

namespace {

// Sums doubles in 2200-bit binary floating point, wide enough that every
// partial sum of finite doubles is exact, then rounds once to nearest.
class MpfrSum {
 public:
  MpfrSum() {
    mpfr_init2(acc_, 2200);
    mpfr_set_zero(acc_, 1);
  }
  ~MpfrSum() { mpfr_clear(acc_); }
  MpfrSum(const MpfrSum&) = delete;
  MpfrSum& operator=(const MpfrSum&) = delete;
  void add(double x) { mpfr_add_d(acc_, acc_, x, MPFR_RNDN); }
  [[nodiscard]] double value() const { return mpfr_get_d(acc_, MPFR_RNDN); }

 private:
  mpfr_t acc_;
};

struct OracleStats {
  double n, sx, sx2, su, sxu;
};

OracleStats oracle_stats(const std::vector<SampleEntry>& entries) {
  MpfrSum sx, sx2, su, sxu;
  for (const auto& e : entries) {
    sx.add(e.x);
    sx2.add(e.x * e.x);
    su.add(e.u);
    sxu.add(e.x * e.u);
  }
  return {static_cast<double>(entries.size()), sx.value(), sx2.value(), su.value(), sxu.value()};
}

void check_stats(const SufficientStats& s, const OracleStats& o) {
  CHECK(static_cast<double>(s.n_pts) == o.n);
  CHECK(s.s_x.value() == o.sx);
  CHECK(s.s_x2.value() == o.sx2);
  CHECK(s.s_u.value() == o.su);
  CHECK(s.s_xu.value() == o.sxu);
}

double ecdf(const std::vector<double>& sorted, double x) {
  return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin()) /
         static_cast<double>(sorted.size());
}

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

std::vector<double> uniform_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.unit();
  return v;
}

std::vector<double> gaussian_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("ExactSum matches a high-precision oracle") {
  SUBCASE("catastrophic cancellation") {
    ExactSum s;
    for (double x : {1e16, 1.0, -1e16, 1e-3, 3.0}) s.add(x);
    MpfrSum o;
    for (double x : {1e16, 1.0, -1e16, 1e-3, 3.0}) o.add(x);
    CHECK(s.value() == o.value());
  }
  SUBCASE("random magnitudes, several orders") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> xs(1 + rng.below(300));
      for (double& x : xs) x = (rng.unit() - 0.5) * std::ldexp(1.0, static_cast<int>(rng.below(120)) - 60);
      MpfrSum o;
      for (double x : xs) o.add(x);
      ExactSum fwd;
      for (double x : xs) fwd.add(x);
      ExactSum rev;
      for (auto it = xs.rbegin(); it != xs.rend(); ++it) rev.add(*it);
      CHECK(fwd.value() == o.value());
      CHECK(rev.value() == o.value());
    }
  }
  SUBCASE("subtracting restores the earlier value") {
    ExactSum s;
    s.add(0.1);
    s.add(0.2);
    const double before = s.value();
    s.add(123.456);
    s.subtract(123.456);
    CHECK(s.value() == before);
  }
}

TEST_CASE("root fit on two tuples solves the normal equations") {
  for (std::size_t l : {2U, 10U, 100U}) {
    SufficientStats st;
    st.add(0.0, 0.0);
    st.add(1.0, static_cast<double>(l - 1));
    const RootFit fit = fit_root(st, l);
    CHECK(fit.alpha == doctest::Approx(static_cast<double>(l - 1) / static_cast<double>(l)).epsilon(1e-12));
    CHECK(std::abs(fit.beta) < 1e-12);
  }
}

TEST_CASE("cdf_train on 0..999 predicts the middle near one half") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 0.0);
  const CdfModel m = cdf_train(v, 0.5, 10, 1);
  CHECK(m.sample().size() == 500);
  const double p = m.predict(500.0);
  CHECK(p >= 0.45);
  CHECK(p <= 0.55);
}

TEST_CASE("constant input yields a step model") {
  const std::vector<double> v(50, 7.25);
  const CdfModel m = cdf_train(v, 0.2, 10, 9);
  CHECK(m.is_step());
  CHECK(m.predict(7.25) == 1.0);
  CHECK(m.predict(std::nextafter(7.25, 0.0)) == 0.0);
  CHECK(m.predict(100.0) == 1.0);
}

TEST_CASE("cdf_train argument checks and sample size") {
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS((void)cdf_train(one, 0.5, 10, 1), UsageError);
  const auto v = uniform_values(1000, 2);
  CHECK(cdf_train(v, 0.01, 100, 1).sample().size() == 10);
  CHECK(cdf_train(v, 0.0001, 100, 1).sample().size() == 2);
}

TEST_CASE("prediction clamps, stays in range and is monotone") {
  const auto v = uniform_values(20000, 4);
  const CdfModel m = cdf_train(v, 0.01, 100, 5);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  CHECK(m.predict(*lo - 1.0) == 0.0);
  CHECK(m.predict(*hi + 1.0) == 1.0);

  Rng rng(6);
  for (int i = 0; i < 10000; ++i) {
    double a = rng.uniform(-0.2, 1.2);
    double b = rng.uniform(-0.2, 1.2);
    if (a > b) std::swap(a, b);
    const double pa = m.predict(a);
    const double pb = m.predict(b);
    CHECK(pa <= pb);
    CHECK(pa >= 0.0);
    CHECK(pb <= 1.0);
  }
}

TEST_CASE("monotone on skewed and clustered inputs too") {
  Rng rng(8);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(std::exp(rng.normal() * 2.0));
  for (int i = 0; i < 500; ++i) v.push_back(3.0);  // heavy duplicate
  const CdfModel m = cdf_train(v, 0.05, 50, 3);
  double prev = -1.0;
  for (double x = -1.0; x < 60.0; x += 0.01) {
    const double p = m.predict(x);
    CHECK(p >= prev);
    prev = p;
  }
}

TEST_CASE("uniform data: prediction tracks the empirical CDF") {
  auto v = uniform_values(100000, 10);
  const CdfModel m = cdf_train(v, 0.01, 100, 11);
  std::sort(v.begin(), v.end());
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.unit();
    CHECK(std::abs(m.predict(x) - ecdf(v, x)) < 0.05);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const auto v = gaussian_values(5000, 13);
  const CdfModel a = cdf_train(v, 0.05, 40, 77);
  const CdfModel b = cdf_train(v, 0.05, 40, 77);
  CHECK(a.sample() == b.sample());
  CHECK(a.root().alpha == b.root().alpha);
  CHECK(a.root().beta == b.root().beta);
  for (double x = -3.0; x < 3.0; x += 0.05) CHECK(a.predict(x) == b.predict(x));
}

TEST_CASE("update with nothing changes nothing") {
  const auto v = uniform_values(3000, 14);
  const CdfModel m = cdf_train(v, 0.05, 20, 1);
  const CdfModel u = update_incremental(m, {}, {});
  CHECK(u.root().alpha == m.root().alpha);
  CHECK(u.root().beta == m.root().beta);
  CHECK(u.root().stats.same_values(m.root().stats));
}

TEST_CASE("incremental update equals recomputation from scratch") {
  Rng rng(15);
  for (int episode = 0; episode < 300; ++episode) {
    const std::size_t l = 5 + rng.below(60);
    const auto v = uniform_values(200 + rng.below(800), rng.next());
    const CdfModel m = cdf_train(v, 0.1, l, rng.next());

    std::vector<double> inserted(rng.below(30));
    for (double& x : inserted) x = rng.uniform(-0.5, 1.5);
    std::vector<double> removed;
    std::vector<SampleEntry> merged = m.sample();
    const std::size_t n_remove = rng.below(std::min<std::size_t>(merged.size() - 2, 10));
    for (std::size_t i = 0; i < n_remove; ++i) {
      const std::size_t pick = rng.below(merged.size());
      // Removal matches the first retained entry with that value, as the oracle does here.
      const double x = merged[pick].x;
      const auto first = std::find_if(merged.begin(), merged.end(), [x](const SampleEntry& e) { return e.x == x; });
      removed.push_back(x);
      merged.erase(first);
    }
    for (double x : inserted) merged.push_back({x, static_cast<double>(m.root().route(x))});

    const CdfModel u = update_incremental(m, inserted, removed);
    check_stats(u.root().stats, oracle_stats(merged));

    const CdfModel scratch = CdfModel::from_sample(merged, l);
    CHECK(u.root().stats.same_values(scratch.root().stats));
    CHECK(close_rel(u.root().alpha, scratch.root().alpha, 1e-9));
    CHECK(close_rel(u.root().beta, scratch.root().beta, 1e-9));
  }
}

TEST_CASE("inserting values above the maximum lowers the old maximum's CDF") {
  const auto v = uniform_values(5000, 16);
  const CdfModel m = cdf_train(v, 0.05, 20, 2);
  double old_max = -std::numeric_limits<double>::infinity();
  for (const auto& e : m.sample()) old_max = std::max(old_max, e.x);
  std::vector<double> above(100);
  for (std::size_t i = 0; i < above.size(); ++i) above[i] = old_max + 1.0 + static_cast<double>(i);
  const CdfModel u = update_incremental(m, above, {});
  CHECK(u.predict(old_max) < m.predict(old_max));
}

TEST_CASE("update refuses to leave fewer than two values") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const CdfModel m = cdf_train(v, 0.5, 4, 1);
  REQUIRE(m.sample().size() == 2);
  const std::vector<double> rm{m.sample()[0].x};
  CHECK_THROWS_AS((void)update_incremental(m, {}, rm), UsageError);
  const std::vector<double> missing{99.0};
  CHECK_THROWS_AS((void)update_incremental(m, {}, missing), UsageError);
}

TEST_CASE("quantile_rank and empirical_quantile") {
  CHECK(quantile_rank(0.5, 5) == 2);
  CHECK(quantile_rank(0.5, 4) == 1);
  CHECK(quantile_rank(0.25, 8) == 1);
  CHECK(quantile_rank(1.0, 8) == 7);
  const std::vector<double> v{1, 2, 3, 4, 5};
  CHECK(empirical_quantile(v, 3.0) == doctest::Approx(0.5));
  CHECK(empirical_quantile(v, 1.0) == doctest::Approx(0.1));
}

TEST_CASE("full-data model has zero error at the median of an odd distinct set") {
  Rng rng(18);
  std::vector<double> v(1001);
  for (double& x : v) x = rng.unit();
  const CdfModel m = cdf_train(v, 1.0, 100, 1);
  CHECK(prediction_error_r(m, v, 0.5) == 0.0);
}

TEST_CASE("prediction error stays below one percent at defaults") {
  for (int dist = 0; dist < 2; ++dist) {
    const auto v = dist == 0 ? uniform_values(100000, 19) : gaussian_values(100000, 20);
    const CdfModel m = cdf_train(v, 0.01, 100, 21);
    for (double q : {0.1, 0.25, 0.5, 0.75, 0.9}) CHECK(prediction_error_r(m, v, q) < 0.01);
  }
}

TEST_CASE("select_by_model returns the exact order statistics") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(3000);
    std::vector<double> v(n);
    const bool ties = rng.below(2) == 0;
    for (double& x : v) x = ties ? static_cast<double>(rng.below(20)) : rng.normal();
    const CdfModel m = cdf_train(v, 0.02, 1 + rng.below(100), rng.next());
    const std::size_t t = 2 + rng.below(6);
    std::vector<QuantileTarget> targets;
    for (std::size_t j = 1; j < t; ++j) {
      const double q = static_cast<double>(j) / static_cast<double>(t);
      targets.push_back({q, quantile_rank(q, n)});
    }
    SelectionStats stats;
    const auto got = select_by_model(v, m, targets, 0.15, 1.0 / static_cast<double>(t), &stats);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(got.size() == targets.size());
    for (std::size_t j = 0; j < targets.size(); ++j) CHECK(got[j] == sorted[targets[j].rank]);
  }
}

TEST_CASE("selection windows hold exactly the values predicted inside them") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(4000);
    std::vector<double> v(n);
    const int shape = static_cast<int>(rng.below(3));
    for (double& x : v) {
      if (shape == 0) x = static_cast<double>(rng.below(15)) - 7.0;
      if (shape == 1) x = std::exp(rng.normal() * 3.0);
      if (shape == 2) x = rng.normal() * 1e-3;
    }
    CdfModel m = cdf_train(v, 0.01 + 0.2 * rng.unit(), 1 + rng.below(200), rng.next());
    if (trial % 3 == 0 && n > 10) {
      const std::vector<double> extra{v[0] * 2.0 + 1.0, v[1] - 5.0};
      m = update_incremental(m, extra, {});
      v.insert(v.end(), extra.begin(), extra.end());
    }
    const double kappa = 0.005 + 0.1 * rng.unit();
    const std::size_t t = 2 + rng.below(5);
    std::vector<QuantileTarget> targets;
    std::size_t expected = 0;
    for (std::size_t j = 1; j < t; ++j) {
      const double q = static_cast<double>(j) / static_cast<double>(t);
      targets.push_back({q, quantile_rank(q, v.size())});
      for (double x : v) {
        const double p = m.predict(x);
        if (p >= q - kappa && p <= q + kappa) ++expected;
      }
    }
    // kappa equal to the cap means exactly one scan.
    SelectionStats stats;
    (void)select_by_model(v, m, targets, kappa, kappa, &stats);
    CHECK(stats.scans == 1);
    CHECK(stats.candidates == expected);
  }
}

TEST_CASE("a maximal window covers every value") {
  auto v = uniform_values(999, 23);
  const CdfModel m = cdf_train(v, 0.01, 100, 1);
  const std::vector<QuantileTarget> median{{0.5, quantile_rank(0.5, v.size())}};
  SelectionStats stats;
  const auto got = select_by_model(v, m, median, 0.5, 0.5, &stats);
  std::sort(v.begin(), v.end());
  CHECK(got[0] == v[499]);
  CHECK(stats.candidates == v.size());
  CHECK(stats.exact_fallbacks == 0);
}

TEST_CASE("sub-model interpolation is clamped to its anchors") {
  const SubModel s{1.0, 3.0, 0.2, 0.4};
  CHECK(s.predict(0.0) == doctest::Approx(0.2));
  CHECK(s.predict(2.0) == doctest::Approx(0.3));
  CHECK(s.predict(5.0) == doctest::Approx(0.4));
}
