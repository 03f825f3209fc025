#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace unis {

class Rng;

/// Exact floating-point accumulator (Shewchuk partials). value() returns the
/// correctly rounded sum of everything added, independent of order, so an
/// incrementally maintained sum compares equal to one recomputed from scratch.
class ExactSum {
 public:
  void add(double x);
  void subtract(double x) { add(-x); }
  [[nodiscard]] double value() const;

 private:
  std::vector<double> partials_;
};

/// Running sums over the root model's training tuples (x_i, u_i).
struct SufficientStats {
  std::size_t n_pts = 0;
  ExactSum s_x;
  ExactSum s_x2;
  ExactSum s_u;
  ExactSum s_xu;

  void add(double x, double u);
  void remove(double x, double u);
  /// Field-wise equality of the rounded sums.
  [[nodiscard]] bool same_values(const SufficientStats& other) const;
};

/// Stage one: u = l*alpha*x + l*beta, routed to clamp(floor(u), 0, l-1).
struct RootModel {
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t l = 1;
  SufficientStats stats;

  [[nodiscard]] std::size_t route(double x) const;
};

/// Stage two: linear interpolation between the cluster's extreme tuples.
struct SubModel {
  double x_min = 0.0;
  double x_max = 0.0;
  double cdf_min = 0.0;
  double cdf_max = 0.0;

  [[nodiscard]] double predict(double x) const;
};

/// One retained training value and the cluster target it contributed to the root stats.
struct SampleEntry {
  double x;
  double u;
  bool operator==(const SampleEntry&) const = default;
};

/// Closed-form least-squares fit of the root model from its sufficient statistics.
/// Returns {alpha, beta}; a non-positive or singular slope yields alpha = 0.
struct RootFit {
  double alpha;
  double beta;
};
[[nodiscard]] RootFit fit_root(const SufficientStats& stats, std::size_t l);

/// Two-stage regression approximation of a one-dimensional CDF.
class CdfModel {
 public:
  CdfModel() = default;

  /// Rebuilds a model from its retained sample (any order). Root parameters come
  /// from the sample's sufficient statistics; sub-models are refit by rank.
  static CdfModel from_sample(std::vector<SampleEntry> sample, std::size_t l);

  [[nodiscard]] double predict(double x) const;

  [[nodiscard]] const RootModel& root() const noexcept { return root_; }
  [[nodiscard]] const std::vector<SubModel>& subs() const noexcept { return subs_; }
  [[nodiscard]] const std::vector<SampleEntry>& sample() const noexcept { return sample_; }
  [[nodiscard]] bool is_step() const noexcept { return step_; }
  [[nodiscard]] std::size_t l() const noexcept { return root_.l; }
  [[nodiscard]] bool empty() const noexcept { return sample_.empty(); }

 private:
  friend CdfModel update_incremental(const CdfModel&, std::span<const double>, std::span<const double>);

  void refit_subs();

  RootModel root_;
  std::vector<SubModel> subs_;
  std::vector<SampleEntry> sample_;  // sorted by x
  bool step_ = false;
};

/// Trains on a uniform sample of max(2, ceil(delta*|values|)) values drawn
/// without replacement. Throws UsageError for fewer than two values.
[[nodiscard]] CdfModel cdf_train(std::span<const double> values, double delta, std::size_t l,
                                 std::uint64_t rng_seed);

/// Same, drawing the sample from a caller-owned generator.
[[nodiscard]] CdfModel cdf_train(std::span<const double> values, double delta, std::size_t l, Rng& rng);

[[nodiscard]] inline double predict_quantile_value(const CdfModel& m, double x) { return m.predict(x); }

/// Adds `inserted` (targets routed through the current root) and drops
/// `removed` (matched against the retained sample), updates the sums, refits.
[[nodiscard]] CdfModel update_incremental(const CdfModel& m, std::span<const double> inserted,
                                          std::span<const double> removed);

/// A value to locate: centre of its window in model-CDF space, and its
/// 0-based rank in ascending order of the scanned values.
struct QuantileTarget {
  double quantile;
  std::size_t rank;
};

struct SelectionStats {
  std::size_t scans = 0;
  std::size_t candidates = 0;
  std::size_t widenings = 0;
  std::size_t exact_fallbacks = 0;
};

/// Finds the value of each target rank using the model as a filter.
///
/// One pass collects, per target, the values whose predicted CDF falls in
/// [q - kappa, q + kappa] and counts the values predicted below the window.
/// Because prediction is monotone those values form a contiguous block of the
/// sorted order, so the target is the candidate at relative rank
/// (rank - below). Windows that miss their target are doubled up to
/// kappa_cap, after which the value is found by exact selection.
[[nodiscard]] std::vector<double> select_by_model(std::span<const double> values, const CdfModel& model,
                                                  std::span<const QuantileTarget> targets, double kappa,
                                                  double kappa_cap, SelectionStats* stats = nullptr);

/// 0-based rank of the element that becomes the q-quantile pivot: ceil(q*n) - 1.
[[nodiscard]] std::size_t quantile_rank(double q, std::size_t n);

/// Mid-rank empirical quantile of v within values: (#less + #equal/2) / n.
[[nodiscard]] double empirical_quantile(std::span<const double> values, double v);

/// |q - empirical quantile of the value the model selects for q|.
[[nodiscard]] double prediction_error_r(const CdfModel& m, std::span<const double> values, double q,
                                        double kappa = 0.15);

}  // namespace unis
