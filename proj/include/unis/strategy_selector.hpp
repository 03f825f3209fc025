#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "unis/bmkd_tree.hpp"
#include "unis/forest.hpp"
#include "unis/search.hpp"

namespace unis {

enum class Workload : std::uint8_t { knn = 0, radius = 1 };
[[nodiscard]] std::string_view workload_name(Workload w) noexcept;
[[nodiscard]] Workload parse_workload(std::string_view name);

/// Path-overlap similarity of two leaf paths, counting the root as a shared
/// node: I = T+ - T- - 1 with T+ the shared nodes and T- the positions where
/// the longer path no longer agrees.
[[nodiscard]] int index_metric(const LeafPathCode& a, const LeafPathCode& b) noexcept;
[[nodiscard]] int index_metric(const BmkdTree& tree, Coords a, Coords b);

/// Leaf paths frozen at training time; F2 has one entry per leaf.
struct LeafSnapshot {
  std::vector<LeafPathCode> codes;
  std::uint64_t fingerprint = 0;  // fingerprint_codes(codes)

  static LeafSnapshot take(const BmkdTree& tree) { return {tree.leaf_codes(), tree.shape_fingerprint()}; }
  static LeafSnapshot from_codes(std::vector<LeafPathCode> codes) {
    const std::uint64_t fp = fingerprint_codes(codes);
    return {std::move(codes), fp};
  }
  /// Compares fingerprints, so the check costs O(1) per query.
  [[nodiscard]] bool matches(const BmkdTree& tree) const noexcept { return fingerprint == tree.shape_fingerprint(); }
};

struct QueryFeatures {
  std::vector<double> f1;  // query coordinates, then k or r
  std::vector<double> f2;  // index_metric against each snapshot leaf
  [[nodiscard]] std::vector<double> concat() const;
};

/// Throws StaleSnapshotError when the tree's leaves no longer match `snap`.
[[nodiscard]] QueryFeatures extract_features(const BmkdTree& tree, const LeafSnapshot& snap, Coords q, double param);
/// Same, without the staleness check; the caller vouches for the snapshot.
[[nodiscard]] QueryFeatures extract_features_unchecked(const BmkdTree& tree, const LeafSnapshot& snap, Coords q,
                                                       double param);

struct QuerySpec {
  std::vector<double> point;
  double param = 0.0;  // k for knn, r for radius
};

inline constexpr double kAborted = std::numeric_limits<double>::infinity();

struct LabeledSample {
  QuerySpec query;
  QueryFeatures features;
  Strategy label = Strategy::r_dfs;
  std::array<double, 4> seconds{kAborted, kAborted, kAborted, kAborted};  // indexed by Strategy
};

struct GroundTruthParams {
  Workload workload = Workload::knn;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;
  std::size_t k_min = 1;
  std::size_t k_max = 1000;
  std::size_t warmups = 5;
  std::size_t repetitions = 3;
  double abort_factor = 1.5;
  bool literal_radius = false;  // r = sum((ub-lb)^2) * tau instead of its square root
  bool audit = true;            // require identical results from every finished strategy
};

/// Draws query points uniformly from the indexed data with their parameter.
[[nodiscard]] std::vector<QuerySpec> sample_queries(const BmkdTree& tree, const GroundTruthParams& params);

/// Times the four strategies on one query. Later strategies are abandoned once
/// they exceed abort_factor times the best median so far and record kAborted.
/// Throws AuditError when two finished strategies disagree.
[[nodiscard]] std::array<double, 4> time_strategies(const BmkdTree& tree, const QuerySpec& q,
                                                    const GroundTruthParams& params);

[[nodiscard]] Strategy fastest(const std::array<double, 4>& seconds) noexcept;

[[nodiscard]] std::vector<LabeledSample> generate_ground_truth(const BmkdTree& tree, const LeafSnapshot& snap,
                                                               const GroundTruthParams& params);

struct SampleSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> validation;
  std::vector<LabeledSample> test;
};
/// Seeded shuffle, then 80% / 10% / 10%.
[[nodiscard]] SampleSplit split_samples(std::vector<LabeledSample> samples, std::uint64_t seed);

struct SelectorModel {
  Workload workload = Workload::knn;
  std::size_t dim = 0;
  std::uint64_t split_seed = 0;
  LeafSnapshot snapshot;
  RandomForest forest;
  bool constant_warning = false;

  void save(std::ostream& out) const;
  static SelectorModel load(std::istream& in);
  void save_file(const std::string& path) const;
  static SelectorModel load_file(const std::string& path);
};

inline constexpr std::size_t kMinTrainingSamples = 100;

/// Fewer than kMinTrainingSamples samples or a single label yields a
/// constant predictor and sets constant_warning.
[[nodiscard]] SelectorModel train_selector(const std::vector<LabeledSample>& samples, const LeafSnapshot& snap,
                                           Workload workload, std::size_t dim, const ForestParams& params);

[[nodiscard]] std::vector<Strategy> predict_ranking(const SelectorModel& model, const QueryFeatures& f);
[[nodiscard]] std::vector<Strategy> predict_ranking(const SelectorModel& model, const BmkdTree& tree, Coords q,
                                                    double param);

/// 1 / (1-based position of `truth` in `ranking`).
[[nodiscard]] double reciprocal_rank(const std::vector<Strategy>& ranking, Strategy truth);

struct EvalReport {
  std::size_t samples = 0;
  double mrr = 0.0;
  double top1 = 0.0;
  std::array<double, 4> selection_share{};  // share of top-1 picks per strategy
};
/// Throws UsageError on an empty sample set.
[[nodiscard]] EvalReport evaluate(const SelectorModel& model, const std::vector<LabeledSample>& samples);

struct AutoKnn {
  KnnResult result;
  Strategy chosen = Strategy::r_dfs;
  double predict_seconds = 0.0;
  double query_seconds = 0.0;
};
[[nodiscard]] AutoKnn knn_auto(const BmkdTree& tree, const SelectorModel& model, Coords q, std::size_t k,
                               const SearchOptions& opts = {});

struct AutoRadius {
  RadiusResult result;
  Strategy chosen = Strategy::r_dfs;
  double predict_seconds = 0.0;
  double query_seconds = 0.0;
};
[[nodiscard]] AutoRadius radius_auto(const BmkdTree& tree, const SelectorModel& model, Coords q, double r,
                                     const SearchOptions& opts = {});

/// CSV with columns q0..q{d-1}, param, f2_0.., label, t_RDFS, t_RBFS, t_BDFS, t_BBFS.
void write_samples_csv(const std::string& path, const std::vector<LabeledSample>& samples, std::size_t dim);
[[nodiscard]] std::vector<LabeledSample> read_samples_csv(const std::string& path);

}  // namespace unis
