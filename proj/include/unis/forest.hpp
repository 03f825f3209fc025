#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace unis {

struct ForestParams {
  std::size_t n_trees = 50;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 5;
  std::size_t max_features = 0;  // 0: floor(sqrt(feature count)), at least 1
  std::uint64_t seed = 7;
};

/// Bagged CART ensemble with Gini splits and per-split feature subsampling.
class RandomForest {
 public:
  struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // go left when x[feature] <= threshold
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::vector<double> proba;  // leaf class distribution
  };
  using Tree = std::vector<TreeNode>;

  /// Labels must lie in [0, n_classes). Fewer than two distinct labels give a
  /// constant predictor with constant() == true.
  static RandomForest fit(const std::vector<std::vector<double>>& x, std::span<const int> y, int n_classes,
                          const ForestParams& params);

  /// Hard vote count per class, plus summed leaf probabilities for tie-breaks.
  [[nodiscard]] std::vector<double> votes(std::span<const double> x) const;
  [[nodiscard]] std::vector<double> proba_sum(std::span<const double> x) const;
  /// Classes by descending votes, then descending probability mass, then index.
  [[nodiscard]] std::vector<int> ranking(std::span<const double> x) const;
  [[nodiscard]] int predict(std::span<const double> x) const { return ranking(x).front(); }

  [[nodiscard]] bool constant() const noexcept { return constant_; }
  [[nodiscard]] int n_classes() const noexcept { return n_classes_; }
  [[nodiscard]] std::size_t n_features() const noexcept { return n_features_; }
  [[nodiscard]] const ForestParams& params() const noexcept { return params_; }
  [[nodiscard]] const std::vector<Tree>& trees() const noexcept { return trees_; }

  void save(std::ostream& out) const;
  static RandomForest load(std::istream& in);

 private:
  void check_features(std::span<const double> x) const;

  ForestParams params_;
  int n_classes_ = 0;
  std::size_t n_features_ = 0;
  bool constant_ = false;
  int constant_label_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace unis
