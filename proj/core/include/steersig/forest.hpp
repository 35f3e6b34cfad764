#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "steersig/features.hpp"

namespace steersig {

struct ForestParams {
  enum class MaxFeatures { sqrt, all, count };

  std::size_t n_trees = 200;
  bool bootstrap = true;
  MaxFeatures max_features = MaxFeatures::sqrt;
  std::size_t max_features_count = 0;   // used with MaxFeatures::count
  std::optional<std::size_t> max_depth;  // nullopt: grow until pure
  std::size_t min_samples_split = 2;
  std::size_t min_samples_leaf = 1;
  std::uint64_t seed = 0;
  // Threads used for fitting; results do not depend on it.
  std::size_t workers = 1;

  void validate() const;
  // Candidate features per node for d input features (>= 1).
  std::size_t features_per_node(std::size_t d) const;
};

void to_json(nlohmann::json& j, const ForestParams& p);
void from_json(const nlohmann::json& j, ForestParams& p);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean target of the node's (bootstrap) samples
  std::size_t samples = 0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  std::size_t depth() const;
  std::size_t leaf_count() const;
};

// CART regression tree on the rows listed in `samples` (repeats allowed).
// Each node evaluates features in an order drawn from `rng` until
// features_per_node non-constant candidates have been scanned.
RegressionTree fit_tree(const FeatureMatrix& x, std::span<const double> y,
                        std::span<const std::size_t> samples, const ForestParams& params,
                        std::uint64_t tree_seed);

struct Forest {
  ForestParams params;
  std::size_t n_features = 0;
  std::vector<RegressionTree> trees;
  std::optional<Scaler> scaler;  // set by pipelines that standardize inputs

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const FeatureMatrix& rows) const;

  // Split-count importance per feature.
  std::vector<std::size_t> split_counts() const;
};

// Tree t uses the seed derive_seed(params.seed, t).
Forest fit_forest(const FeatureMatrix& x, std::span<const double> y, const ForestParams& params);

// {"format": "steersig-forest", "version": 1, ...}
std::string forest_to_json(const Forest& forest);
Forest forest_from_json(std::string_view text);

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  bool r2_defined = true;  // false when the truth has zero variance
};

Metrics evaluate(std::span<const double> predictions, std::span<const double> truth);

struct EvaluationReport {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  Metrics mean;
  Metrics std;  // population std across seeds
};

EvaluationReport aggregate_report(std::string label, std::vector<std::uint64_t> seeds,
                                  std::vector<Metrics> per_seed);

nlohmann::json report_to_json(const EvaluationReport& report);

struct SplitPlan {
  std::uint64_t seed = 0;
  double test_fraction = 0.3;
  std::vector<std::string> row_groups;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  std::vector<std::string> train_groups;  // sorted
  std::vector<std::string> test_groups;   // sorted
};

// Distinct groups are sorted, shuffled with `seed`, and the first
// ceil(test_fraction * #groups) go to the test side (at least 1, at most
// #groups - 1). Rows follow their group.
SplitPlan group_shuffle_split(const std::vector<std::string>& row_groups, double test_fraction,
                              std::uint64_t seed);

}  // namespace steersig
