#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steersig/signals.hpp"
#include "steersig/table_io.hpp"

namespace steersig {

// Population moments; skewness m3/m2^1.5 and excess kurtosis m4/m2^2 - 3,
// both 0 for a zero-variance series.
struct SummaryStats {
  double mean = 0, median = 0, range = 0, skewness = 0, kurtosis = 0;
  double variance = 0, std = 0, min = 0, max = 0;

  std::array<double, 9> as_array() const {
    return {mean, median, range, skewness, kurtosis, variance, std, min, max};
  }
};

inline constexpr std::array<std::string_view, 9> kStatNames = {
    "mean", "median", "range", "skewness", "kurtosis", "variance", "std", "min", "max"};
inline constexpr std::array<std::string_view, 5> kSignalNames = {
    "nbf", "kl_steered", "kl_unsteered", "kl_diff", "attn_max"};
inline constexpr std::size_t kFeatureLength = 1 + kStatNames.size() * kSignalNames.size();

SummaryStats summarize(std::span<const double> series);

// values = [alpha, stats(nbf), stats(kl_steered), stats(kl_unsteered),
//           stats(kl_diff), stats(attn_max)]
struct FeatureVector {
  std::string run_id;
  std::string group_key;
  double alpha = 0.0;
  std::vector<double> values;
};

// "alpha", "nbf_mean", "nbf_median", ..., "attn_max_max"
std::vector<std::string> feature_names();

// KL statistics come from the primary probe layer; the attention block is
// the max-probability series at `attention_layer` (1-based).
FeatureVector build_feature_vector(const SignalBundle& bundle, double alpha, std::string run_id,
                                   std::string group_key, std::size_t attention_layer);

using FeatureMatrix = std::vector<std::vector<double>>;

struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> constant;  // column passed through centered only
};

// Takes only the training rows, so test rows cannot leak into the fit.
Scaler fit_scaler(const FeatureMatrix& train);
FeatureMatrix apply_scaler(const Scaler& scaler, const FeatureMatrix& rows);

// Columns: run_id, group_key, then feature_names().
CsvTable feature_table(const std::vector<FeatureVector>& features);
std::vector<FeatureVector> features_from_table(const CsvTable& table);

}  // namespace steersig
