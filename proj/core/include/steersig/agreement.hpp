#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace steersig {

// n subjects x k judges. `present` is empty for complete data; otherwise it
// flags which cells hold a rating (only Krippendorff's alpha accepts gaps).
struct RatingsMatrix {
  std::size_t subjects = 0;
  std::size_t judges = 0;
  std::vector<double> values;  // row-major
  std::vector<bool> present;
  std::vector<std::string> judge_labels;

  static RatingsMatrix from_rows(const std::vector<std::vector<double>>& rows);

  double at(std::size_t i, std::size_t j) const { return values[i * judges + j]; }
  bool has(std::size_t i, std::size_t j) const { return present.empty() || present[i * judges + j]; }
  bool complete() const;
  std::vector<double> column(std::size_t j) const;  // present entries only
};

// Sample correlation coefficient.
double pearson(std::span<const double> x, std::span<const double> y);

struct IccResult {
  double consistency = 0.0;  // ICC(3,1), two-way mixed, single measure
  double absolute = 0.0;     // absolute-agreement single measure
  double f = 0.0;            // MS_rows / MS_error
  double df1 = 0.0;          // n - 1
  double df2 = 0.0;          // (n - 1)(k - 1)
  double p_value = 0.0;
  double ci_low = 0.0, ci_high = 0.0;                    // 95% CI, consistency form
  double absolute_ci_low = 0.0, absolute_ci_high = 0.0;  // 95% CI, absolute form
  double ms_rows = 0.0, ms_cols = 0.0, ms_error = 0.0;
};

IccResult icc_two_way(const RatingsMatrix& m);

struct KrippendorffResult {
  double alpha = 0.0;
  double observed = 0.0;  // D_o
  double expected = 0.0;  // D_e
  std::size_t pairable = 0;
};

// Interval metric delta = (v - v')^2. Units with fewer than two ratings are
// dropped before pooling.
KrippendorffResult krippendorff_alpha_interval(const RatingsMatrix& m);

// Each judge column centered and divided by its population std.
RatingsMatrix zscore_per_judge(const RatingsMatrix& m);

struct AgreementReport {
  std::string quantity;  // score | coherence | combined
  std::size_t subjects = 0;
  std::size_t judges = 0;
  std::vector<std::string> judge_labels;
  std::vector<double> judge_means;
  std::vector<double> judge_stds;
  IccResult icc;
  double pearson_r = 0.0;  // mean over judge pairs
  KrippendorffResult alpha_raw;
  KrippendorffResult alpha_zscored;
};

// Requires complete data for the ICC and Pearson parts.
AgreementReport agreement_report(const RatingsMatrix& m, std::string quantity);

nlohmann::json agreement_to_json(const AgreementReport& r);
std::string agreement_to_text(const AgreementReport& r);

}  // namespace steersig
