#include "steersig/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "steersig/error.hpp"
#include "steersig/special_functions.hpp"

namespace steersig {

RatingsMatrix RatingsMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  RatingsMatrix m;
  m.subjects = rows.size();
  m.judges = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != m.judges) throw InvalidArgument("ratings matrix: ragged rows");
    m.values.insert(m.values.end(), r.begin(), r.end());
  }
  return m;
}

bool RatingsMatrix::complete() const {
  for (bool p : present) {
    if (!p) return false;
  }
  return true;
}

std::vector<double> RatingsMatrix::column(std::size_t j) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < subjects; ++i) {
    if (has(i, j)) out.push_back(at(i, j));
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson: length mismatch");
  if (x.size() < 2) throw InvalidArgument("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

void require_icc_shape(const RatingsMatrix& m) {
  if (m.subjects < 2 || m.judges < 2) throw InvalidArgument("ICC: need at least 2 subjects and 2 judges");
  if (!m.complete()) throw InvalidArgument("ICC: ratings matrix has missing values");
}

}  // namespace

IccResult icc_two_way(const RatingsMatrix& m) {
  require_icc_shape(m);
  const std::size_t n = m.subjects;
  const std::size_t k = m.judges;
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);

  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += m.at(i, j);
      col_mean[j] += m.at(i, j);
      grand += m.at(i, j);
    }
  }
  for (auto& r : row_mean) r /= kd;
  for (auto& c : col_mean) c /= nd;
  grand /= nd * kd;

  double ss_rows = 0.0, ss_cols = 0.0, ss_err = 0.0;
  for (double r : row_mean) ss_rows += (r - grand) * (r - grand);
  for (double c : col_mean) ss_cols += (c - grand) * (c - grand);
  ss_rows *= kd;
  ss_cols *= nd;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double e = m.at(i, j) - row_mean[i] - col_mean[j] + grand;
      ss_err += e * e;
    }
  }

  IccResult r;
  r.df1 = nd - 1.0;
  r.df2 = (nd - 1.0) * (kd - 1.0);
  r.ms_rows = ss_rows / r.df1;
  r.ms_cols = ss_cols / (kd - 1.0);
  r.ms_error = ss_err / r.df2;

  const double denom_c = r.ms_rows + (kd - 1.0) * r.ms_error;
  const double denom_a = denom_c + (kd / nd) * (r.ms_cols - r.ms_error);
  if (!(denom_c > 0.0) || !(denom_a > 0.0)) {
    throw InvalidArgument("ICC: mean squares are degenerate (constant ratings)");
  }
  r.consistency = (r.ms_rows - r.ms_error) / denom_c;
  r.absolute = (r.ms_rows - r.ms_error) / denom_a;

  constexpr double kUpper = 0.975;
  if (r.ms_error == 0.0) {
    r.f = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.ci_low = r.ci_high = 1.0;
  } else {
    r.f = r.ms_rows / r.ms_error;
    // Upper tail directly, so tiny p-values keep their precision.
    r.p_value = r.f <= 0.0 ? 1.0
                           : regularized_incomplete_beta(0.5 * r.df2, 0.5 * r.df1,
                                                         r.df2 / (r.df2 + r.df1 * r.f));
    const double f_lower = r.f / f_quantile(kUpper, r.df1, r.df2);
    const double f_upper = r.f * f_quantile(kUpper, r.df2, r.df1);
    r.ci_low = (f_lower - 1.0) / (f_lower + kd - 1.0);
    r.ci_high = (f_upper - 1.0) / (f_upper + kd - 1.0);
  }

  if (r.absolute >= 1.0) {
    r.absolute_ci_low = r.absolute_ci_high = 1.0;
  } else {
    const double icc = r.absolute;
    const double a = kd * icc / (nd * (1.0 - icc));
    const double b = 1.0 + kd * icc * (nd - 1.0) / (nd * (1.0 - icc));
    const double am = a * r.ms_cols;
    const double bm = b * r.ms_error;
    const double v = (am + bm) * (am + bm) / (am * am / (kd - 1.0) + bm * bm / r.df2);
    const double c = kd * nd - kd - nd;
    if (std::isfinite(v) && v > 0.0) {
      const double fs = f_quantile(kUpper, r.df1, v);
      const double fs2 = f_quantile(kUpper, v, r.df1);
      r.absolute_ci_low = nd * (r.ms_rows - fs * r.ms_error) /
                          (fs * (kd * r.ms_cols + c * r.ms_error) + nd * r.ms_rows);
      r.absolute_ci_high = nd * (fs2 * r.ms_rows - r.ms_error) /
                           (kd * r.ms_cols + c * r.ms_error + nd * fs2 * r.ms_rows);
    } else {
      r.absolute_ci_low = r.absolute_ci_high = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return r;
}

KrippendorffResult krippendorff_alpha_interval(const RatingsMatrix& m) {
  std::vector<double> pooled;
  double observed_sum = 0.0;
  for (std::size_t i = 0; i < m.subjects; ++i) {
    double s1 = 0.0, s2 = 0.0;
    std::size_t mu = 0;
    for (std::size_t j = 0; j < m.judges; ++j) {
      if (!m.has(i, j)) continue;
      const double v = m.at(i, j);
      s1 += v;
      s2 += v * v;
      ++mu;
    }
    if (mu < 2) continue;
    for (std::size_t j = 0; j < m.judges; ++j) {
      if (m.has(i, j)) pooled.push_back(m.at(i, j));
    }
    const double md = static_cast<double>(mu);
    // Sum over ordered pairs i != j of (v_i - v_j)^2 = 2 (m sum v^2 - (sum v)^2).
    observed_sum += 2.0 * (md * s2 - s1 * s1) / (md - 1.0);
  }
  if (pooled.size() < 2) throw InvalidArgument("Krippendorff alpha: no pairable values");
  const double n = static_cast<double>(pooled.size());
  double s1 = 0.0, s2 = 0.0;
  for (double v : pooled) {
    s1 += v;
    s2 += v * v;
  }
  KrippendorffResult r;
  r.pairable = pooled.size();
  r.observed = std::max(0.0, observed_sum / n);
  r.expected = std::max(0.0, 2.0 * (n * s2 - s1 * s1) / (n * (n - 1.0)));
  if (!(r.expected > 0.0)) throw InvalidArgument("Krippendorff alpha: expected disagreement is zero");
  r.alpha = 1.0 - r.observed / r.expected;
  return r;
}

RatingsMatrix zscore_per_judge(const RatingsMatrix& m) {
  RatingsMatrix out = m;
  for (std::size_t j = 0; j < m.judges; ++j) {
    const auto col = m.column(j);
    if (col.empty()) throw InvalidArgument("z-score: judge without ratings");
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(col.size()));
    if (!(sd > 0.0)) throw InvalidArgument("z-score: judge column has zero variance");
    for (std::size_t i = 0; i < m.subjects; ++i) {
      if (m.has(i, j)) out.values[i * m.judges + j] = (m.at(i, j) - mean) / sd;
    }
  }
  return out;
}

AgreementReport agreement_report(const RatingsMatrix& m, std::string quantity) {
  AgreementReport r;
  r.quantity = std::move(quantity);
  r.subjects = m.subjects;
  r.judges = m.judges;
  r.judge_labels = m.judge_labels;
  for (std::size_t j = 0; j < m.judges; ++j) {
    const auto col = m.column(j);
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    r.judge_means.push_back(mean);
    r.judge_stds.push_back(std::sqrt(ss / static_cast<double>(col.size())));
  }
  r.icc = icc_two_way(m);
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < m.judges; ++a) {
    for (std::size_t b = a + 1; b < m.judges; ++b) {
      acc += pearson(m.column(a), m.column(b));
      ++pairs;
    }
  }
  r.pearson_r = acc / static_cast<double>(pairs);
  r.alpha_raw = krippendorff_alpha_interval(m);
  r.alpha_zscored = krippendorff_alpha_interval(zscore_per_judge(m));
  return r;
}

nlohmann::json agreement_to_json(const AgreementReport& r) {
  const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  const auto kripp = [&](const KrippendorffResult& k) {
    return nlohmann::json{{"alpha", num(k.alpha)}, {"D_o", num(k.observed)}, {"D_e", num(k.expected)},
                          {"pairable_values", k.pairable}};
  };
  nlohmann::json judges = nlohmann::json::array();
  for (std::size_t j = 0; j < r.judges; ++j) {
    judges.push_back({{"judge", j < r.judge_labels.size() ? r.judge_labels[j] : std::to_string(j)},
                      {"mean", num(r.judge_means[j])},
                      {"std", num(r.judge_stds[j])}});
  }
  return {{"quantity", r.quantity},
          {"subjects", r.subjects},
          {"judges", judges},
          {"icc",
           {{"consistency", num(r.icc.consistency)},
            {"absolute_agreement", num(r.icc.absolute)},
            {"F", num(r.icc.f)},
            {"df", {r.icc.df1, r.icc.df2}},
            {"p_value", num(r.icc.p_value)},
            {"ci95_consistency", {num(r.icc.ci_low), num(r.icc.ci_high)}},
            {"ci95_absolute", {num(r.icc.absolute_ci_low), num(r.icc.absolute_ci_high)}},
            {"MS_rows", num(r.icc.ms_rows)},
            {"MS_cols", num(r.icc.ms_cols)},
            {"MS_error", num(r.icc.ms_error)},
            {"note",
             "ICC(3,1) is the consistency form; the absolute-agreement single measure is reported "
             "alongside because the two are often conflated"}}},
          {"pearson_r", num(r.pearson_r)},
          {"krippendorff_raw", kripp(r.alpha_raw)},
          {"krippendorff_zscored", kripp(r.alpha_zscored)}};
}

std::string agreement_to_text(const AgreementReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "agreement on %s: %zu subjects x %zu judges\n", r.quantity.c_str(),
                r.subjects, r.judges);
  out += buf;
  for (std::size_t j = 0; j < r.judges; ++j) {
    std::snprintf(buf, sizeof buf, "  judge %-24s mean %.4f  std %.4f\n",
                  j < r.judge_labels.size() ? r.judge_labels[j].c_str() : "?", r.judge_means[j],
                  r.judge_stds[j]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  ICC(3,1) consistency  %.4f  95%% CI [%.4f, %.4f]\n", r.icc.consistency,
                r.icc.ci_low, r.icc.ci_high);
  out += buf;
  std::snprintf(buf, sizeof buf, "  ICC absolute (A,1)    %.4f  95%% CI [%.4f, %.4f]\n", r.icc.absolute,
                r.icc.absolute_ci_low, r.icc.absolute_ci_high);
  out += buf;
  std::snprintf(buf, sizeof buf, "  F(%.0f,%.0f) = %.4f  p = %.3g\n", r.icc.df1, r.icc.df2, r.icc.f,
                r.icc.p_value);
  out += buf;
  std::snprintf(buf, sizeof buf, "  Pearson r             %.4f\n", r.pearson_r);
  out += buf;
  std::snprintf(buf, sizeof buf, "  Krippendorff alpha    raw %.4f  z-scored %.4f\n", r.alpha_raw.alpha,
                r.alpha_zscored.alpha);
  out += buf;
  out += "  note: the consistency and absolute-agreement ICC forms differ when judges are offset\n";
  return out;
}

}  // namespace steersig
