#pragma once

// Slow, literal reference computations used to cross-check the library.

#include <cmath>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // [subject][judge]

struct Icc {
  double consistency, absolute, f, df1, df2;
};

// Two-way ANOVA with SS_error obtained by subtraction from SS_total.
inline Icc icc(const Matrix& m) {
  const double n = m.size(), k = m[0].size();
  long double grand = 0;
  for (const auto& r : m)
    for (double v : r) grand += v;
  grand /= n * k;
  long double ss_total = 0, ss_rows = 0, ss_cols = 0;
  for (const auto& r : m)
    for (double v : r) ss_total += (v - grand) * (v - grand);
  for (const auto& r : m) {
    long double mean = 0;
    for (double v : r) mean += v;
    mean /= k;
    ss_rows += k * (mean - grand) * (mean - grand);
  }
  for (std::size_t j = 0; j < m[0].size(); ++j) {
    long double mean = 0;
    for (const auto& r : m) mean += r[j];
    mean /= n;
    ss_cols += n * (mean - grand) * (mean - grand);
  }
  const long double ss_err = ss_total - ss_rows - ss_cols;
  const long double msr = ss_rows / (n - 1), msc = ss_cols / (k - 1), mse = ss_err / ((n - 1) * (k - 1));
  Icc out;
  out.consistency = double((msr - mse) / (msr + (k - 1) * mse));
  out.absolute = double((msr - mse) / (msr + (k - 1) * mse + k / n * (msc - mse)));
  out.f = double(msr / mse);
  out.df1 = n - 1;
  out.df2 = (n - 1) * (k - 1);
  return out;
}

// Krippendorff's alpha (interval) by enumerating every ordered pair of
// values within units (observed) and across the pooled values (expected).
inline double krippendorff_interval(const Matrix& m) {
  std::vector<double> pooled;
  long double observed = 0;
  for (const auto& unit : m) {
    if (unit.size() < 2) continue;
    for (std::size_t a = 0; a < unit.size(); ++a)
      for (std::size_t b = 0; b < unit.size(); ++b)
        if (a != b) observed += (unit[a] - unit[b]) * (unit[a] - unit[b]) / (unit.size() - 1.0);
    pooled.insert(pooled.end(), unit.begin(), unit.end());
  }
  const long double n = pooled.size();
  long double expected = 0;
  for (std::size_t a = 0; a < pooled.size(); ++a)
    for (std::size_t b = 0; b < pooled.size(); ++b)
      if (a != b) expected += (pooled[a] - pooled[b]) * (pooled[a] - pooled[b]);
  return double(1.0L - (observed / n) / (expected / (n * (n - 1))));
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return double(sxy / std::sqrt(sxx * syy));
}

}  // namespace oracle
