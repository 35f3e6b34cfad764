#include "steersig/features.hpp"

#include <algorithm>
#include <cmath>

#include "steersig/error.hpp"

namespace steersig {

SummaryStats summarize(std::span<const double> series) {
  if (series.empty()) throw InvalidArgument("summarize: empty series");
  const double n = static_cast<double>(series.size());
  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end());

  SummaryStats s;
  s.min = sorted.front();
  s.max = sorted.back();
  s.range = s.max - s.min;
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);

  // Sum in sorted order so the result does not depend on input order.
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : sorted) {
    const double d = v - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  s.variance = m2;
  s.std = std::sqrt(m2);
  if (m2 > 0.0) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return s;
}

std::vector<std::string> feature_names() {
  std::vector<std::string> names{"alpha"};
  for (auto sig : kSignalNames) {
    for (auto stat : kStatNames) names.push_back(std::string(sig) + "_" + std::string(stat));
  }
  return names;
}

FeatureVector build_feature_vector(const SignalBundle& bundle, double alpha, std::string run_id,
                                   std::string group_key, std::size_t attention_layer) {
  if (bundle.nbf.empty()) throw InvalidArgument("feature vector: missing NBF series");
  if (bundle.kl.empty()) throw InvalidArgument("feature vector: missing KL series");
  if (attention_layer < 1 || attention_layer > bundle.attention_max.size()) {
    throw InvalidArgument("feature vector: missing attention series for layer " +
                          std::to_string(attention_layer));
  }
  const auto& kl = bundle.kl.front();
  const std::array<const std::vector<double>*, 5> series{
      &bundle.nbf, &kl.steered, &kl.unsteered, &kl.diff, &bundle.attention_max[attention_layer - 1]};
  FeatureVector fv;
  fv.run_id = std::move(run_id);
  fv.group_key = std::move(group_key);
  fv.alpha = alpha;
  fv.values.reserve(kFeatureLength);
  fv.values.push_back(alpha);
  for (const auto* s : series) {
    if (s->size() != bundle.nbf.size()) throw InvalidArgument("feature vector: series lengths differ");
    for (double v : summarize(*s).as_array()) fv.values.push_back(v);
  }
  return fv;
}

Scaler fit_scaler(const FeatureMatrix& train) {
  if (train.empty()) throw InvalidArgument("fit_scaler: empty training set");
  const std::size_t d = train.front().size();
  Scaler sc;
  sc.mean.assign(d, 0.0);
  sc.std.assign(d, 1.0);
  sc.constant.assign(d, false);
  const double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (const auto& r : train) {
      if (r.size() != d) throw InvalidArgument("fit_scaler: ragged matrix");
      sum += r[j];
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& r : train) ss += (r[j] - mean) * (r[j] - mean);
    const double sd = std::sqrt(ss / n);
    sc.mean[j] = mean;
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      sc.constant[j] = true;
      sc.std[j] = 1.0;
    } else {
      sc.std[j] = sd;
    }
  }
  return sc;
}

FeatureMatrix apply_scaler(const Scaler& scaler, const FeatureMatrix& rows) {
  FeatureMatrix out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.size() != scaler.mean.size()) throw InvalidArgument("apply_scaler: dimension mismatch");
    std::vector<double> z(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) z[j] = (r[j] - scaler.mean[j]) / scaler.std[j];
    out.push_back(std::move(z));
  }
  return out;
}

CsvTable feature_table(const std::vector<FeatureVector>& features) {
  CsvTable t;
  t.header = {"run_id", "group_key"};
  for (auto& n : feature_names()) t.header.push_back(std::move(n));
  for (const auto& f : features) {
    if (f.values.size() != kFeatureLength) throw InvalidArgument("feature vector has wrong length");
    std::vector<std::string> row{f.run_id, f.group_key};
    for (double v : f.values) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<FeatureVector> features_from_table(const CsvTable& table) {
  const auto names = feature_names();
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(table.column(n));
  const auto run_col = table.column("run_id");
  const auto group_col = table.column("group_key");
  std::vector<FeatureVector> out;
  for (const auto& r : table.rows) {
    FeatureVector f;
    f.run_id = r[run_col];
    f.group_key = r[group_col];
    for (auto c : cols) f.values.push_back(parse_double(r[c]));
    f.alpha = f.values.front();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace steersig
