#include "steersig/signals.hpp"

#include <algorithm>
#include <cmath>

#include "steersig/error.hpp"

namespace steersig {

double branching_factor(const EffectiveDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

NbfSeries nbf_series(const GenerationTrace& trace, std::size_t n) {
  if (trace.steps.empty()) throw InvalidArgument("nbf_series: empty trace");
  NbfSeries out;
  double sum = 0.0;
  for (const auto& st : trace.steps) {
    const double b = branching_factor(effective_vocab(st.logits, n));
    out.values.push_back(b);
    sum += b;
  }
  out.mean = sum / static_cast<double>(out.values.size());
  return out;
}

double kl_restricted(const EffectiveDistribution& p, const EffectiveDistribution& q) {
  if (p.ids != q.ids || p.probs.size() != q.probs.size()) {
    throw InvalidArgument("kl_restricted: distributions do not share a support");
  }
  if (p.probs == q.probs) return 0.0;
  std::vector<double> qs(q.probs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    qs[i] = std::max(q.probs[i], kKlSmoothing);
    z += qs[i];
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const double pi = p.probs[i];
    if (pi > 0.0) kl += pi * std::log(pi / (qs[i] / z));
  }
  // Rounding can leave a tiny negative value for near-identical inputs.
  return std::max(kl, 0.0);
}

KlSeries kl_diff_series(const Model& model, const GenerationTrace& steered,
                        const GenerationTrace& unsteered, const SteeringVector& vec,
                        std::size_t layer, std::size_t n) {
  if (steered.steps.size() != unsteered.steps.size()) {
    throw InvalidArgument("kl_diff_series: trace lengths differ (" + std::to_string(steered.steps.size()) +
                          " vs " + std::to_string(unsteered.steps.size()) + ")");
  }
  if (layer > model.config.n_layers) throw InvalidArgument("kl_diff_series: layer out of range");
  const auto q_logits = unembed(model, vec.values);
  KlSeries out;
  out.layer = layer;
  for (std::size_t t = 0; t < steered.steps.size(); ++t) {
    const auto support = effective_vocab(unsteered.steps[t].logits, n).ids;
    const auto& st = steered.steps[t];
    const auto p = restrict_to(unembed(model, st.residual_pre[layer]), support);
    const auto p_hat = restrict_to(unembed(model, st.residual_post[layer]), support);
    const auto q = restrict_to(q_logits, support);
    const double kl_unsteered = kl_restricted(p, q);
    const double kl_steered = kl_restricted(p_hat, q);
    out.unsteered.push_back(kl_unsteered);
    out.steered.push_back(kl_steered);
    out.diff.push_back(kl_unsteered - kl_steered);
  }
  return out;
}

std::vector<std::vector<double>> attention_head_max_series(const GenerationTrace& trace,
                                                           std::size_t layer) {
  if (trace.steps.empty()) return {};
  const auto& first = trace.steps.front().attention;
  if (layer < 1 || layer > first.size()) {
    throw InvalidArgument("attention layer " + std::to_string(layer) + " outside 1.." +
                          std::to_string(first.size()));
  }
  std::vector<std::vector<double>> out(first[layer - 1].size());
  for (const auto& st : trace.steps) {
    const auto& heads = st.attention.at(layer - 1);
    for (std::size_t h = 0; h < heads.size(); ++h) {
      out[h].push_back(*std::max_element(heads[h].begin(), heads[h].end()));
    }
  }
  return out;
}

std::vector<double> attention_max_series(const GenerationTrace& trace, std::size_t layer) {
  const auto per_head = attention_head_max_series(trace, layer);
  std::vector<double> out(trace.steps.size(), 0.0);
  for (const auto& series : per_head) {
    for (std::size_t t = 0; t < series.size(); ++t) out[t] = std::max(out[t], series[t]);
  }
  return out;
}

std::vector<std::vector<double>> attention_confidence_grid(
    const std::vector<std::vector<const GenerationTrace*>>& traces_per_concept) {
  std::size_t n_layers = 0;
  bool first = true;
  for (const auto& group : traces_per_concept) {
    if (group.empty()) throw InvalidArgument("attention grid: concept without traces");
    for (const auto* tr : group) {
      if (tr == nullptr || tr->steps.empty()) throw InvalidArgument("attention grid: empty trace");
      const std::size_t l = tr->steps.front().attention.size();
      if (first) {
        n_layers = l;
        first = false;
      } else if (l != n_layers) {
        throw InvalidArgument("attention grid: traces disagree on layer count");
      }
    }
  }
  std::vector<std::vector<double>> grid(n_layers, std::vector<double>(traces_per_concept.size(), 0.0));
  for (std::size_t c = 0; c < traces_per_concept.size(); ++c) {
    const auto& group = traces_per_concept[c];
    for (std::size_t l = 1; l <= n_layers; ++l) {
      double acc = 0.0;
      for (const auto* tr : group) {
        const auto s = attention_max_series(*tr, l);
        double m = 0.0;
        for (double v : s) m += v;
        acc += m / static_cast<double>(s.size());
      }
      grid[l - 1][c] = acc / static_cast<double>(group.size());
    }
  }
  return grid;
}

SignalBundle compute_signals(const Model& model, const GenerationTrace& steered,
                             const GenerationTrace& unsteered, const SteeringVector& vec,
                             const std::vector<std::size_t>& kl_layers, std::size_t n) {
  if (kl_layers.empty()) throw InvalidArgument("compute_signals: no probe layer");
  SignalBundle b;
  b.steps = steered.steps.size();
  b.effective_vocab = n;
  auto nbf = nbf_series(steered, n);
  b.nbf = std::move(nbf.values);
  b.nbf_mean = nbf.mean;
  for (auto l : kl_layers) b.kl.push_back(kl_diff_series(model, steered, unsteered, vec, l, n));
  for (std::size_t l = 1; l <= model.config.n_layers; ++l) {
    b.attention_max.push_back(attention_max_series(steered, l));
    b.attention_head_max.push_back(attention_head_max_series(steered, l));
  }
  return b;
}

CsvTable signals_table(const std::string& run_id, const SignalBundle& bundle) {
  if (bundle.kl.empty()) throw InvalidArgument("signals_table: bundle without KL series");
  CsvTable t;
  t.header = {"run_id", "t", "nbf", "kl_steered", "kl_unsteered", "kl_diff"};
  for (std::size_t k = 1; k < bundle.kl.size(); ++k) {
    const auto suffix = "_l" + std::to_string(bundle.kl[k].layer);
    t.header.push_back("kl_steered" + suffix);
    t.header.push_back("kl_unsteered" + suffix);
    t.header.push_back("kl_diff" + suffix);
  }
  for (std::size_t l = 1; l <= bundle.attention_max.size(); ++l) {
    t.header.push_back("attn_max_" + std::to_string(l));
  }
  for (std::size_t i = 0; i < bundle.steps; ++i) {
    std::vector<std::string> row{run_id, std::to_string(i + 1), format_double(bundle.nbf[i])};
    for (const auto& kl : bundle.kl) {
      row.push_back(format_double(kl.steered[i]));
      row.push_back(format_double(kl.unsteered[i]));
      row.push_back(format_double(kl.diff[i]));
    }
    for (const auto& a : bundle.attention_max) row.push_back(format_double(a[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable head_signals_table(const std::string& run_id, const SignalBundle& bundle) {
  CsvTable t;
  t.header = {"run_id", "t", "layer", "head", "max_prob"};
  for (std::size_t i = 0; i < bundle.steps; ++i) {
    for (std::size_t l = 0; l < bundle.attention_head_max.size(); ++l) {
      for (std::size_t h = 0; h < bundle.attention_head_max[l].size(); ++h) {
        t.rows.push_back({run_id, std::to_string(i + 1), std::to_string(l + 1), std::to_string(h),
                          format_double(bundle.attention_head_max[l][h][i])});
      }
    }
  }
  return t;
}

SignalBundle bundle_from_table(const CsvTable& table) {
  SignalBundle b;
  b.steps = table.rows.size();
  const auto col = [&](const std::string& name) {
    std::vector<double> v;
    const auto c = table.column(name);
    for (const auto& r : table.rows) v.push_back(parse_double(r[c]));
    return v;
  };
  b.nbf = col("nbf");
  double sum = 0.0;
  for (double v : b.nbf) sum += v;
  b.nbf_mean = b.steps ? sum / static_cast<double>(b.steps) : 0.0;
  KlSeries primary;
  primary.steered = col("kl_steered");
  primary.unsteered = col("kl_unsteered");
  primary.diff = col("kl_diff");
  b.kl.push_back(std::move(primary));
  for (const auto& h : table.header) {
    if (h.starts_with("kl_steered_l")) {
      const auto suffix = h.substr(std::string("kl_steered").size());
      KlSeries k;
      k.layer = std::stoul(suffix.substr(2));
      k.steered = col("kl_steered" + suffix);
      k.unsteered = col("kl_unsteered" + suffix);
      k.diff = col("kl_diff" + suffix);
      b.kl.push_back(std::move(k));
    }
  }
  for (std::size_t l = 1; table.has_column("attn_max_" + std::to_string(l)); ++l) {
    b.attention_max.push_back(col("attn_max_" + std::to_string(l)));
  }
  return b;
}

}  // namespace steersig
