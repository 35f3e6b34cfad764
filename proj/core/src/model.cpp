#include "steersig/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <numeric>
#include <tuple>
#include <type_traits>
#include <string>

#include <nlohmann/json.hpp>

#include "steersig/error.hpp"
#include "steersig/hashing.hpp"
#include "steersig/rng.hpp"

namespace steersig {

namespace {

constexpr double kNormEps = 1e-6;
constexpr std::uint64_t kPlantStream = 0x10000;

// y = x * W for a row vector x.
std::vector<double> row_times(std::span<const double> x, const Matrix& w) {
  std::vector<double> y(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const float* row = w.data.data() + i * w.cols;
    for (std::size_t j = 0; j < w.cols; ++j) y[j] += xi * static_cast<double>(row[j]);
  }
  return y;
}

void fill_normal(std::span<float> out, Rng& rng, double scale) {
  for (auto& v : out) v = static_cast<float>(rng.normal() * scale);
}

void require_shape(const std::string& name, std::size_t got, std::size_t want) {
  if (got != want) {
    throw InvalidArgument("tensor " + name + " has " + std::to_string(got) +
                          " values, expected " + std::to_string(want));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1) throw InvalidArgument("model config: n_layers must be >= 1");
  if (n_heads < 1 || d_k < 1) throw InvalidArgument("model config: n_heads and d_k must be >= 1");
  if (d_model != n_heads * d_k) {
    throw InvalidArgument("model config: d_model (" + std::to_string(d_model) +
                          ") must equal n_heads * d_k (" + std::to_string(n_heads * d_k) + ")");
  }
  if (d_ff < 1) throw InvalidArgument("model config: d_ff must be >= 1");
  if (vocab_size < 1) throw InvalidArgument("model config: vocab_size must be >= 1");
  if (max_seq_len < 1) throw InvalidArgument("model config: max_seq_len must be >= 1");
  if (effective_vocab < 1) throw InvalidArgument("model config: effective_vocab must be >= 1");
  if (!(init_scale > 0.0) || !std::isfinite(init_scale)) {
    throw InvalidArgument("model config: init_scale must be positive");
  }
}

std::size_t ModelConfig::effective_vocab_size() const {
  return std::min(effective_vocab, vocab_size);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"d_k", c.d_k},
                     {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len}, {"effective_vocab", c.effective_vocab},
                     {"init_scale", c.init_scale}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_k = j.value("d_k", d.d_k);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.effective_vocab = j.value("effective_vocab", d.effective_vocab);
  c.init_scale = j.value("init_scale", d.init_scale);
  c.seed = j.value("seed", d.seed);
}

Model make_zero_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t hd = config.n_heads * config.d_k;
  Model m;
  m.config = config;
  m.embedding = Matrix(config.vocab_size, d);
  m.layers.resize(config.n_layers);
  for (auto& l : m.layers) {
    l.attn_norm.assign(d, 0.0f);
    l.w_q = Matrix(d, hd);
    l.w_k = Matrix(d, hd);
    l.w_v = Matrix(d, hd);
    l.w_o = Matrix(hd, d);
    l.ffn_norm.assign(d, 0.0f);
    l.w_1 = Matrix(d, config.d_ff);
    l.b_1.assign(config.d_ff, 0.0f);
    l.w_2 = Matrix(config.d_ff, d);
    l.b_2.assign(d, 0.0f);
  }
  m.final_norm.assign(d, 0.0f);
  m.unembedding = Matrix(config.vocab_size, d);
  m.unembedding_bias.assign(config.vocab_size, 0.0f);
  return m;
}

namespace {

template <typename M>
auto collect_tensors(M& model) {
  using Span = std::conditional_t<std::is_const_v<M>, std::span<const float>, std::span<float>>;
  std::vector<std::tuple<std::string, std::vector<std::size_t>, Span>> out;
  auto mat = [&](std::string name, auto& m) {
    out.emplace_back(std::move(name), std::vector<std::size_t>{m.rows, m.cols}, Span(m.data));
  };
  auto vec = [&](std::string name, auto& v) {
    out.emplace_back(std::move(name), std::vector<std::size_t>{v.size()}, Span(v));
  };
  mat("embedding", model.embedding);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    vec(p + "attn_norm", l.attn_norm);
    mat(p + "w_q", l.w_q);
    mat(p + "w_k", l.w_k);
    mat(p + "w_v", l.w_v);
    mat(p + "w_o", l.w_o);
    vec(p + "ffn_norm", l.ffn_norm);
    mat(p + "w_1", l.w_1);
    vec(p + "b_1", l.b_1);
    mat(p + "w_2", l.w_2);
    vec(p + "b_2", l.b_2);
  }
  vec("final_norm", model.final_norm);
  mat("unembedding", model.unembedding);
  vec("unembedding_bias", model.unembedding_bias);
  return out;
}

}  // namespace

std::vector<TensorRef> named_tensors(Model& model) {
  std::vector<TensorRef> refs;
  for (auto& [name, shape, span] : collect_tensors(model)) refs.push_back({name, shape, span});
  return refs;
}

std::vector<TensorRef> named_tensors(const Model& model) {
  // The spans are only read through; callers get const access via the Model.
  return named_tensors(const_cast<Model&>(model));
}

void Model::validate() const {
  config.validate();
  const Model ref = make_zero_model(config);
  const auto want = named_tensors(ref);
  const auto have = named_tensors(*this);
  if (want.size() != have.size()) throw InvalidArgument("model: tensor count does not match config");
  for (std::size_t i = 0; i < want.size(); ++i) {
    require_shape(have[i].name, have[i].values.size(), want[i].values.size());
    for (float v : have[i].values) {
      if (!std::isfinite(v)) throw InvalidArgument("model: non-finite weight in " + have[i].name);
    }
  }
}

std::uint64_t Model::checksum() const {
  Fnv1a h;
  h.update(nlohmann::json(config).dump());
  for (const auto& t : named_tensors(*this)) {
    h.update(t.name);
    h.update(std::as_bytes(t.values));
  }
  return h.value();
}

Model init_random(const ModelConfig& config) {
  Model m = make_zero_model(config);
  const double block_scale = config.init_scale;
  std::uint64_t stream = 0;
  for (auto& t : named_tensors(m)) {
    Rng rng(derive_seed(config.seed, stream++));
    const bool is_norm = t.name.ends_with("norm");
    const bool is_bias = t.name.ends_with("bias") || t.name.ends_with(".b_1") || t.name.ends_with(".b_2");
    if (is_norm) {
      std::fill(t.values.begin(), t.values.end(), 1.0f);
    } else if (is_bias) {
      // zero
    } else if (t.name == "embedding") {
      fill_normal(t.values, rng, 1.0);
    } else if (t.name == "unembedding") {
      fill_normal(t.values, rng, 1.0 / std::sqrt(static_cast<double>(config.d_model)));
    } else {
      const double fan_in = static_cast<double>(t.shape[0]);
      fill_normal(t.values, rng, block_scale / std::sqrt(fan_in));
    }
  }
  return m;
}

std::pair<Model, std::vector<ConceptPlan>> init_multi_concept_planted(
    const ModelConfig& config, const std::vector<ConceptSeed>& concepts, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("planting gain must be >= 0");
  Model m = init_random(config);
  const std::size_t d = config.d_model;
  std::vector<ConceptPlan> plans;
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const auto& seed = concepts[c];
    if (seed.tokens.empty()) throw InvalidArgument("concept '" + seed.name + "' has no tokens");
    for (TokenId id : seed.tokens) {
      if (id >= config.vocab_size) {
        throw InvalidArgument("concept '" + seed.name + "' token " + std::to_string(id) +
                              " outside vocabulary");
      }
    }
    Rng rng(derive_seed(config.seed, kPlantStream + c));
    std::vector<double> u(d);
    for (auto& x : u) x = rng.normal();
    for (const auto& prev : plans) {
      const double dot = std::inner_product(u.begin(), u.end(), prev.direction.begin(), 0.0);
      for (std::size_t i = 0; i < d; ++i) u[i] -= dot * prev.direction[i];
    }
    const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    if (norm == 0.0) throw InvalidArgument("cannot plant more concepts than residual dimensions");
    for (auto& x : u) x /= norm;

    if (gamma > 0.0) {
      for (TokenId id : seed.tokens) {
        for (std::size_t j = 0; j < d; ++j) {
          m.unembedding(id, j) = static_cast<float>(m.unembedding(id, j) + gamma * u[j]);
          m.embedding(id, j) = static_cast<float>(m.embedding(id, j) + gamma * u[j]);
        }
      }
    }
    plans.push_back({seed.name, seed.tokens, gamma, std::move(u)});
  }
  return {std::move(m), std::move(plans)};
}

std::pair<Model, ConceptPlan> init_concept_planted(const ModelConfig& config,
                                                   const ConceptSeed& concept_seed,
                                                   double gamma) {
  auto [m, plans] = init_multi_concept_planted(config, {concept_seed}, gamma);
  return {std::move(m), std::move(plans.front())};
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

std::vector<double> rms_norm(std::span<const double> x, std::span<const float> gain) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * static_cast<double>(gain[i]);
  return y;
}

std::vector<double> unembed(const Model& model, std::span<const double> v) {
  if (v.size() != model.config.d_model) {
    throw InvalidArgument("unembed: vector has dimension " + std::to_string(v.size()) +
                          ", model expects " + std::to_string(model.config.d_model));
  }
  const auto normed = rms_norm(v, model.final_norm);
  const Matrix& u = model.unembedding;
  std::vector<double> logits(u.rows);
  for (std::size_t r = 0; r < u.rows; ++r) {
    const auto row = u.row(r);
    double acc = 0.0;
    for (std::size_t j = 0; j < u.cols; ++j) acc += static_cast<double>(row[j]) * normed[j];
    logits[r] = acc + static_cast<double>(model.unembedding_bias[r]);
  }
  return logits;
}

StepTrace forward_step(const Model& model, std::span<const TokenId> context,
                       const ResidualIntervention* intervention) {
  const ModelConfig& cfg = model.config;
  const std::size_t n = context.size();
  if (n == 0) throw InvalidArgument("forward_step: empty context");
  if (n > cfg.max_seq_len) {
    throw InvalidArgument("forward_step: context length " + std::to_string(n) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (TokenId id : context) {
    if (id >= cfg.vocab_size) throw InvalidArgument("forward_step: unknown token id " + std::to_string(id));
  }
  const std::size_t d = cfg.d_model;
  const std::size_t dk = cfg.d_k;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<std::vector<double>> h(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = model.embedding.row(context[i]);
    std::copy(row.begin(), row.end(), h[i].begin());
  }

  StepTrace trace;
  trace.residual_pre.push_back(h[n - 1]);
  trace.residual_post.push_back(h[n - 1]);

  for (std::size_t b = 0; b < cfg.n_layers; ++b) {
    const LayerWeights& w = model.layers[b];
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = rms_norm(h[i], w.attn_norm);
      q[i] = row_times(a, w.w_q);
      k[i] = row_times(a, w.w_k);
      v[i] = row_times(a, w.w_v);
    }
    std::vector<std::vector<double>> heads_out(n, std::vector<double>(cfg.n_heads * dk, 0.0));
    std::vector<std::vector<double>> last_rows(cfg.n_heads);
    std::vector<double> scores;
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      const std::size_t off = head * dk;
      for (std::size_t i = 0; i < n; ++i) {
        scores.assign(i + 1, 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += q[i][off + c] * k[j][off + c];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (auto& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (auto& s : scores) s /= z;
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t c = 0; c < dk; ++c) heads_out[i][off + c] += scores[j] * v[j][off + c];
        }
        if (i == n - 1) last_rows[head] = scores;
      }
    }
    trace.attention.push_back(std::move(last_rows));

    for (std::size_t i = 0; i < n; ++i) {
      auto delta = row_times(heads_out[i], w.w_o);
      std::vector<double> mid(d);
      for (std::size_t c = 0; c < d; ++c) mid[c] = h[i][c] + delta[c];
      const auto m = rms_norm(mid, w.ffn_norm);
      auto hidden = row_times(m, w.w_1);
      for (std::size_t c = 0; c < hidden.size(); ++c) {
        hidden[c] = gelu(hidden[c] + static_cast<double>(w.b_1[c]));
      }
      const auto ffn = row_times(hidden, w.w_2);
      for (std::size_t c = 0; c < d; ++c) {
        delta[c] += ffn[c] + static_cast<double>(w.b_2[c]);
        h[i][c] += delta[c];
      }
      if (i == n - 1) trace.contribution.push_back(std::move(delta));
    }

    const std::size_t layer = b + 1;
    trace.residual_pre.push_back(h[n - 1]);
    if (intervention != nullptr && intervention->applies_at(layer)) {
      for (auto& row : h) intervention->apply(layer, row);
    }
    trace.residual_post.push_back(h[n - 1]);
  }

  trace.logits = unembed(model, h[n - 1]);
  return trace;
}

EffectiveDistribution effective_vocab(std::span<const double> logits, std::size_t n) {
  if (n < 1) throw InvalidArgument("effective_vocab: N must be >= 1");
  if (n > logits.size()) {
    throw InvalidArgument("effective_vocab: N = " + std::to_string(n) + " exceeds vocabulary size " +
                          std::to_string(logits.size()));
  }
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  const auto by_logit = [&](TokenId a, TokenId b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), by_logit);
  order.resize(n);
  return restrict_to(logits, order);
}

EffectiveDistribution restrict_to(std::span<const double> logits, std::span<const TokenId> ids) {
  EffectiveDistribution dist;
  dist.ids.assign(ids.begin(), ids.end());
  dist.probs.resize(ids.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId id : ids) {
    if (id >= logits.size()) throw InvalidArgument("restrict_to: id outside logit vector");
    mx = std::max(mx, logits[id]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    dist.probs[i] = std::exp(logits[ids[i]] - mx);
    z += dist.probs[i];
  }
  for (auto& p : dist.probs) p /= z;
  return dist;
}

}  // namespace steersig
