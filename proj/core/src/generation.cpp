#include "steersig/generation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "steersig/error.hpp"
#include "steersig/rng.hpp"

namespace steersig {

std::string DecodePolicy::describe() const {
  if (kind == Kind::greedy) return "greedy";
  char buf[96];
  std::snprintf(buf, sizeof buf, "sample(t=%.17g,seed=%llu)", temperature,
                static_cast<unsigned long long>(seed));
  return buf;
}

void to_json(nlohmann::json& j, const DecodePolicy& p) {
  if (p.kind == DecodePolicy::Kind::greedy) {
    j = nlohmann::json{{"policy", "greedy"}};
  } else {
    j = nlohmann::json{{"policy", "sample"}, {"temperature", p.temperature}, {"seed", p.seed}};
  }
}

void from_json(const nlohmann::json& j, DecodePolicy& p) {
  const auto kind = j.value("policy", std::string("greedy"));
  if (kind == "greedy") {
    p = DecodePolicy::greedy();
  } else if (kind == "sample") {
    p = DecodePolicy::sample(j.value("temperature", 1.0), j.value("seed", std::uint64_t{0}));
  } else {
    throw InvalidArgument("unknown decode policy '" + kind + "'");
  }
}

TokenId argmax_token(std::span<const double> logits) {
  TokenId best = 0;
  for (TokenId i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

namespace {

TokenId sample_token(std::span<const double> logits, double temperature, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> w(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((logits[i] - mx) / temperature);
    z += w[i];
  }
  const double u = rng.uniform() * z;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(w.size() - 1);
}

}  // namespace

GenerationTrace generate(const Model& model, std::span<const TokenId> prompt, std::size_t steps,
                         const DecodePolicy& policy, const SteeringSpec* steering) {
  if (steps < 1) throw InvalidArgument("generate: T must be >= 1");
  if (prompt.empty()) throw InvalidArgument("generate: empty prompt");
  if (prompt.size() + steps - 1 > model.config.max_seq_len) {
    throw InvalidArgument("generate: prompt length + T - 1 exceeds max_seq_len");
  }
  if (policy.kind == DecodePolicy::Kind::sample && !(policy.temperature > 0.0)) {
    throw InvalidArgument("generate: temperature must be > 0");
  }
  std::optional<SteeringIntervention> hook;
  if (steering != nullptr) {
    steering->validate(model.config.n_layers, model.config.d_model);
    hook.emplace(*steering);
  }

  GenerationTrace trace;
  trace.prompt.assign(prompt.begin(), prompt.end());
  trace.policy = policy;
  Rng rng(policy.seed);
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  for (std::size_t t = 1; t <= steps; ++t) {
    StepTrace st = forward_step(model, context, hook ? &*hook : nullptr);
    st.step = t;
    const TokenId next = policy.kind == DecodePolicy::Kind::greedy
                             ? argmax_token(st.logits)
                             : sample_token(st.logits, policy.temperature, rng);
    trace.generated.push_back(next);
    trace.steps.push_back(std::move(st));
    context.push_back(next);
  }
  return trace;
}

}  // namespace steersig
