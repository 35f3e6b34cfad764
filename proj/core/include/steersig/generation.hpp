#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "steersig/model.hpp"
#include "steersig/steering.hpp"

namespace steersig {

struct DecodePolicy {
  enum class Kind { greedy, sample };
  Kind kind = Kind::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static DecodePolicy greedy() { return {}; }
  static DecodePolicy sample(double temperature, std::uint64_t seed) {
    return {Kind::sample, temperature, seed};
  }

  // e.g. "greedy" or "sample(t=1,seed=7)"
  std::string describe() const;
};

void to_json(nlohmann::json& j, const DecodePolicy& p);
void from_json(const nlohmann::json& j, DecodePolicy& p);

struct GenerationTrace {
  std::vector<TokenId> prompt;
  std::vector<TokenId> generated;
  std::vector<StepTrace> steps;  // steps[t-1] produced generated[t-1]
  DecodePolicy policy;
};

// Autoregressive loop without a KV cache: every step re-runs the full
// context, so steering applies to all positions at each layer in the set.
GenerationTrace generate(const Model& model, std::span<const TokenId> prompt, std::size_t steps,
                         const DecodePolicy& policy, const SteeringSpec* steering = nullptr);

// Index of the largest logit, lowest id on ties.
TokenId argmax_token(std::span<const double> logits);

}  // namespace steersig
