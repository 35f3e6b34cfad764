#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace steersig {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_k = 8;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 128;
  std::size_t max_seq_len = 64;
  // Size N of the effective vocabulary; clamped to vocab_size on use.
  std::size_t effective_vocab = 50;
  // Scale of the transformer-block weights. Small values keep every block
  // close to the identity map on the residual stream.
  double init_scale = 0.1;
  std::uint64_t seed = 0;

  // Throws InvalidArgument when the dimensions are inconsistent.
  void validate() const;

  std::size_t effective_vocab_size() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Dense row-major float32 matrix. Weights are held in single precision so
// checkpoints round-trip exactly; all arithmetic runs in double.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

// Pre-norm block: h += Attn(RMSNorm(h)); h += FFN(RMSNorm(h)).
// Projection matrices act on row vectors (x * W).
struct LayerWeights {
  std::vector<float> attn_norm;  // d
  Matrix w_q, w_k, w_v;          // d x (n_heads * d_k)
  Matrix w_o;                    // (n_heads * d_k) x d
  std::vector<float> ffn_norm;   // d
  Matrix w_1;                    // d x d_ff
  std::vector<float> b_1;        // d_ff
  Matrix w_2;                    // d_ff x d
  std::vector<float> b_2;        // d
};

struct Model {
  ModelConfig config;
  Matrix embedding;  // |V| x d
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;  // d
  Matrix unembedding;             // |V| x d
  std::vector<float> unembedding_bias;

  // Checks every tensor shape against config and that weights are finite.
  void validate() const;

  // FNV-1a over config and raw weight bits.
  std::uint64_t checksum() const;
};

struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<float> values;
};

// Canonical tensor order used by checkpoints and checksums.
std::vector<TensorRef> named_tensors(Model& model);
std::vector<TensorRef> named_tensors(const Model& model);

// Allocates zero tensors with the shapes implied by config.
Model make_zero_model(const ModelConfig& config);

Model init_random(const ModelConfig& config);

struct ConceptPlan {
  std::string concept_name;
  std::vector<TokenId> tokens;
  double gamma = 0.0;
  std::vector<double> direction;  // unit vector in residual space
};

struct ConceptSeed {
  std::string name;
  std::vector<TokenId> tokens;
};

// init_random plus, for the concept, embedding and unembedding rows of its
// tokens shifted by gamma * u along a recorded unit direction u. The
// embedding shift lets contrastive extraction over concept-token prompts
// recover u.
std::pair<Model, ConceptPlan> init_concept_planted(const ModelConfig& config,
                                                   const ConceptSeed& concept_seed,
                                                   double gamma);

// Several concepts in one model. Directions are drawn per concept index and
// orthonormalized in order, so the first plan matches init_concept_planted.
std::pair<Model, std::vector<ConceptPlan>> init_multi_concept_planted(
    const ModelConfig& config, const std::vector<ConceptSeed>& concepts, double gamma);

// Hook for modifying the residual stream after a block. Layer indices are
// 1-based: layer l is the residual h^(l) produced by block l.
class ResidualIntervention {
 public:
  virtual ~ResidualIntervention() = default;
  virtual bool applies_at(std::size_t layer) const = 0;
  virtual void apply(std::size_t layer, std::span<double> residual) const = 0;
};

// Everything observed for the last position of one forward pass.
struct StepTrace {
  std::size_t step = 0;  // 1-based generation step
  // residual_pre[l] is h^(l) before any intervention at l, for l = 0..L;
  // residual_post[l] is the value passed on (equal to pre when unsteered).
  std::vector<std::vector<double>> residual_pre;
  std::vector<std::vector<double>> residual_post;
  // contribution[l] is the block l+1 update, so that
  // residual_pre[l+1] == residual_post[l] + contribution[l].
  std::vector<std::vector<double>> contribution;
  // attention[l][head] is the current position's row at block l+1.
  std::vector<std::vector<std::vector<double>>> attention;
  std::vector<double> logits;
};

StepTrace forward_step(const Model& model, std::span<const TokenId> context,
                       const ResidualIntervention* intervention = nullptr);

// Logit lens: final RMSNorm followed by U v + b_U.
std::vector<double> unembed(const Model& model, std::span<const double> v);

struct EffectiveDistribution {
  std::vector<TokenId> ids;
  std::vector<double> probs;
};

// Top-n logits (ties to the lower id) and a softmax restricted to them.
EffectiveDistribution effective_vocab(std::span<const double> logits, std::size_t n);

// Softmax of logits restricted to the given ids, in the given order.
EffectiveDistribution restrict_to(std::span<const double> logits,
                                  std::span<const TokenId> ids);

double gelu(double x);

// x / rms(x) * gain, eps = 1e-6.
std::vector<double> rms_norm(std::span<const double> x, std::span<const float> gain);

}  // namespace steersig
