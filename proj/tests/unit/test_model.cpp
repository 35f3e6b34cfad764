#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/generation.hpp"
#include "steersig/model.hpp"
#include "steersig/steering.hpp"
#include "steersig/vocab.hpp"

using namespace steersig;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

// Zeroes every block so the residual stream passes straight through.
Model zero_block_model(const ModelConfig& c) {
  Model m = init_random(c);
  for (auto& layer : m.layers) {
    for (Matrix* w : {&layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o, &layer.w_1, &layer.w_2})
      std::fill(w->data.begin(), w->data.end(), 0.0f);
    std::fill(layer.b_1.begin(), layer.b_1.end(), 0.0f);
    std::fill(layer.b_2.begin(), layer.b_2.end(), 0.0f);
  }
  return m;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("init_random is a function of config and seed") {
    CHECK(init_random(small_config(1)).checksum() == init_random(small_config(1)).checksum());
    CHECK(init_random(small_config(1)).checksum() != init_random(small_config(2)).checksum());
  }

  TEST_CASE("inconsistent dimensions are rejected") {
    ModelConfig c;
    c.d_k = 7;  // 4 * 7 != 32
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK_THROWS_AS(init_random(c), InvalidArgument);
  }

  TEST_CASE("planted concept tokens occupy the top logits of unembed(u)") {
    const ConceptSeed seed{"angry", {65, 66, 67, 68}};
    auto [m, plan] = init_concept_planted(small_config(), seed, 1.5);
    CHECK(plan.direction.size() == m.config.d_model);
    CHECK(testutil::norm(plan.direction) == doctest::Approx(1.0).epsilon(1e-12));
    const auto logits = unembed(m, plan.direction);
    std::vector<TokenId> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return logits[a] > logits[b]; });
    std::vector<TokenId> top(order.begin(), order.begin() + 4);
    std::sort(top.begin(), top.end());
    CHECK(top == seed.tokens);
  }

  TEST_CASE("gamma zero leaves init_random unchanged") {
    auto [m, plan] = init_concept_planted(small_config(), {"x", {40}}, 0.0);
    CHECK(m.checksum() == init_random(small_config()).checksum());
  }

  TEST_CASE("planting shifts concept rows by gamma times u") {
    const Model base = init_random(small_config());
    auto [m, plan] = init_concept_planted(small_config(), {"k", {3}}, 2.0);
    for (std::size_t j = 0; j < m.config.d_model; ++j) {
      CHECK(double(m.unembedding(3, j)) - double(base.unembedding(3, j)) ==
            doctest::Approx(2.0 * plan.direction[j]).epsilon(1e-6));
      CHECK(double(m.embedding(3, j)) - double(base.embedding(3, j)) ==
            doctest::Approx(2.0 * plan.direction[j]).epsilon(1e-6));
    }
    // other rows untouched
    for (std::size_t j = 0; j < m.config.d_model; ++j) CHECK(m.unembedding(4, j) == base.unembedding(4, j));
  }

  TEST_CASE("multi-concept directions are orthonormal and the first matches the single plan") {
    const std::vector<ConceptSeed> seeds{{"a", {65, 66}}, {"b", {97, 98}}, {"c", {48, 49}}};
    auto [m, plans] = init_multi_concept_planted(small_config(), seeds, 1.0);
    REQUIRE(plans.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 3; ++k) {
        const double dot = std::inner_product(plans[i].direction.begin(), plans[i].direction.end(),
                                              plans[k].direction.begin(), 0.0);
        CHECK(dot == doctest::Approx(i == k ? 1.0 : 0.0).epsilon(1e-12));
      }
    auto [single, plan] = init_concept_planted(small_config(), seeds[0], 1.0);
    CHECK(plan.direction == plans[0].direction);
  }

  TEST_CASE("attention rows are distributions; a single position attends to itself") {
    const Model m = init_random(small_config());
    const std::vector<TokenId> ctx{73, 32, 116, 104, 105, 110, 107};
    const auto step = forward_step(m, ctx);
    REQUIRE(step.attention.size() == m.config.n_layers);
    for (const auto& layer : step.attention)
      for (const auto& row : layer) {
        CHECK(row.size() == ctx.size());
        CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
      }
    const std::vector<TokenId> one{73};
    const auto s1 = forward_step(m, one);
    for (const auto& layer : s1.attention)
      for (const auto& row : layer) CHECK(row == std::vector<double>{1.0});
  }

  TEST_CASE("residual bookkeeping: pre[l+1] == post[l] + contribution[l]") {
    const Model m = init_random(small_config());
    const std::vector<TokenId> ctx{72, 101, 108};
    const auto step = forward_step(m, ctx);
    REQUIRE(step.residual_pre.size() == m.config.n_layers + 1);
    for (std::size_t l = 0; l < m.config.n_layers; ++l)
      for (std::size_t j = 0; j < m.config.d_model; ++j)
        CHECK(step.residual_pre[l + 1][j] ==
              doctest::Approx(step.residual_post[l][j] + step.contribution[l][j]).epsilon(1e-12));
    CHECK(step.residual_pre == step.residual_post);
  }

  TEST_CASE("all-zero blocks pass the embedding through to the logit lens") {
    const Model m = zero_block_model(small_config());
    const std::vector<TokenId> ctx{10, 20, 30};
    const auto step = forward_step(m, ctx);
    for (std::size_t j = 0; j < m.config.d_model; ++j)
      CHECK(step.residual_pre[m.config.n_layers][j] == doctest::Approx(double(m.embedding(30, j))));
    const auto expect = unembed(m, step.residual_pre[m.config.n_layers]);
    CHECK(step.logits == expect);
  }

  TEST_CASE("logit lens with identity unembedding returns the vector") {
    ModelConfig c;
    c.vocab_size = 32;
    c.d_model = 32;
    Model m = init_random(c);
    std::fill(m.unembedding.data.begin(), m.unembedding.data.end(), 0.0f);
    for (std::size_t i = 0; i < 32; ++i) m.unembedding(i, i) = 1.0f;
    std::fill(m.unembedding_bias.begin(), m.unembedding_bias.end(), 0.0f);
    std::fill(m.final_norm.begin(), m.final_norm.end(), 1.0f);
    // rms(v) == 1 makes the final RMSNorm an identity up to eps
    std::vector<double> v(32, 0.0);
    v[5] = std::sqrt(32.0);
    const auto logits = unembed(m, v);
    for (std::size_t i = 0; i < 32; ++i) CHECK(logits[i] == doctest::Approx(v[i]).epsilon(1e-6));

    Model b = init_random(small_config());
    const auto zero = unembed(b, std::vector<double>(b.config.d_model, 0.0));
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero[i] == doctest::Approx(double(b.unembedding_bias[i])));
  }

  TEST_CASE("effective vocabulary") {
    const std::vector<double> logits{3, 1, 2};
    const auto d = effective_vocab(logits, 2);
    CHECK(d.ids == std::vector<TokenId>{0, 2});
    CHECK(d.probs[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));

    const auto full = effective_vocab(logits, 3);
    double z = std::exp(3.0) + std::exp(1.0) + std::exp(2.0);
    CHECK(full.probs[0] == doctest::Approx(std::exp(3.0) / z));
    CHECK(full.probs[2] == doctest::Approx(std::exp(1.0) / z));

    const std::vector<double> flat(10, 0.25);
    const auto u = effective_vocab(flat, 4);
    CHECK(u.ids == std::vector<TokenId>{0, 1, 2, 3});
    for (double p : u.probs) CHECK(p == doctest::Approx(0.25));
  }

  TEST_CASE("generation: greedy is deterministic and alpha=0 steering is the identity") {
    auto [m, plan] = init_concept_planted(small_config(), {"angry", {65, 66, 67, 68}}, 1.5);
    const auto prompt = encode_text("I think", m.config.vocab_size);
    const auto a = generate(m, prompt, 8, DecodePolicy::greedy());
    const auto b = generate(m, prompt, 8, DecodePolicy::greedy());
    CHECK(a.generated == b.generated);
    CHECK(a.generated.size() == 8);

    SteeringSpec spec;
    spec.vector.values = plan.direction;
    spec.alpha = 0.0;
    spec.layers = {m.config.n_layers};
    for (auto f : {SteeringFunction::add, SteeringFunction::rotate}) {
      spec.function = f;
      const auto s = generate(m, prompt, 8, DecodePolicy::sample(1.0, 5), &spec);
      const auto u = generate(m, prompt, 8, DecodePolicy::sample(1.0, 5));
      CHECK(s.generated == u.generated);
      for (std::size_t t = 0; t < s.steps.size(); ++t) {
        CHECK(s.steps[t].logits == u.steps[t].logits);
        CHECK(s.steps[t].residual_post == u.steps[t].residual_post);
      }
    }
  }

  TEST_CASE("additive steering along the planted direction raises concept frequency") {
    auto [m, plan] = init_concept_planted(small_config(), {"angry", {65, 66, 67, 68}}, 1.5);
    const auto prompt = encode_text("I think", m.config.vocab_size);
    SteeringSpec spec;
    spec.vector.values = plan.direction;
    spec.function = SteeringFunction::add;
    spec.alpha = 20.0;
    spec.layers = {m.config.n_layers};
    auto count = [&](const GenerationTrace& t) {
      return std::count_if(t.generated.begin(), t.generated.end(), [](TokenId id) { return id >= 65 && id <= 68; });
    };
    const auto steered = generate(m, prompt, 30, DecodePolicy::sample(1.0, 9), &spec);
    const auto plain = generate(m, prompt, 30, DecodePolicy::sample(1.0, 9));
    CHECK(count(steered) > count(plain));
    CHECK(count(steered) > 15);
  }

  TEST_CASE("checkpoint round trip and corruption") {
    const Model m = init_random(small_config(8));
    const std::string bytes = save_checkpoint(m);
    const Model back = load_checkpoint(bytes);
    CHECK(back.checksum() == m.checksum());
    CHECK(save_checkpoint(back) == bytes);

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(load_checkpoint(bytes.substr(0, bytes.size() - 4)), FormatError);
    CHECK_THROWS_AS(load_checkpoint(bytes + "xxxx"), FormatError);

    // header lists one tensor fewer than the config implies
    auto [header, payload] = decode_container(kCheckpointMagic, bytes);
    header["tensors"].erase(header["tensors"].size() - 1);
    const std::string truncated_header = encode_container(
        kCheckpointMagic, header, std::as_bytes(std::span(payload.data(), payload.size())));
    CHECK_THROWS_AS(load_checkpoint(truncated_header), FormatError);
  }

  TEST_CASE("vocabulary symbols round trip") {
    for (TokenId id : {0u, 31u, 32u, 65u, 126u, 127u, 200u, 300u}) CHECK(symbol_token(token_symbol(id)) == id);
    CHECK(token_symbol(65) == "A");
    CHECK(decode_tokens(encode_text("I think", 128)) == "I think");
    CHECK_THROWS_AS(encode_text("\xff", 128), InvalidArgument);
  }
}
