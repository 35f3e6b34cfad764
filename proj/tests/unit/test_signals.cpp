#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "steersig/error.hpp"
#include "steersig/features.hpp"
#include "steersig/generation.hpp"
#include "steersig/signals.hpp"
#include "steersig/steering.hpp"
#include "steersig/table_io.hpp"
#include "steersig/vocab.hpp"

using namespace steersig;

namespace {

EffectiveDistribution dist(std::vector<double> p) {
  EffectiveDistribution d;
  d.probs = std::move(p);
  for (std::size_t i = 0; i < d.probs.size(); ++i) d.ids.push_back(static_cast<TokenId>(i));
  return d;
}

GenerationTrace trace_with_attention(const std::vector<std::vector<std::vector<double>>>& rows_per_step) {
  GenerationTrace t;
  for (std::size_t s = 0; s < rows_per_step.size(); ++s) {
    StepTrace st;
    st.step = s + 1;
    st.attention = {rows_per_step[s]};
    t.steps.push_back(st);
  }
  return t;
}

struct Fixture {
  Model model;
  ConceptPlan plan;
  std::vector<TokenId> prompt;
  Fixture() {
    ModelConfig c;
    c.seed = 21;
    std::tie(model, plan) = init_concept_planted(c, {"angry", {65, 66, 67, 68}}, 1.5);
    prompt = encode_text("I think", c.vocab_size);
  }
};

}  // namespace

TEST_SUITE("signals") {
  TEST_CASE("branching factor anchors") {
    CHECK(branching_factor(dist(std::vector<double>(8, 0.125))) == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(branching_factor(dist({1.0, 0.0, 0.0})) == 1.0);
    // exp(-(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1)), evaluated in long double
    const long double h = -(0.7L * std::log(0.7L) + 0.2L * std::log(0.2L) + 0.1L * std::log(0.1L));
    CHECK(branching_factor(dist({0.7, 0.2, 0.1})) == doctest::Approx(double(std::exp(h))).epsilon(1e-12));
    CHECK(branching_factor(dist({0.7, 0.2, 0.1})) == doctest::Approx(2.229591873920416).epsilon(1e-12));
  }

  TEST_CASE("restricted KL") {
    const auto p = dist({0.5, 0.5}), q = dist({0.9, 0.1});
    CHECK(kl_restricted(p, p) == 0.0);
    // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.5 ln(25/9)
    CHECK(kl_restricted(p, q) == doctest::Approx(0.5 * std::log(25.0 / 9.0)).epsilon(1e-12));
    CHECK(kl_restricted(p, q) == doctest::Approx(0.5108).epsilon(1e-4));
    const double with_zero = kl_restricted(p, dist({1.0, 0.0}));
    CHECK(std::isfinite(with_zero));
    CHECK(with_zero > 10.0);
    // composed difference from the worked example
    const auto p_hat = dist({0.9, 0.1});
    CHECK(kl_restricted(p, q) - kl_restricted(p_hat, q) == doctest::Approx(0.5108).epsilon(1e-4));
    EffectiveDistribution other = dist({0.5, 0.5});
    other.ids = {0, 7};
    CHECK_THROWS_AS(kl_restricted(p, other), InvalidArgument);
  }

  TEST_CASE("restricted KL matches a brute-force softmax on a small vocabulary") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> a(32), b(32);
      for (auto& v : a) v = 3.0 * rng.normal();
      for (auto& v : b) v = 3.0 * rng.normal();
      const auto support = effective_vocab(a, 32).ids;
      const auto p = restrict_to(a, support), q = restrict_to(b, support);
      double za = 0, zb = 0;
      for (int i = 0; i < 32; ++i) za += std::exp(a[i]), zb += std::exp(b[i]);
      double kl = 0;
      for (int i = 0; i < 32; ++i) {
        const double pa = std::exp(a[i]) / za, pb = std::exp(b[i]) / zb;
        kl += pa * std::log(pa / pb);
      }
      CHECK(kl_restricted(p, q) == doctest::Approx(kl).epsilon(1e-9));
    }
  }

  TEST_CASE("attention max-probability") {
    const auto t = trace_with_attention({{{1.0}}, {{0.1, 0.7, 0.2}}});
    const auto s = attention_max_series(t, 1);
    CHECK(s == std::vector<double>{1.0, 0.7});
    CHECK_THROWS_AS(attention_max_series(t, 2), InvalidArgument);
    const auto grid = attention_confidence_grid({{&t}, {&t}});
    REQUIRE(grid.size() == 1);
    CHECK(grid[0][0] == doctest::Approx(0.85));
    CHECK(grid[0][0] == grid[0][1]);
  }

  TEST_CASE("alpha zero gives zero KL difference and identical NBF") {
    Fixture f;
    const auto policy = DecodePolicy::sample(1.0, 2);
    SteeringSpec spec;
    spec.vector.values = f.plan.direction;
    spec.function = SteeringFunction::rotate;
    spec.alpha = 0.0;
    spec.layers = {2};
    const auto steered = generate(f.model, f.prompt, 12, policy, &spec);
    const auto plain = generate(f.model, f.prompt, 12, policy);
    const auto bundle = compute_signals(f.model, steered, plain, spec.vector, {2}, 50);
    for (double d : bundle.kl.front().diff) CHECK(d == 0.0);
    CHECK(bundle.nbf == nbf_series(plain, 50).values);
    for (std::size_t l = 1; l <= f.model.config.n_layers; ++l)
      CHECK(bundle.attention_max[l - 1] == attention_max_series(plain, l));
  }

  TEST_CASE("steering toward the planted direction lowers KL to the vector's own distribution") {
    Fixture f;
    const auto policy = DecodePolicy::sample(1.0, 2);
    SteeringSpec spec;
    spec.vector.values = f.plan.direction;
    spec.function = SteeringFunction::rotate;
    spec.alpha = 240.0;
    spec.layers = {4};
    const auto steered = generate(f.model, f.prompt, 12, policy, &spec);
    const auto plain = generate(f.model, f.prompt, 12, policy);
    const auto kl = kl_diff_series(f.model, steered, plain, spec.vector, 4, 50);
    double mean_s = 0, mean_u = 0;
    for (std::size_t t = 0; t < kl.steered.size(); ++t) mean_s += kl.steered[t], mean_u += kl.unsteered[t];
    CHECK(mean_s < mean_u);
  }

  TEST_CASE("signals table round trip") {
    Fixture f;
    SteeringSpec spec;
    spec.vector.values = f.plan.direction;
    spec.alpha = 3.0;
    spec.layers = {2};
    const auto policy = DecodePolicy::sample(1.0, 4);
    const auto steered = generate(f.model, f.prompt, 6, policy, &spec);
    const auto plain = generate(f.model, f.prompt, 6, policy);
    const auto bundle = compute_signals(f.model, steered, plain, spec.vector, {2, 3}, 50);
    const auto table = signals_table("r1", bundle);
    CHECK(table.has_column("kl_diff"));
    CHECK(table.has_column("attn_max_4"));
    CHECK(table.has_column("kl_diff_l3"));
    const auto back = bundle_from_table(parse_csv(write_csv(table)));
    CHECK(back.nbf == bundle.nbf);
    CHECK(back.kl.front().diff == bundle.kl.front().diff);
    CHECK(back.kl.at(1).steered == bundle.kl.at(1).steered);
    CHECK(back.attention_max == bundle.attention_max);
    CHECK(write_csv(signals_table("r1", back)) == write_csv(table));
    const auto heads = head_signals_table("r1", bundle);
    CHECK(heads.rows.size() == 6 * f.model.config.n_layers * f.model.config.n_heads);
  }
}

TEST_SUITE("features") {
  TEST_CASE("summary statistics worked example") {
    const std::vector<double> x{1, 2, 3};
    const auto s = summarize(x);
    CHECK(s.mean == doctest::Approx(2.0));
    CHECK(s.median == 2.0);
    CHECK(s.range == 2.0);
    CHECK(s.variance == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(s.std == doctest::Approx(0.816496580927726).epsilon(1e-12));
    CHECK(s.skewness == doctest::Approx(0.0).scale(1.0));
    CHECK(s.kurtosis == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(s.min == 1.0);
    CHECK(s.max == 3.0);

    const auto c = summarize(std::vector<double>{5, 5, 5});
    CHECK(c.variance == 0.0);
    CHECK(c.skewness == 0.0);
    CHECK(c.kurtosis == 0.0);

    const auto one = summarize(std::vector<double>{7});
    CHECK(one.mean == 7.0);
    CHECK(one.median == 7.0);
    CHECK(one.range == 0.0);

    CHECK(summarize(std::vector<double>{4, 1, 3, 2}).median == 2.5);
    CHECK_THROWS_AS(summarize(std::vector<double>{}), InvalidArgument);
  }

  TEST_CASE("skewness and kurtosis against direct moment sums") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(17);
      for (auto& v : x) v = std::exp(rng.normal());
      double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
      double m2 = 0, m3 = 0, m4 = 0;
      for (double v : x) {
        m2 += std::pow(v - m, 2) / x.size();
        m3 += std::pow(v - m, 3) / x.size();
        m4 += std::pow(v - m, 4) / x.size();
      }
      const auto s = summarize(x);
      CHECK(s.skewness == doctest::Approx(m3 / std::pow(m2, 1.5)).epsilon(1e-10));
      CHECK(s.kurtosis == doctest::Approx(m4 / (m2 * m2) - 3.0).epsilon(1e-10));
    }
  }

  TEST_CASE("feature vectors have a fixed layout") {
    CHECK(feature_names().size() == kFeatureLength);
    CHECK(kFeatureLength == 46);
    CHECK(feature_names().front() == "alpha");
    CHECK(feature_names()[1] == "nbf_mean");
    CHECK(feature_names().back() == "attn_max_max");

    SignalBundle b;
    b.nbf = {1, 2, 3};
    b.kl = {KlSeries{2, {0.1, 0.2, 0.3}, {0.3, 0.3, 0.3}, {0.2, 0.1, 0.0}}};
    b.attention_max = {{1, 0.5, 0.4}, {1, 0.9, 0.8}};
    const auto a = build_feature_vector(b, 0.0, "r", "g", 2);
    const auto c = build_feature_vector(b, 40.0, "r", "g", 2);
    CHECK(a.values.size() == kFeatureLength);
    CHECK(a.values == build_feature_vector(b, 0.0, "r", "g", 2).values);
    for (std::size_t i = 1; i < kFeatureLength; ++i) CHECK(a.values[i] == c.values[i]);
    CHECK(c.values[0] == 40.0);
    CHECK(a.values[1] == doctest::Approx(2.0));   // nbf mean
    CHECK(a.values[45] == 1.0);                   // attn max of layer 2
    CHECK(a.values[38] == doctest::Approx(0.9));  // attn median of layer 2

    SignalBundle longer = b;
    longer.nbf.insert(longer.nbf.end(), {1, 2, 3});
    for (auto* s : {&longer.kl[0].steered, &longer.kl[0].unsteered, &longer.kl[0].diff}) s->insert(s->end(), s->begin(), s->end());
    for (auto& s : longer.attention_max) s.insert(s.end(), s.begin(), s.end());
    CHECK(build_feature_vector(longer, 0.0, "r", "g", 2).values.size() == kFeatureLength);
    CHECK_THROWS_AS(build_feature_vector(b, 0.0, "r", "g", 3), InvalidArgument);
  }

  TEST_CASE("feature table round trip") {
    FeatureVector f;
    f.run_id = "abc";
    f.group_key = "m|c|caa|add";
    f.values.assign(kFeatureLength, 0.0);
    for (std::size_t i = 0; i < kFeatureLength; ++i) f.values[i] = 0.1 * double(i) - 1.0 / 3.0;
    f.alpha = f.values[0];
    const auto back = features_from_table(parse_csv(write_csv(feature_table({f}))));
    REQUIRE(back.size() == 1);
    CHECK(back[0].values == f.values);
    CHECK(back[0].group_key == f.group_key);
  }

  TEST_CASE("scaler") {
    const FeatureMatrix train{{1, 4}, {2, 4}, {3, 4}};
    const auto sc = fit_scaler(train);
    const auto z = apply_scaler(sc, train);
    CHECK(z[0][0] == doctest::Approx(-1.224744871391589).epsilon(1e-12));
    CHECK(z[1][0] == doctest::Approx(0.0).scale(1.0));
    CHECK(z[2][0] == doctest::Approx(1.224744871391589).epsilon(1e-12));
    for (const auto& r : z) CHECK(r[1] == 0.0);
    CHECK(sc.constant[1]);
    // test rows use the training statistics only
    const auto t = apply_scaler(sc, FeatureMatrix{{5, 9}});
    CHECK(t[0][0] == doctest::Approx(3.0 / std::sqrt(2.0 / 3.0)));
    CHECK(t[0][1] == 5.0);
  }
}
