#pragma once

#include <string>
#include <vector>

#include "steersig/generation.hpp"
#include "steersig/model.hpp"
#include "steersig/steering.hpp"
#include "steersig/table_io.hpp"

namespace steersig {

// Floor applied to the target distribution before log ratios.
inline constexpr double kKlSmoothing = 1e-10;

struct KlSeries {
  std::size_t layer = 0;
  std::vector<double> steered;    // KL(p_hat || q)
  std::vector<double> unsteered;  // KL(p || q)
  std::vector<double> diff;       // unsteered - steered
};

struct SignalBundle {
  std::size_t steps = 0;
  std::size_t effective_vocab = 0;
  std::vector<double> nbf;
  double nbf_mean = 0.0;
  // One entry per probed steering layer; kl.front() is the primary layer.
  std::vector<KlSeries> kl;
  // attention_max[l-1] is the max-over-heads series at block l = 1..L.
  std::vector<std::vector<double>> attention_max;
  // attention_head_max[l-1][head] is the per-head series.
  std::vector<std::vector<std::vector<double>>> attention_head_max;
};

// exp of the natural-log entropy; 0 log 0 = 0.
double branching_factor(const EffectiveDistribution& dist);

struct NbfSeries {
  std::vector<double> values;
  double mean = 0.0;
};

NbfSeries nbf_series(const GenerationTrace& trace, std::size_t n);

// sum p_i log(p_i / q_i) over a shared support. q is floored at kKlSmoothing
// and renormalized; identical inputs return exactly 0.
double kl_restricted(const EffectiveDistribution& p, const EffectiveDistribution& q);

// Per step t the support is the top-n ids of the unsteered run's final
// logits. p uses h^(layer) before the intervention, p_hat after it, and q
// the logit lens of the steering vector itself.
KlSeries kl_diff_series(const Model& model, const GenerationTrace& steered,
                        const GenerationTrace& unsteered, const SteeringVector& vec,
                        std::size_t layer, std::size_t n);

// Per step: max over heads of the largest entry in the current row at block `layer`.
std::vector<double> attention_max_series(const GenerationTrace& trace, std::size_t layer);

// [head][t]
std::vector<std::vector<double>> attention_head_max_series(const GenerationTrace& trace,
                                                           std::size_t layer);

// Grid [layer-1][concept] of mean attention max-probabilities, each cell the
// mean over the concept's traces of the per-trace step mean.
std::vector<std::vector<double>> attention_confidence_grid(
    const std::vector<std::vector<const GenerationTrace*>>& traces_per_concept);

SignalBundle compute_signals(const Model& model, const GenerationTrace& steered,
                             const GenerationTrace& unsteered, const SteeringVector& vec,
                             const std::vector<std::size_t>& kl_layers, std::size_t n);

// Columns: run_id, t, nbf, kl_steered, kl_unsteered, kl_diff, attn_max_1..L
// (plus kl_*_l<layer> for secondary probe layers).
CsvTable signals_table(const std::string& run_id, const SignalBundle& bundle);
// Columns: run_id, t, layer, head, max_prob
CsvTable head_signals_table(const std::string& run_id, const SignalBundle& bundle);

// Rebuilds a bundle (without per-head series) from signals_table output.
SignalBundle bundle_from_table(const CsvTable& table);

}  // namespace steersig
