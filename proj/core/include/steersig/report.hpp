#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "steersig/sweep.hpp"

namespace steersig {

enum class ReportKind { nbf_curves, kl_curves, attention_heatmap, appendix_b_pair };

std::string to_string(ReportKind k);
ReportKind report_kind_from_string(const std::string& s);

// Narrows the runs a report draws from. Unset fields take the first value
// found in the sweep index (in grid order).
struct ReportSelection {
  std::optional<std::string> model, concept_name, method, function;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
};

struct ReportOutput {
  std::string svg;
  std::string csv;
};

//   nbf-curves         NBF per step, one line per alpha
//   kl-curves          KL(p_hat||q) and KL(p||q) per step with dashed means
//   attention-heatmap  layer x concept mean attention max-probability
//   appendix-b-pair    add vs rotate at one alpha with the shared alpha=0
//                      baseline; panels for NBF and KL(p_hat||q)
ReportOutput build_report(const std::filesystem::path& root, ReportKind kind, const ReportSelection& sel = {});

// Writes svg_path and the CSV next to it (same stem, .csv).
void emit_report(const std::filesystem::path& root, ReportKind kind, const std::filesystem::path& svg_path,
                 const ReportSelection& sel = {});

}  // namespace steersig
