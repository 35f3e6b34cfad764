#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "steersig/agreement.hpp"
#include "steersig/features.hpp"
#include "steersig/forest.hpp"
#include "steersig/judge.hpp"
#include "steersig/remote_judge.hpp"
#include "steersig/sweep.hpp"

namespace steersig {

inline constexpr std::size_t kDefaultSeedCount = 5;
// Seeds used for the five repeated group splits.
inline constexpr std::uint64_t kDefaultSeeds[kDefaultSeedCount] = {22, 42, 31, 61, 10};

struct UnannotatedMarker {
  std::string run_id;
  std::string judge;
  std::string status;
  std::string detail;
};

struct AnnotateOptions {
  enum class Judge { heuristic, remote };
  Judge judge = Judge::heuristic;
  std::optional<RemoteJudgeConfig> remote;
  std::vector<ConceptLexicon> lexicons;  // empty: lexicons stored in the sweep index
  ScoreMapping mapping = ScoreMapping::divide_by_ten;
  bool force = false;  // re-judge runs that already carry this judge's record
};

struct AnnotateResult {
  std::vector<AnnotationRecord> records;  // new records only
  std::vector<UnannotatedMarker> unannotated;
  std::size_t skipped = 0;
  std::size_t transport_failures = 0;
};

// Per run, appends to runs/<id>/annotations.jsonl; failures go to
// runs/<id>/unannotated.jsonl. Afterwards <root>/annotations.jsonl and
// <root>/unannotated.jsonl are rebuilt from the per-run files in index order.
// The remote judge reads its token before the first request and logs every
// exchange to <root>/judge_log.jsonl.
AnnotateResult annotate_runs(const std::filesystem::path& root, const AnnotateOptions& options);

// Rebuilds the two root files from per-run files; returns the annotations.
std::vector<AnnotationRecord> consolidate_annotations(const std::filesystem::path& root);

struct LabeledSet {
  std::string judge;
  std::vector<FeatureVector> rows;
  std::vector<double> labels;  // P per row
};

// Joins feature rows with each judge's records on run_id. Every feature row
// needs a label from every judge that appears (DataError otherwise).
std::vector<LabeledSet> join_labels(const std::vector<FeatureVector>& features,
                                    const std::vector<AnnotationRecord>& annotations);

struct FitOptions {
  ForestParams params;
  std::vector<std::uint64_t> seeds{std::begin(kDefaultSeeds), std::end(kDefaultSeeds)};
  double test_fraction = 0.3;
  // Permutation null: labels shuffled with this seed before splitting.
  std::optional<std::uint64_t> permute_labels;
};

struct FitResult {
  EvaluationReport report;
  std::vector<SplitPlan> splits;
};

// Per seed: group split, scaler fitted on train rows, forest (seeded with
// the split seed), metrics on the held-out groups.
FitResult fit_and_evaluate(const LabeledSet& data, const FitOptions& options);

// Tab-separated summary, one row per metric.
std::string format_reports(const std::vector<EvaluationReport>& reports);

struct ComparisonCell {
  std::string model, concept_name, method, judge;
  std::optional<double> best_add, best_rotate;
  double alpha_add = 0.0, alpha_rotate = 0.0;
};

struct ComparisonRow {
  std::string model, method, judge;
  double add = 0.0, rotate = 0.0;
  std::size_t concepts = 0;
  std::string winner;  // "add", "rotate" or empty for a tie
};

struct ComparisonTable {
  std::vector<ComparisonCell> cells;
  std::vector<ComparisonRow> rows;  // mean over concepts of matched cells
  std::vector<std::string> warnings;
};

// Best P over the alpha grid (averaged over decode seeds) per
// (model, concept, method, judge) and function.
ComparisonTable compare_functions(const SweepIndex& index, const std::vector<AnnotationRecord>& annotations);

std::string comparison_to_text(const ComparisonTable& t);
std::string comparison_to_csv(const ComparisonTable& t);

enum class AgreementQuantity { score, coherence, combined };
std::string to_string(AgreementQuantity q);
AgreementQuantity agreement_quantity_from_string(const std::string& s);

// Subjects are run ids (sorted), judges sorted by label. Subjects missing a
// judge keep a gap in the mask.
RatingsMatrix ratings_from_annotations(const std::vector<AnnotationRecord>& annotations, AgreementQuantity q);

// Drops subjects that lack any judge's rating.
RatingsMatrix complete_subjects(const RatingsMatrix& m);

}  // namespace steersig
