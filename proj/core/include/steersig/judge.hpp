#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "steersig/model.hpp"

namespace steersig {

struct ConceptLexicon {
  std::string concept_name;
  std::string criterion;           // sentence substituted into the prompt
  std::vector<std::string> words;  // token symbols counted as hits
  std::vector<TokenId> tokens;     // token ids counted as hits

  bool matches(TokenId id) const;
};

// "The text contains <concept> words or <concept> sentiment."
std::string default_criterion(const std::string& concept_name);

// Accepts a JSON array of lexicons or {"concepts": [...]}. Each entry has
// "concept", optional "criterion", and "words" and/or "tokens".
std::vector<ConceptLexicon> parse_lexicons(std::string_view json_text);
std::vector<ConceptLexicon> load_lexicons(const std::filesystem::path& path);
const ConceptLexicon& find_lexicon(const std::vector<ConceptLexicon>& lexicons,
                                   const std::string& concept_name);

std::string render_prompt(const ConceptLexicon& lexicon);

struct Judgment {
  int score = 0;
  int coherence = 0;

  bool operator==(const Judgment&) const = default;
};

// First balanced {...} in `text` that parses as JSON; both fields must be
// integers in [1, 10]. Throws FormatError otherwise.
Judgment parse_judgment(std::string_view text);

enum class ScoreMapping {
  divide_by_ten,  // x / 10
  min_max,        // (x - 1) / 9
};

struct AnnotationRecord {
  std::string run_id;
  std::string judge;
  int score = 0;
  int coherence = 0;
  double steering = 0.0;         // S(T)
  double coherence_norm = 0.0;   // C(T)
  double performance = 0.0;      // P(T) = S(T) * C(T)
};

AnnotationRecord normalize_and_combine(std::string run_id, std::string judge, int score, int coherence,
                                       ScoreMapping mapping = ScoreMapping::divide_by_ten);

// Offline stand-in judge:
//   score     = min(10, 1 + round(9 * min(1, hits / 5)))
//   coherence = max(1, 10 - round(9 * r))
// where r is the fraction of length-3 windows repeating an earlier window.
Judgment heuristic_judge(std::span<const TokenId> tokens, const ConceptLexicon& lexicon);

inline constexpr std::string_view kHeuristicJudgeId = "heuristic";

// One JSON object per line: {run_id, judge, score, coherence, S, C, P}.
std::string annotation_to_jsonl(const AnnotationRecord& r);
std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl,
                                                ScoreMapping mapping = ScoreMapping::divide_by_ten);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path,
                                               ScoreMapping mapping = ScoreMapping::divide_by_ten);

}  // namespace steersig
