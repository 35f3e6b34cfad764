#include "steersig/judge.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/vocab.hpp"

namespace steersig {

bool ConceptLexicon::matches(TokenId id) const {
  if (std::find(tokens.begin(), tokens.end(), id) != tokens.end()) return true;
  const auto sym = token_symbol(id);
  return std::find(words.begin(), words.end(), sym) != words.end();
}

std::string default_criterion(const std::string& concept_name) {
  return "The text contains " + concept_name + " words or " + concept_name + " sentiment.";
}

std::vector<ConceptLexicon> parse_lexicons(std::string_view json_text) {
  std::vector<ConceptLexicon> out;
  try {
    auto j = nlohmann::json::parse(json_text);
    if (j.is_object() && j.contains("concepts")) j = j["concepts"];
    if (j.is_object()) j = nlohmann::json::array({j});
    for (const auto& e : j) {
      ConceptLexicon lex;
      lex.concept_name = e.at("concept").get<std::string>();
      lex.criterion = e.value("criterion", default_criterion(lex.concept_name));
      lex.words = e.value("words", std::vector<std::string>{});
      lex.tokens = e.value("tokens", std::vector<TokenId>{});
      if (lex.words.empty() && lex.tokens.empty()) {
        throw FormatError("lexicon for '" + lex.concept_name + "' has no words or tokens");
      }
      if (lex.criterion.empty()) throw FormatError("lexicon for '" + lex.concept_name + "' has an empty criterion");
      out.push_back(std::move(lex));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed lexicon file: ") + e.what());
  }
  return out;
}

std::vector<ConceptLexicon> load_lexicons(const std::filesystem::path& path) {
  return parse_lexicons(read_file(path));
}

const ConceptLexicon& find_lexicon(const std::vector<ConceptLexicon>& lexicons,
                                   const std::string& concept_name) {
  for (const auto& l : lexicons) {
    if (l.concept_name == concept_name) return l;
  }
  throw DataError("no lexicon for concept '" + concept_name + "'");
}

std::string render_prompt(const ConceptLexicon& lexicon) {
  std::string p;
  p += "System role: You score texts generated by a language model based on the following\n";
  p += "criteria:\n";
  p += "score: \"" + lexicon.criterion + "\"\n";
  p += "coherence: \"The text is coherent and grammatically correct.\"\n";
  p += "Provide integer scores from 1 to 10.\n";
  p += "Output JSON only: {\"score\": int, \"coherence\": int}";
  return p;
}

namespace {

// End index (exclusive) of the balanced object starting at `open`, or npos.
std::size_t match_object(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

int rating_field(const nlohmann::json& obj, const char* name) {
  if (!obj.contains(name)) throw FormatError(std::string("judgment is missing field '") + name + "'");
  const auto& v = obj[name];
  double value = 0.0;
  if (v.is_number_integer()) {
    value = static_cast<double>(v.get<long long>());
  } else if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) {
    value = v.get<double>();
  } else {
    throw FormatError(std::string("judgment field '") + name + "' is not an integer");
  }
  if (value < 1.0 || value > 10.0) {
    throw FormatError(std::string("judgment field '") + name + "' outside [1, 10]");
  }
  return static_cast<int>(value);
}

}  // namespace

Judgment parse_judgment(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    const auto end = match_object(text, open);
    if (end == std::string_view::npos) break;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text.substr(open, end - open));
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    if (!obj.is_object()) continue;
    return {rating_field(obj, "score"), rating_field(obj, "coherence")};
  }
  throw FormatError("no JSON object found in judgment");
}

AnnotationRecord normalize_and_combine(std::string run_id, std::string judge, int score, int coherence,
                                       ScoreMapping mapping) {
  if (score < 1 || score > 10 || coherence < 1 || coherence > 10) {
    throw InvalidArgument("ratings must be integers in [1, 10]");
  }
  const auto map = [mapping](int x) {
    return mapping == ScoreMapping::divide_by_ten ? x / 10.0 : (x - 1) / 9.0;
  };
  AnnotationRecord r;
  r.run_id = std::move(run_id);
  r.judge = std::move(judge);
  r.score = score;
  r.coherence = coherence;
  r.steering = map(score);
  r.coherence_norm = map(coherence);
  r.performance = r.steering * r.coherence_norm;
  return r;
}

Judgment heuristic_judge(std::span<const TokenId> tokens, const ConceptLexicon& lexicon) {
  std::size_t hits = 0;
  for (TokenId t : tokens) {
    if (lexicon.matches(t)) ++hits;
  }
  const double hit_ratio = std::min(1.0, static_cast<double>(hits) / 5.0);
  const int score = std::min(10, 1 + static_cast<int>(std::lround(9.0 * hit_ratio)));

  double repeat_ratio = 0.0;
  if (tokens.size() >= 3) {
    std::set<std::array<TokenId, 3>> seen;
    std::size_t repeats = 0;
    const std::size_t windows = tokens.size() - 2;
    for (std::size_t i = 0; i < windows; ++i) {
      if (!seen.insert({tokens[i], tokens[i + 1], tokens[i + 2]}).second) ++repeats;
    }
    repeat_ratio = static_cast<double>(repeats) / static_cast<double>(windows);
  }
  const int coherence = std::max(1, 10 - static_cast<int>(std::lround(9.0 * repeat_ratio)));
  return {score, coherence};
}

std::string annotation_to_jsonl(const AnnotationRecord& r) {
  return nlohmann::json{{"run_id", r.run_id},
                        {"judge", r.judge},
                        {"score", r.score},
                        {"coherence", r.coherence},
                        {"S", r.steering},
                        {"C", r.coherence_norm},
                        {"P", r.performance}}
             .dump() +
         "\n";
}

std::vector<AnnotationRecord> parse_annotations(std::string_view jsonl, ScoreMapping mapping) {
  std::vector<AnnotationRecord> out;
  std::size_t line_no = 0;
  while (!jsonl.empty()) {
    const auto eol = jsonl.find('\n');
    const auto line = jsonl.substr(0, eol);
    jsonl = eol == std::string_view::npos ? std::string_view{} : jsonl.substr(eol + 1);
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(normalize_and_combine(j.at("run_id").get<std::string>(), j.at("judge").get<std::string>(),
                                          rating_field(j, "score"), rating_field(j, "coherence"), mapping));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotation line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("annotation line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path, ScoreMapping mapping) {
  return parse_annotations(read_file(path), mapping);
}

}  // namespace steersig
