#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "steersig/generation.hpp"
#include "steersig/judge.hpp"
#include "steersig/model.hpp"
#include "steersig/steering.hpp"

namespace steersig {

struct ModelSource {
  enum class Kind { random, planted, checkpoint };
  std::string id;
  Kind kind = Kind::random;
  ModelConfig config;                    // random / planted
  double gamma = 0.0;                    // planted
  std::vector<std::string> planted;      // concepts to plant; empty = all with tokens
  std::filesystem::path checkpoint;      // checkpoint
};

std::string to_string(ModelSource::Kind k);

enum class ExtractionMethod { caa, import_vector };

std::string to_string(ExtractionMethod m);
ExtractionMethod extraction_method_from_string(const std::string& s);

struct ConceptSpec {
  std::string name;
  std::vector<TokenId> tokens;
  std::vector<std::vector<TokenId>> caa_positive;  // empty = prompt + each concept token
  std::vector<std::vector<TokenId>> caa_negative;  // empty = prompt + neutral tokens
  std::filesystem::path vector_file;
  std::optional<ConceptLexicon> lexicon;
};

struct SweepConfig {
  std::vector<ModelSource> models;
  std::vector<ConceptSpec> concepts;
  std::vector<ExtractionMethod> methods{ExtractionMethod::caa};
  std::vector<SteeringFunction> functions{SteeringFunction::add, SteeringFunction::rotate};
  std::vector<double> alphas;  // default 0, 20, ..., 300
  double alpha_max = kDefaultAlphaMax;
  std::vector<std::size_t> layers;  // empty = {ceil(L / 2)} per model
  std::string prompt_text = "I think";
  std::vector<TokenId> prompt_tokens;  // overrides prompt_text when set
  std::size_t steps = 30;
  DecodePolicy decode;
  std::optional<std::size_t> effective_vocab;  // overrides each model's N
  std::vector<std::uint64_t> seeds{0};         // decode seeds, one replicate each
  // Steering vectors are rescaled to this norm; nullopt keeps raw magnitudes.
  std::optional<double> vector_norm = 1.0;

  void validate() const;
};

std::vector<double> default_alpha_grid();

// Relative paths inside the config (checkpoints, vector files) resolve
// against base_dir. Throws ConfigError on malformed or inconsistent input.
SweepConfig parse_sweep_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
SweepConfig load_sweep_config(const std::filesystem::path& path);

// One row of sweep_index.json.
struct RunRecord {
  std::string run_id;
  bool baseline = false;
  std::string model;
  std::string concept_name;
  std::string method;
  std::string function;
  double alpha = 0.0;
  double alpha_max = kDefaultAlphaMax;
  std::uint64_t seed = 0;
  std::string group_key;
  std::vector<std::size_t> layers;
  std::size_t attention_layer = 0;
  std::size_t effective_vocab = 0;
  std::string baseline_id;
  std::string dir;          // relative to the sweep root
  std::string model_path;   // relative checkpoint path
  std::string vector_path;  // relative vector file path
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

// model|concept|method|function
std::string group_key(const std::string& model, const std::string& concept_name, const std::string& method,
                      const std::string& function);

struct SweepIndex {
  std::vector<RunRecord> runs;       // steered runs in grid order
  std::vector<RunRecord> baselines;  // one per (model, seed)
  std::vector<ConceptSpec> concepts;

  const RunRecord& baseline_for(const RunRecord& run) const;
};

SweepIndex load_sweep_index(const std::filesystem::path& root);

struct SweepOutcome {
  SweepIndex index;
  std::size_t computed = 0;
  std::size_t skipped = 0;
};

using ProgressFn = std::function<void(const std::string& line)>;

// Layout under out:
//   models/<model>.ckpt, vectors/<model>__<concept>__<method>.json,
//   baselines/<id>/{manifest.json, trace.bin, text.txt},
//   runs/<id>/{manifest.json, trace.bin, signals.csv, signals_heads.csv,
//              features.csv, text.txt},
//   sweep_index.json
// A run whose manifest exists and whose artifacts still hash to the
// recorded values is skipped; a mismatch raises DataError.
SweepOutcome run_sweep(const SweepConfig& config, const std::filesystem::path& out, std::size_t workers = 1,
                       const ProgressFn& progress = {});

// Number of steered runs the grid expands to.
std::size_t grid_size(const SweepConfig& config);

// Concatenates every run's features.csv in index order.
std::string collect_features(const std::filesystem::path& root);

struct AuditIssue {
  std::string run_id;
  std::string artifact;
  std::string detail;
};

struct AuditReport {
  std::size_t checked = 0;
  std::vector<AuditIssue> issues;
};

// Recomputes signals and features from the persisted traces and compares
// them byte for byte with the stored CSVs. With regenerate set, the traces
// themselves are regenerated from the checkpoint and vector as well.
AuditReport audit_runs(const std::filesystem::path& root, bool regenerate = false, std::size_t workers = 1);

// Decoded continuation (prompt excluded) of a persisted run.
std::string run_text(const std::filesystem::path& root, const RunRecord& run);
std::vector<TokenId> run_generated_tokens(const std::filesystem::path& root, const RunRecord& run);

}  // namespace steersig
