#include "steersig/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <map>
#include <mutex>
#include <set>

#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/features.hpp"
#include "steersig/hashing.hpp"
#include "steersig/parallel.hpp"
#include "steersig/signals.hpp"
#include "steersig/table_io.hpp"
#include "steersig/trace_io.hpp"
#include "steersig/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace steersig {

std::string to_string(ModelSource::Kind k) {
  switch (k) {
    case ModelSource::Kind::random: return "random";
    case ModelSource::Kind::planted: return "planted";
    case ModelSource::Kind::checkpoint: return "checkpoint";
  }
  return "unknown";
}

std::string to_string(ExtractionMethod m) { return m == ExtractionMethod::caa ? "caa" : "import"; }

ExtractionMethod extraction_method_from_string(const std::string& s) {
  if (s == "caa") return ExtractionMethod::caa;
  if (s == "import") return ExtractionMethod::import_vector;
  throw InvalidArgument("unknown extraction method '" + s + "'");
}

std::vector<double> default_alpha_grid() {
  std::vector<double> a;
  for (int v = 0; v <= 300; v += 20) a.push_back(v);
  return a;
}

namespace {

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

template <class T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

}  // namespace

void SweepConfig::validate() const {
  if (models.empty()) throw ConfigError("sweep config lists no models");
  std::vector<std::string> ids;
  for (const auto& m : models) {
    if (!valid_name(m.id)) throw ConfigError("model id '" + m.id + "' must match [A-Za-z0-9_-]+");
    if (m.kind == ModelSource::Kind::planted && !(m.gamma > 0.0)) {
      throw ConfigError("planted model '" + m.id + "' needs gamma > 0");
    }
    if (m.kind == ModelSource::Kind::checkpoint && m.checkpoint.empty()) {
      throw ConfigError("checkpoint model '" + m.id + "' has no path");
    }
    ids.push_back(m.id);
  }
  if (has_duplicates(ids)) throw ConfigError("duplicate model id");
  if (concepts.empty()) throw ConfigError("sweep config lists no concepts");
  std::vector<std::string> names;
  for (const auto& c : concepts) {
    if (!valid_name(c.name)) throw ConfigError("concept name '" + c.name + "' must match [A-Za-z0-9_-]+");
    names.push_back(c.name);
  }
  if (has_duplicates(names)) throw ConfigError("duplicate concept name");
  if (methods.empty()) throw ConfigError("no extraction methods");
  if (has_duplicates(methods)) throw ConfigError("duplicate extraction method");
  if (functions.empty()) throw ConfigError("no steering functions");
  if (has_duplicates(functions)) throw ConfigError("duplicate steering function");
  if (alphas.empty()) throw ConfigError("alpha grid is empty");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!std::isfinite(alphas[i]) || alphas[i] < 0.0) throw ConfigError("alpha values must be finite and >= 0");
    if (i > 0 && !(alphas[i] > alphas[i - 1])) throw ConfigError("alpha grid must be strictly increasing");
  }
  if (!(alpha_max > 0.0) || !std::isfinite(alpha_max)) throw ConfigError("alpha_max must be > 0");
  if (std::find(functions.begin(), functions.end(), SteeringFunction::rotate) != functions.end() &&
      alphas.back() > alpha_max) {
    throw ConfigError("rotation needs every alpha <= alpha_max");
  }
  if (steps == 0) throw ConfigError("steps must be >= 1");
  if (prompt_tokens.empty() && prompt_text.empty()) throw ConfigError("prompt is empty");
  if (seeds.empty()) throw ConfigError("no seeds");
  if (has_duplicates(seeds)) throw ConfigError("duplicate seed");
  if (vector_norm && (!(*vector_norm > 0.0) || !std::isfinite(*vector_norm))) {
    throw ConfigError("vector_norm must be > 0");
  }
  if (effective_vocab && *effective_vocab == 0) throw ConfigError("effective_vocab must be >= 1");
  if (decode.kind == DecodePolicy::Kind::sample && !(decode.temperature > 0.0)) {
    throw ConfigError("sampling temperature must be > 0");
  }
}

namespace {

std::vector<TokenId> parse_prompt_entry(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    std::vector<TokenId> ids;
    for (unsigned char c : s) ids.push_back(c);
    return ids;
  }
  return j.get<std::vector<TokenId>>();
}

ModelSource parse_model(const json& j, const fs::path& base) {
  ModelSource m;
  m.id = j.value("id", std::string("model"));
  const auto source = j.value("source", std::string("random"));
  if (source == "random") {
    m.kind = ModelSource::Kind::random;
  } else if (source == "planted") {
    m.kind = ModelSource::Kind::planted;
  } else if (source == "checkpoint") {
    m.kind = ModelSource::Kind::checkpoint;
  } else {
    throw ConfigError("unknown model source '" + source + "'");
  }
  if (j.contains("config")) m.config = j["config"].get<ModelConfig>();
  if (j.contains("seed")) m.config.seed = j["seed"].get<std::uint64_t>();
  m.gamma = j.value("gamma", 0.0);
  m.planted = j.value("concepts", std::vector<std::string>{});
  if (j.contains("path")) {
    m.checkpoint = j["path"].get<std::string>();
    if (m.checkpoint.is_relative()) m.checkpoint = base / m.checkpoint;
  }
  return m;
}

ConceptSpec parse_concept(const json& j, const fs::path& base) {
  ConceptSpec c;
  c.name = j.at("name").get<std::string>();
  c.tokens = j.value("tokens", std::vector<TokenId>{});
  if (j.contains("caa")) {
    for (const auto& p : j["caa"].value("positive", json::array())) c.caa_positive.push_back(parse_prompt_entry(p));
    for (const auto& p : j["caa"].value("negative", json::array())) c.caa_negative.push_back(parse_prompt_entry(p));
  }
  if (j.contains("vector_file")) {
    c.vector_file = j["vector_file"].get<std::string>();
    if (c.vector_file.is_relative()) c.vector_file = base / c.vector_file;
  }
  if (j.contains("lexicon")) {
    auto lj = j["lexicon"];
    if (!lj.contains("concept")) lj["concept"] = c.name;
    c.lexicon = parse_lexicons(lj.dump()).front();
  } else if (!c.tokens.empty()) {
    c.lexicon = ConceptLexicon{c.name, default_criterion(c.name), {}, c.tokens};
  }
  return c;
}

}  // namespace

SweepConfig parse_sweep_config(std::string_view json_text, const fs::path& base_dir) {
  SweepConfig c;
  try {
    const auto j = json::parse(json_text);
    if (j.contains("models")) {
      for (const auto& m : j["models"]) c.models.push_back(parse_model(m, base_dir));
    } else if (j.contains("model")) {
      c.models.push_back(parse_model(j["model"], base_dir));
    }
    for (const auto& cj : j.value("concepts", json::array())) c.concepts.push_back(parse_concept(cj, base_dir));
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(extraction_method_from_string(m.get<std::string>()));
    }
    if (j.contains("functions")) {
      c.functions.clear();
      for (const auto& f : j["functions"]) c.functions.push_back(steering_function_from_string(f.get<std::string>()));
    }
    c.alphas = j.value("alphas", default_alpha_grid());
    c.alpha_max = j.value("alpha_max", c.alpha_max);
    c.layers = j.value("layers", std::vector<std::size_t>{});
    if (j.contains("prompt")) {
      if (j["prompt"].is_string()) {
        c.prompt_text = j["prompt"].get<std::string>();
      } else {
        c.prompt_tokens = j["prompt"].get<std::vector<TokenId>>();
      }
    }
    c.steps = j.value("steps", c.steps);
    if (j.contains("decode")) c.decode = j["decode"].get<DecodePolicy>();
    if (j.contains("effective_vocab")) c.effective_vocab = j["effective_vocab"].get<std::size_t>();
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("vector_norm")) {
      if (j["vector_norm"].is_null()) {
        c.vector_norm.reset();
      } else {
        c.vector_norm = j["vector_norm"].get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sweep config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  }
  c.validate();
  return c;
}

SweepConfig load_sweep_config(const fs::path& path) {
  return parse_sweep_config(read_file(path), path.parent_path());
}

std::string group_key(const std::string& model, const std::string& concept_name, const std::string& method,
                      const std::string& function) {
  return model + "|" + concept_name + "|" + method + "|" + function;
}

void to_json(json& j, const RunRecord& r) {
  j = json{{"run_id", r.run_id},
           {"baseline", r.baseline},
           {"model", r.model},
           {"seed", r.seed},
           {"effective_vocab", r.effective_vocab},
           {"dir", r.dir},
           {"model_path", r.model_path}};
  if (!r.baseline) {
    j["concept"] = r.concept_name;
    j["method"] = r.method;
    j["function"] = r.function;
    j["alpha"] = r.alpha;
    j["alpha_max"] = r.alpha_max;
    j["group_key"] = r.group_key;
    j["layers"] = r.layers;
    j["attention_layer"] = r.attention_layer;
    j["baseline_id"] = r.baseline_id;
    j["vector_path"] = r.vector_path;
  }
}

void from_json(const json& j, RunRecord& r) {
  r.run_id = j.at("run_id").get<std::string>();
  r.baseline = j.value("baseline", false);
  r.model = j.at("model").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.effective_vocab = j.at("effective_vocab").get<std::size_t>();
  r.dir = j.at("dir").get<std::string>();
  r.model_path = j.at("model_path").get<std::string>();
  if (!r.baseline) {
    r.concept_name = j.at("concept").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.function = j.at("function").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.alpha_max = j.at("alpha_max").get<double>();
    r.group_key = j.at("group_key").get<std::string>();
    r.layers = j.at("layers").get<std::vector<std::size_t>>();
    r.attention_layer = j.at("attention_layer").get<std::size_t>();
    r.baseline_id = j.at("baseline_id").get<std::string>();
    r.vector_path = j.at("vector_path").get<std::string>();
  }
}

const RunRecord& SweepIndex::baseline_for(const RunRecord& run) const {
  for (const auto& b : baselines) {
    if (b.run_id == run.baseline_id) return b;
  }
  throw DataError("run " + run.run_id + " references unknown baseline " + run.baseline_id);
}

namespace {

json concept_to_json(const ConceptSpec& c) {
  json j{{"name", c.name}, {"tokens", c.tokens}};
  if (c.lexicon) {
    j["lexicon"] = {{"criterion", c.lexicon->criterion}, {"words", c.lexicon->words}, {"tokens", c.lexicon->tokens}};
  }
  return j;
}

ConceptSpec concept_from_json(const json& j) {
  ConceptSpec c;
  c.name = j.at("name").get<std::string>();
  c.tokens = j.value("tokens", std::vector<TokenId>{});
  if (j.contains("lexicon")) {
    const auto& l = j["lexicon"];
    c.lexicon = ConceptLexicon{c.name, l.at("criterion").get<std::string>(),
                               l.value("words", std::vector<std::string>{}),
                               l.value("tokens", std::vector<TokenId>{})};
  }
  return c;
}

}  // namespace

SweepIndex load_sweep_index(const fs::path& root) {
  SweepIndex idx;
  const auto path = root / "sweep_index.json";
  if (!fs::exists(path)) throw DataError("no sweep_index.json under " + root.string());
  try {
    const auto j = json::parse(read_file(path));
    for (const auto& r : j.at("runs")) idx.runs.push_back(r.get<RunRecord>());
    for (const auto& r : j.at("baselines")) idx.baselines.push_back(r.get<RunRecord>());
    for (const auto& c : j.value("concepts", json::array())) idx.concepts.push_back(concept_from_json(c));
  } catch (const json::exception& e) {
    throw FormatError("malformed sweep index: " + std::string(e.what()));
  }
  return idx;
}

std::size_t grid_size(const SweepConfig& c) {
  return c.models.size() * c.concepts.size() * c.methods.size() * c.functions.size() * c.alphas.size() *
         c.seeds.size();
}

namespace {

struct ResolvedModel {
  const ModelSource* source = nullptr;
  Model model;
  std::vector<ConceptPlan> plans;
  std::vector<std::size_t> layers;
  std::size_t attention_layer = 0;
  std::size_t effective_vocab = 0;
  std::vector<TokenId> prompt;
  std::string checksum;
  std::string path;  // relative
};

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_hash(const fs::path& p) { return to_hex(fnv1a(read_file(p))); }

// Neutral filler for default CAA negatives: lowest printable ids outside
// every concept's token set.
std::vector<TokenId> neutral_tokens(const SweepConfig& config, std::size_t count, std::size_t vocab) {
  std::set<TokenId> used;
  for (const auto& c : config.concepts) used.insert(c.tokens.begin(), c.tokens.end());
  std::vector<TokenId> out;
  for (TokenId id = 32; id < vocab && out.size() < count; ++id) {
    if (!used.count(id)) out.push_back(id);
  }
  if (out.size() < count) throw ConfigError("vocabulary too small for neutral CAA prompts");
  return out;
}

ResolvedModel resolve_model(const SweepConfig& config, const ModelSource& src, const fs::path& out) {
  ResolvedModel r;
  r.source = &src;
  switch (src.kind) {
    case ModelSource::Kind::random:
      src.config.validate();
      r.model = init_random(src.config);
      break;
    case ModelSource::Kind::planted: {
      std::vector<ConceptSeed> seeds;
      for (const auto& c : config.concepts) {
        const bool listed = src.planted.empty() ||
                            std::find(src.planted.begin(), src.planted.end(), c.name) != src.planted.end();
        if (!listed) continue;
        if (c.tokens.empty()) {
          if (src.planted.empty()) continue;
          throw ConfigError("planted concept '" + c.name + "' has no tokens");
        }
        seeds.push_back({c.name, c.tokens});
      }
      if (seeds.empty()) throw ConfigError("planted model '" + src.id + "' has no concepts with tokens");
      src.config.validate();
      auto [m, plans] = init_multi_concept_planted(src.config, seeds, src.gamma);
      r.model = std::move(m);
      r.plans = std::move(plans);
      break;
    }
    case ModelSource::Kind::checkpoint:
      r.model = load_checkpoint_file(src.checkpoint);
      break;
  }
  const auto& mc = r.model.config;
  r.layers = config.layers.empty() ? std::vector<std::size_t>{(mc.n_layers + 1) / 2} : config.layers;
  for (auto l : r.layers) {
    if (l < 1 || l > mc.n_layers) {
      throw ConfigError("layer " + std::to_string(l) + " outside 1.." + std::to_string(mc.n_layers) +
                        " for model '" + src.id + "'");
    }
  }
  r.attention_layer = std::min(r.layers.front() + 1, mc.n_layers);
  r.effective_vocab = std::min(config.effective_vocab.value_or(mc.effective_vocab), mc.vocab_size);
  if (!config.prompt_tokens.empty()) {
    r.prompt = config.prompt_tokens;
    for (auto id : r.prompt) {
      if (id >= mc.vocab_size) throw ConfigError("prompt token outside vocabulary of '" + src.id + "'");
    }
  } else {
    try {
      r.prompt = encode_text(config.prompt_text, mc.vocab_size);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("prompt: ") + e.what());
    }
  }
  if (r.prompt.size() + config.steps - 1 > mc.max_seq_len) {
    throw ConfigError("prompt plus steps exceed max_seq_len of model '" + src.id + "'");
  }
  for (const auto& c : config.concepts) {
    for (auto id : c.tokens) {
      if (id >= mc.vocab_size) throw ConfigError("concept '" + c.name + "' token outside vocabulary");
    }
  }
  r.checksum = to_hex(r.model.checksum());
  r.path = "models/" + src.id + ".ckpt";
  write_file_atomic(out / r.path, save_checkpoint(r.model));
  if (!r.plans.empty()) {
    json plans = json::array();
    for (const auto& p : r.plans) {
      plans.push_back({{"concept", p.concept_name}, {"tokens", p.tokens}, {"gamma", p.gamma}, {"direction", p.direction}});
    }
    write_file_atomic(out / ("models/" + src.id + ".plan.json"), plans.dump(2) + "\n");
  }
  return r;
}

SteeringVector build_vector(const SweepConfig& config, const ResolvedModel& rm, const ConceptSpec& c,
                            ExtractionMethod method) {
  const std::size_t d = rm.model.config.d_model;
  SteeringVector v;
  if (method == ExtractionMethod::caa) {
    auto pos = c.caa_positive;
    auto neg = c.caa_negative;
    if (pos.empty()) {
      if (c.tokens.empty()) throw ConfigError("concept '" + c.name + "' needs tokens or CAA prompts");
      for (auto k : c.tokens) {
        auto p = rm.prompt;
        p.push_back(k);
        pos.push_back(std::move(p));
      }
    }
    if (neg.empty()) {
      for (auto k : neutral_tokens(config, pos.size(), rm.model.config.vocab_size)) {
        auto p = rm.prompt;
        p.push_back(k);
        neg.push_back(std::move(p));
      }
    }
    v = extract_caa(rm.model, pos, neg, rm.layers.front());
  } else if (!c.vector_file.empty()) {
    v = import_vector_file(c.vector_file, d);
  } else {
    auto it = std::find_if(rm.plans.begin(), rm.plans.end(),
                           [&](const ConceptPlan& p) { return p.concept_name == c.name; });
    if (it == rm.plans.end()) {
      throw ConfigError("import method for concept '" + c.name + "' on model '" + rm.source->id +
                        "' needs a vector_file");
    }
    v.values = it->direction;
    v.provenance = Provenance::planted;
  }
  v.concept_name = c.name;
  if (v.source_layer == 0) v.source_layer = rm.layers.front();
  v.validate();
  if (config.vector_norm) {
    double n = 0.0;
    for (double x : v.values) n += x * x;
    n = std::sqrt(n);
    for (double& x : v.values) x *= *config.vector_norm / n;
  }
  return v;
}

json base_cell(const ResolvedModel& rm, const SweepConfig& config, std::uint64_t seed) {
  DecodePolicy policy = config.decode;
  policy.seed = seed;
  return json{{"model", {{"id", rm.source->id}, {"checksum", rm.checksum}}},
              {"prompt", rm.prompt},
              {"steps", config.steps},
              {"decode", policy},
              {"effective_vocab", rm.effective_vocab}};
}

// Returns true when a finished run with identical configuration exists.
bool already_complete(const fs::path& dir, const json& cell, const std::string& run_id) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    if (fs::exists(dir)) fs::remove_all(dir);
    return false;
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError("run " + run_id + ": unreadable manifest: " + e.what());
  }
  if (manifest.value("config", json{}) != cell) {
    throw DataError("run id collision: " + run_id + " exists with a different configuration");
  }
  for (const auto& [name, hash] : manifest.at("artifacts").items()) {
    const auto p = dir / name;
    if (!fs::exists(p)) throw DataError("run " + run_id + ": artifact " + name + " is missing");
    if (file_hash(p) != hash.get<std::string>()) {
      throw DataError("run " + run_id + ": artifact " + name + " does not match its manifest hash");
    }
  }
  return true;
}

void write_run(const fs::path& dir, const std::string& run_id, const json& cell, const RunRecord& record,
               const std::vector<std::pair<std::string, std::string>>& artifacts) {
  fs::create_directories(dir);
  json hashes = json::object();
  for (const auto& [name, contents] : artifacts) {
    write_file_atomic(dir / name, contents);
    hashes[name] = to_hex(fnv1a(contents));
  }
  const json manifest{{"run_id", run_id},
                      {"software_version", STEERSIG_VERSION},
                      {"created_at", utc_timestamp()},
                      {"config", cell},
                      {"record", record},
                      {"artifacts", hashes}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct SteeredArtifacts {
  std::string trace, signals, heads, features, text;
};

SteeredArtifacts steered_artifacts(const Model& model, const GenerationTrace& trace, const GenerationTrace& baseline,
                                   const SteeringVector& vec, const RunRecord& r) {
  const auto bundle = compute_signals(model, trace, baseline, vec, r.layers, r.effective_vocab);
  const auto fv = build_feature_vector(bundle, r.alpha, r.run_id, r.group_key, r.attention_layer);
  return {save_trace(trace), write_csv(signals_table(r.run_id, bundle)),
          write_csv(head_signals_table(r.run_id, bundle)), write_csv(feature_table({fv})),
          decode_tokens(trace.generated)};
}

SteeringSpec make_spec(const SteeringVector& vec, const RunRecord& r) {
  SteeringSpec spec;
  spec.vector = vec;
  spec.function = steering_function_from_string(r.function);
  spec.alpha = r.alpha;
  spec.alpha_max = r.alpha_max;
  spec.layers = r.layers;
  return spec;
}

void write_index(const fs::path& out, const SweepIndex& idx, const SweepConfig& config) {
  json runs = json::array(), baselines = json::array(), concepts = json::array();
  for (const auto& r : idx.runs) runs.push_back(r);
  for (const auto& r : idx.baselines) baselines.push_back(r);
  for (const auto& c : config.concepts) concepts.push_back(concept_to_json(c));
  const json j{{"software_version", STEERSIG_VERSION},
               {"grid_size", idx.runs.size()},
               {"runs", runs},
               {"baselines", baselines},
               {"concepts", concepts}};
  write_file_atomic(out / "sweep_index.json", j.dump(2) + "\n");
}

}  // namespace

SweepOutcome run_sweep(const SweepConfig& config, const fs::path& out, std::size_t workers,
                       const ProgressFn& progress) {
  config.validate();
  fs::create_directories(out / "models");
  fs::create_directories(out / "vectors");
  fs::create_directories(out / "runs");
  fs::create_directories(out / "baselines");
  const auto say = [&](const std::string& line) {
    static std::mutex m;
    if (!progress) return;
    std::lock_guard lock(m);
    progress(line);
  };

  std::vector<ResolvedModel> models;
  for (const auto& src : config.models) models.push_back(resolve_model(config, src, out));

  // Vectors per (model, concept, method).
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::pair<SteeringVector, std::string>> vectors;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    for (std::size_t ci = 0; ci < config.concepts.size(); ++ci) {
      for (std::size_t ei = 0; ei < config.methods.size(); ++ei) {
        auto v = build_vector(config, models[mi], config.concepts[ci], config.methods[ei]);
        const std::string path = "vectors/" + models[mi].source->id + "__" + config.concepts[ci].name + "__" +
                                 to_string(config.methods[ei]) + ".json";
        write_file_atomic(out / path, export_vector(v));
        vectors[{mi, ci, ei}] = {std::move(v), path};
      }
    }
  }

  SweepOutcome outcome;
  auto& idx = outcome.index;
  idx.concepts = config.concepts;

  struct BaselineJob {
    std::size_t model;
    json cell;
    RunRecord record;
  };
  std::vector<BaselineJob> baseline_jobs;
  std::map<std::pair<std::size_t, std::uint64_t>, std::size_t> baseline_of;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    for (auto seed : config.seeds) {
      auto cell = base_cell(models[mi], config, seed);
      cell["kind"] = "baseline";
      RunRecord r;
      r.run_id = to_hex(fnv1a(cell.dump()));
      r.baseline = true;
      r.model = models[mi].source->id;
      r.seed = seed;
      r.effective_vocab = models[mi].effective_vocab;
      r.dir = "baselines/" + r.run_id;
      r.model_path = models[mi].path;
      baseline_of[{mi, seed}] = baseline_jobs.size();
      baseline_jobs.push_back({mi, std::move(cell), std::move(r)});
    }
  }

  struct SteeredJob {
    std::size_t model;
    const SteeringVector* vector;
    json cell;
    RunRecord record;
    std::size_t baseline;
  };
  std::vector<SteeredJob> steered_jobs;
  std::set<std::string> seen_ids;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& rm = models[mi];
    for (std::size_t ci = 0; ci < config.concepts.size(); ++ci) {
      for (std::size_t ei = 0; ei < config.methods.size(); ++ei) {
        const auto& [vec, vec_path] = vectors.at({mi, ci, ei});
        const auto vec_hash = to_hex(fnv1a(export_vector(vec)));
        for (auto fn : config.functions) {
          for (double alpha : config.alphas) {
            for (auto seed : config.seeds) {
              auto cell = base_cell(rm, config, seed);
              cell["kind"] = "steered";
              cell["concept"] = config.concepts[ci].name;
              cell["method"] = to_string(config.methods[ei]);
              cell["vector"] = vec_hash;
              cell["function"] = to_string(fn);
              cell["alpha"] = alpha;
              cell["alpha_max"] = config.alpha_max;
              cell["layers"] = rm.layers;
              RunRecord r;
              r.run_id = to_hex(fnv1a(cell.dump()));
              if (!seen_ids.insert(r.run_id).second) throw DataError("duplicate run id " + r.run_id);
              r.model = rm.source->id;
              r.concept_name = config.concepts[ci].name;
              r.method = to_string(config.methods[ei]);
              r.function = to_string(fn);
              r.alpha = alpha;
              r.alpha_max = config.alpha_max;
              r.seed = seed;
              r.group_key = group_key(r.model, r.concept_name, r.method, r.function);
              r.layers = rm.layers;
              r.attention_layer = rm.attention_layer;
              r.effective_vocab = rm.effective_vocab;
              const auto b = baseline_of.at({mi, seed});
              r.baseline_id = baseline_jobs[b].record.run_id;
              r.dir = "runs/" + r.run_id;
              r.model_path = rm.path;
              r.vector_path = vec_path;
              steered_jobs.push_back({mi, &vec, std::move(cell), std::move(r), b});
            }
          }
        }
      }
    }
  }

  std::vector<GenerationTrace> baseline_traces(baseline_jobs.size());
  std::vector<char> computed_b(baseline_jobs.size(), 0);
  parallel_for(baseline_jobs.size(), workers, [&](std::size_t i) {
    const auto& job = baseline_jobs[i];
    const auto dir = out / job.record.dir;
    if (already_complete(dir, job.cell, job.record.run_id)) {
      baseline_traces[i] = load_trace_file(dir / "trace.bin");
      say("skip baseline " + job.record.run_id);
      return;
    }
    const auto& rm = models[job.model];
    DecodePolicy policy = config.decode;
    policy.seed = job.record.seed;
    auto trace = generate(rm.model, rm.prompt, config.steps, policy);
    write_run(dir, job.record.run_id, job.cell, job.record,
              {{"trace.bin", save_trace(trace)}, {"text.txt", decode_tokens(trace.generated)}});
    baseline_traces[i] = std::move(trace);
    computed_b[i] = 1;
    say("baseline " + job.record.run_id + " model=" + job.record.model);
  });

  std::vector<char> computed_s(steered_jobs.size(), 0);
  parallel_for(steered_jobs.size(), workers, [&](std::size_t i) {
    const auto& job = steered_jobs[i];
    const auto& r = job.record;
    const auto dir = out / r.dir;
    if (already_complete(dir, job.cell, r.run_id)) {
      say("skip " + r.run_id);
      return;
    }
    const auto& rm = models[job.model];
    DecodePolicy policy = config.decode;
    policy.seed = r.seed;
    const auto spec = make_spec(*job.vector, r);
    const auto trace = generate(rm.model, rm.prompt, config.steps, policy, &spec);
    const auto a = steered_artifacts(rm.model, trace, baseline_traces[job.baseline], *job.vector, r);
    write_run(dir, r.run_id, job.cell, r,
              {{"trace.bin", a.trace},
               {"signals.csv", a.signals},
               {"signals_heads.csv", a.heads},
               {"features.csv", a.features},
               {"text.txt", a.text}});
    computed_s[i] = 1;
    say("run " + r.run_id + " " + r.group_key + " alpha=" + format_double(r.alpha) +
        " seed=" + std::to_string(r.seed));
  });

  for (const auto& j : baseline_jobs) idx.baselines.push_back(j.record);
  for (const auto& j : steered_jobs) idx.runs.push_back(j.record);
  for (char c : computed_b) (c ? outcome.computed : outcome.skipped)++;
  for (char c : computed_s) (c ? outcome.computed : outcome.skipped)++;
  write_index(out, idx, config);
  return outcome;
}

std::string collect_features(const fs::path& root) {
  const auto idx = load_sweep_index(root);
  CsvTable all;
  for (const auto& r : idx.runs) {
    const auto t = read_csv_file(root / r.dir / "features.csv");
    if (all.header.empty()) {
      all.header = t.header;
    } else if (t.header != all.header) {
      throw DataError("features.csv header differs in run " + r.run_id);
    }
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  if (all.header.empty()) throw DataError("sweep has no runs");
  return write_csv(all);
}

std::vector<TokenId> run_generated_tokens(const fs::path& root, const RunRecord& run) {
  return load_trace_file(root / run.dir / "trace.bin").generated;
}

std::string run_text(const fs::path& root, const RunRecord& run) {
  const auto p = root / run.dir / "text.txt";
  if (!fs::exists(p)) throw DataError("run " + run.run_id + " has no text.txt");
  return read_file(p);
}

AuditReport audit_runs(const fs::path& root, bool regenerate, std::size_t workers) {
  const auto idx = load_sweep_index(root);
  std::map<std::string, Model> models;
  std::map<std::string, SteeringVector> vectors;
  for (const auto& r : idx.runs) {
    if (!models.count(r.model_path)) models.emplace(r.model_path, load_checkpoint_file(root / r.model_path));
    if (!vectors.count(r.vector_path)) {
      vectors.emplace(r.vector_path,
                      import_vector_file(root / r.vector_path, models.at(r.model_path).config.d_model));
    }
  }
  std::map<std::string, GenerationTrace> baselines;
  for (const auto& b : idx.baselines) baselines.emplace(b.run_id, load_trace_file(root / b.dir / "trace.bin"));

  AuditReport report;
  std::mutex mutex;
  const auto flag = [&](const std::string& id, const std::string& artifact, const std::string& detail) {
    std::lock_guard lock(mutex);
    report.issues.push_back({id, artifact, detail});
  };
  const auto compare = [&](const RunRecord& r, const std::string& name, const std::string& expected) {
    const auto p = root / r.dir / name;
    if (!fs::exists(p)) return flag(r.run_id, name, "missing");
    if (read_file(p) != expected) flag(r.run_id, name, "differs from recomputation");
  };

  if (regenerate) {
    for (const auto& b : idx.baselines) {
      const auto& stored = baselines.at(b.run_id);
      const auto again = generate(models.count(b.model_path) ? models.at(b.model_path)
                                                             : load_checkpoint_file(root / b.model_path),
                                  stored.prompt, stored.generated.size(), stored.policy);
      compare(b, "trace.bin", save_trace(again));
    }
  }

  parallel_for(idx.runs.size(), workers, [&](std::size_t i) {
    const auto& r = idx.runs[i];
    const auto& model = models.at(r.model_path);
    const auto& vec = vectors.at(r.vector_path);
    const auto& baseline = baselines.at(r.baseline_id);
    auto trace = load_trace_file(root / r.dir / "trace.bin");
    if (regenerate) {
      const auto spec = make_spec(vec, r);
      trace = generate(model, trace.prompt, trace.generated.size(), trace.policy, &spec);
      compare(r, "trace.bin", save_trace(trace));
    }
    const auto a = steered_artifacts(model, trace, baseline, vec, r);
    compare(r, "signals.csv", a.signals);
    compare(r, "signals_heads.csv", a.heads);
    compare(r, "features.csv", a.features);
    compare(r, "text.txt", a.text);
  });
  report.checked = idx.runs.size();
  std::sort(report.issues.begin(), report.issues.end(), [](const AuditIssue& a, const AuditIssue& b) {
    return std::tie(a.run_id, a.artifact) < std::tie(b.run_id, b.artifact);
  });
  return report;
}

}  // namespace steersig
