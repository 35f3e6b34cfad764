#include "steersig/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/parallel.hpp"
#include "steersig/rng.hpp"
#include "steersig/table_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace steersig {

namespace {

void append_line(const fs::path& p, const std::string& line) {
  std::ofstream out(p, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to " + p.string());
  out << line;
  if (line.empty() || line.back() != '\n') out << '\n';
}

std::string marker_to_jsonl(const UnannotatedMarker& m) {
  return json{{"run_id", m.run_id}, {"judge", m.judge}, {"status", m.status}, {"detail", m.detail}}.dump() + "\n";
}

std::vector<UnannotatedMarker> read_markers(const fs::path& p) {
  std::vector<UnannotatedMarker> out;
  if (!fs::exists(p)) return out;
  const auto text = read_file(p);
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("run_id").get<std::string>(), j.at("judge").get<std::string>(),
                     j.value("status", std::string{}), j.value("detail", std::string{})});
    } catch (const json::exception& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<AnnotationRecord> read_run_annotations(const fs::path& p, ScoreMapping mapping) {
  if (!fs::exists(p)) return {};
  return load_annotations(p, mapping);
}

// Last record wins for a repeated (run, judge) pair.
std::vector<AnnotationRecord> latest_per_judge(const std::vector<AnnotationRecord>& recs) {
  std::vector<AnnotationRecord> out;
  for (const auto& r : recs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AnnotationRecord& o) { return o.judge == r.judge; });
    if (it == out.end()) {
      out.push_back(r);
    } else {
      *it = r;
    }
  }
  std::sort(out.begin(), out.end(),
            [](const AnnotationRecord& a, const AnnotationRecord& b) { return a.judge < b.judge; });
  return out;
}

}  // namespace

std::vector<AnnotationRecord> consolidate_annotations(const fs::path& root) {
  const auto idx = load_sweep_index(root);
  std::string annotations, unannotated;
  std::vector<AnnotationRecord> all;
  for (const auto& r : idx.runs) {
    const auto dir = root / r.dir;
    const auto recs = latest_per_judge(read_run_annotations(dir / "annotations.jsonl", ScoreMapping::divide_by_ten));
    std::set<std::string> judged;
    for (const auto& a : recs) {
      annotations += annotation_to_jsonl(a);
      judged.insert(a.judge);
      all.push_back(a);
    }
    std::map<std::string, UnannotatedMarker> open;
    for (const auto& m : read_markers(dir / "unannotated.jsonl")) {
      if (!judged.count(m.judge)) open[m.judge] = m;
    }
    for (const auto& [judge, m] : open) unannotated += marker_to_jsonl(m);
  }
  write_file_atomic(root / "annotations.jsonl", annotations);
  write_file_atomic(root / "unannotated.jsonl", unannotated);
  return all;
}

AnnotateResult annotate_runs(const fs::path& root, const AnnotateOptions& options) {
  const auto idx = load_sweep_index(root);
  std::string token;
  std::string judge_id(kHeuristicJudgeId);
  if (options.judge == AnnotateOptions::Judge::remote) {
    if (!options.remote) throw ConfigError("remote judge selected without an endpoint config");
    options.remote->validate();
    token = judge_token_from_env();
    judge_id = options.remote->id;
  }

  std::vector<ConceptLexicon> lexicons = options.lexicons;
  if (lexicons.empty()) {
    for (const auto& c : idx.concepts) {
      if (c.lexicon) lexicons.push_back(*c.lexicon);
    }
  }
  for (const auto& r : idx.runs) find_lexicon(lexicons, r.concept_name);

  std::vector<std::size_t> todo;
  AnnotateResult result;
  for (std::size_t i = 0; i < idx.runs.size(); ++i) {
    const auto& r = idx.runs[i];
    const auto existing = read_run_annotations(root / r.dir / "annotations.jsonl", options.mapping);
    const bool done = std::any_of(existing.begin(), existing.end(),
                                  [&](const AnnotationRecord& a) { return a.judge == judge_id; });
    if (done && !options.force) {
      ++result.skipped;
    } else {
      todo.push_back(i);
    }
  }

  std::vector<std::optional<AnnotationRecord>> records(todo.size());
  std::vector<std::optional<UnannotatedMarker>> markers(todo.size());
  std::optional<ExchangeLog> log;
  if (options.judge == AnnotateOptions::Judge::remote) log.emplace(root / "judge_log.jsonl");

  const auto work = [&](std::size_t k) {
    const auto& r = idx.runs[todo[k]];
    const auto& lex = find_lexicon(lexicons, r.concept_name);
    if (options.judge == AnnotateOptions::Judge::heuristic) {
      const auto tokens = run_generated_tokens(root, r);
      const auto j = heuristic_judge(tokens, lex);
      records[k] = normalize_and_combine(r.run_id, judge_id, j.score, j.coherence, options.mapping);
      return;
    }
    const auto verdict =
        remote_judge(*options.remote, token, render_prompt(lex), run_text(root, r), r.run_id, &*log);
    if (verdict.status == RemoteVerdict::Status::ok) {
      records[k] = normalize_and_combine(r.run_id, judge_id, verdict.judgment->score, verdict.judgment->coherence,
                                         options.mapping);
    } else {
      markers[k] = UnannotatedMarker{r.run_id, judge_id, to_string(verdict.status), verdict.detail};
    }
  };
  const std::size_t width = options.judge == AnnotateOptions::Judge::remote ? options.remote->concurrency : 1;
  parallel_for(todo.size(), width, work);

  for (std::size_t k = 0; k < todo.size(); ++k) {
    const auto dir = root / idx.runs[todo[k]].dir;
    if (records[k]) {
      append_line(dir / "annotations.jsonl", annotation_to_jsonl(*records[k]));
      result.records.push_back(*records[k]);
    }
    if (markers[k]) {
      append_line(dir / "unannotated.jsonl", marker_to_jsonl(*markers[k]));
      if (markers[k]->status == to_string(RemoteVerdict::Status::transport_error)) ++result.transport_failures;
      result.unannotated.push_back(*markers[k]);
    }
  }
  consolidate_annotations(root);
  return result;
}

std::vector<LabeledSet> join_labels(const std::vector<FeatureVector>& features,
                                    const std::vector<AnnotationRecord>& annotations) {
  std::map<std::string, std::map<std::string, double>> by_judge;
  for (const auto& a : annotations) by_judge[a.judge][a.run_id] = a.performance;
  if (by_judge.empty()) throw DataError("no annotations to join");
  std::vector<LabeledSet> out;
  for (const auto& [judge, labels] : by_judge) {
    LabeledSet set;
    set.judge = judge;
    for (const auto& f : features) {
      auto it = labels.find(f.run_id);
      if (it == labels.end()) throw DataError("feature row " + f.run_id + " has no label from judge " + judge);
      set.rows.push_back(f);
      set.labels.push_back(it->second);
    }
    out.push_back(std::move(set));
  }
  return out;
}

FitResult fit_and_evaluate(const LabeledSet& data, const FitOptions& options) {
  if (data.rows.empty()) throw DataError("no rows to fit");
  if (data.rows.size() != data.labels.size()) throw InvalidArgument("rows and labels differ in length");
  if (options.seeds.empty()) throw InvalidArgument("no seeds");
  std::vector<std::string> groups;
  for (const auto& r : data.rows) groups.push_back(r.group_key);
  if (std::set<std::string>(groups.begin(), groups.end()).size() < 2) {
    throw DataError("group split needs at least two groups");
  }
  std::vector<double> labels = data.labels;
  if (options.permute_labels) Rng(*options.permute_labels).shuffle(labels);

  FitResult result;
  std::vector<Metrics> per_seed;
  for (auto seed : options.seeds) {
    auto split = group_shuffle_split(groups, options.test_fraction, seed);
    FeatureMatrix train, test;
    std::vector<double> y_train, y_test;
    for (auto i : split.train_rows) {
      train.push_back(data.rows[i].values);
      y_train.push_back(labels[i]);
    }
    for (auto i : split.test_rows) {
      test.push_back(data.rows[i].values);
      y_test.push_back(labels[i]);
    }
    const auto scaler = fit_scaler(train);
    auto params = options.params;
    params.seed = seed;
    auto forest = fit_forest(apply_scaler(scaler, train), y_train, params);
    forest.scaler = scaler;
    per_seed.push_back(evaluate(forest.predict(apply_scaler(scaler, test)), y_test));
    result.splits.push_back(std::move(split));
  }
  result.report = aggregate_report(data.judge, options.seeds, std::move(per_seed));
  return result;
}

std::string format_reports(const std::vector<EvaluationReport>& reports) {
  std::string out = "Metric";
  for (const auto& r : reports) out += "\t" + r.label;
  out += "\n";
  const auto row = [&](const char* name, auto get) {
    out += name;
    for (const auto& r : reports) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "\t%.4f +- %.4f", get(r.mean), get(r.std));
      out += buf;
    }
    out += "\n";
  };
  row("MAE", [](const Metrics& m) { return m.mae; });
  row("RMSE", [](const Metrics& m) { return m.rmse; });
  row("R2", [](const Metrics& m) { return m.r2; });
  return out;
}

ComparisonTable compare_functions(const SweepIndex& index, const std::vector<AnnotationRecord>& annotations) {
  std::map<std::pair<std::string, std::string>, double> p_of;  // (run, judge) -> P
  std::set<std::string> judges;
  for (const auto& a : annotations) {
    p_of[{a.run_id, a.judge}] = a.performance;
    judges.insert(a.judge);
  }
  using CellKey = std::tuple<std::string, std::string, std::string, std::string>;  // model, concept, method, judge
  // Mean P over seeds per (cell, function, alpha), in index order.
  std::map<CellKey, std::map<std::string, std::map<double, std::pair<double, std::size_t>>>> acc;
  std::vector<CellKey> order;
  for (const auto& r : index.runs) {
    for (const auto& judge : judges) {
      auto it = p_of.find({r.run_id, judge});
      if (it == p_of.end()) continue;
      CellKey key{r.model, r.concept_name, r.method, judge};
      if (!acc.count(key)) order.push_back(key);
      auto& slot = acc[key][r.function][r.alpha];
      slot.first += it->second;
      slot.second += 1;
    }
  }

  ComparisonTable t;
  for (const auto& key : order) {
    ComparisonCell c;
    std::tie(c.model, c.concept_name, c.method, c.judge) = key;
    for (const auto& [fn, by_alpha] : acc.at(key)) {
      std::optional<double> best;
      double best_alpha = 0.0;
      for (const auto& [alpha, s] : by_alpha) {
        const double mean = s.first / static_cast<double>(s.second);
        if (!best || mean > *best) best = mean, best_alpha = alpha;
      }
      if (fn == "add") {
        c.best_add = best;
        c.alpha_add = best_alpha;
      } else {
        c.best_rotate = best;
        c.alpha_rotate = best_alpha;
      }
    }
    if (!c.best_add || !c.best_rotate) {
      t.warnings.push_back("unmatched cell " + c.model + "|" + c.concept_name + "|" + c.method + " judge " + c.judge +
                           ": skipped");
    }
    t.cells.push_back(std::move(c));
  }

  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> row_of;
  for (const auto& c : t.cells) {
    if (!c.best_add || !c.best_rotate) continue;
    const auto key = std::make_tuple(c.model, c.method, c.judge);
    if (!row_of.count(key)) {
      row_of[key] = t.rows.size();
      t.rows.push_back({c.model, c.method, c.judge, 0.0, 0.0, 0, ""});
    }
    auto& row = t.rows[row_of[key]];
    row.add += *c.best_add;
    row.rotate += *c.best_rotate;
    row.concepts += 1;
  }
  for (auto& row : t.rows) {
    row.add /= static_cast<double>(row.concepts);
    row.rotate /= static_cast<double>(row.concepts);
    if (row.add > row.rotate) {
      row.winner = "add";
    } else if (row.rotate > row.add) {
      row.winner = "rotate";
    }
  }
  return t;
}

std::string comparison_to_text(const ComparisonTable& t) {
  std::vector<std::string> judges;
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& r : t.rows) {
    if (std::find(judges.begin(), judges.end(), r.judge) == judges.end()) judges.push_back(r.judge);
    const auto key = std::make_pair(r.model, r.method);
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  std::string out = "Model\tMethod";
  for (const auto& j : judges) out += "\t" + j + " Add\t" + j + " Rot";
  out += "\n";
  for (const auto& [model, method] : rows) {
    out += model + "\t" + method;
    for (const auto& j : judges) {
      auto it = std::find_if(t.rows.begin(), t.rows.end(), [&](const ComparisonRow& r) {
        return r.model == model && r.method == method && r.judge == j;
      });
      if (it == t.rows.end()) {
        out += "\t-\t-";
        continue;
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, "\t%.2f%s\t%.2f%s", it->add, it->winner == "add" ? "*" : "", it->rotate,
                    it->winner == "rotate" ? "*" : "");
      out += buf;
    }
    out += "\n";
  }
  out += "(* marks the better function; ties are unmarked)\n";
  for (const auto& w : t.warnings) out += "warning: " + w + "\n";
  return out;
}

std::string comparison_to_csv(const ComparisonTable& t) {
  CsvTable csv;
  csv.header = {"model", "concept", "method", "judge", "best_add", "alpha_add", "best_rotate", "alpha_rotate"};
  for (const auto& c : t.cells) {
    csv.rows.push_back({c.model, c.concept_name, c.method, c.judge, c.best_add ? format_double(*c.best_add) : "",
                        format_double(c.alpha_add), c.best_rotate ? format_double(*c.best_rotate) : "",
                        format_double(c.alpha_rotate)});
  }
  return write_csv(csv);
}

std::string to_string(AgreementQuantity q) {
  switch (q) {
    case AgreementQuantity::score: return "score";
    case AgreementQuantity::coherence: return "coherence";
    case AgreementQuantity::combined: return "combined";
  }
  return "unknown";
}

AgreementQuantity agreement_quantity_from_string(const std::string& s) {
  if (s == "score") return AgreementQuantity::score;
  if (s == "coherence") return AgreementQuantity::coherence;
  if (s == "combined") return AgreementQuantity::combined;
  throw InvalidArgument("unknown agreement quantity '" + s + "'");
}

RatingsMatrix ratings_from_annotations(const std::vector<AnnotationRecord>& annotations, AgreementQuantity q) {
  std::set<std::string> runs, judges;
  for (const auto& a : annotations) {
    runs.insert(a.run_id);
    judges.insert(a.judge);
  }
  const std::vector<std::string> run_list(runs.begin(), runs.end());
  RatingsMatrix m;
  m.subjects = runs.size();
  m.judges = judges.size();
  m.judge_labels.assign(judges.begin(), judges.end());
  m.values.assign(m.subjects * m.judges, 0.0);
  std::vector<bool> present(m.subjects * m.judges, false);
  for (const auto& a : annotations) {
    const auto i = static_cast<std::size_t>(
        std::lower_bound(run_list.begin(), run_list.end(), a.run_id) - run_list.begin());
    const auto j = static_cast<std::size_t>(
        std::lower_bound(m.judge_labels.begin(), m.judge_labels.end(), a.judge) - m.judge_labels.begin());
    double v = 0.0;
    switch (q) {
      case AgreementQuantity::score: v = a.score; break;
      case AgreementQuantity::coherence: v = a.coherence; break;
      case AgreementQuantity::combined: v = a.performance; break;
    }
    m.values[i * m.judges + j] = v;
    present[i * m.judges + j] = true;
  }
  if (!std::all_of(present.begin(), present.end(), [](bool b) { return b; })) m.present = std::move(present);
  return m;
}

RatingsMatrix complete_subjects(const RatingsMatrix& m) {
  if (m.complete()) return m;
  RatingsMatrix out;
  out.judges = m.judges;
  out.judge_labels = m.judge_labels;
  for (std::size_t i = 0; i < m.subjects; ++i) {
    bool full = true;
    for (std::size_t j = 0; j < m.judges; ++j) full = full && m.has(i, j);
    if (!full) continue;
    for (std::size_t j = 0; j < m.judges; ++j) out.values.push_back(m.at(i, j));
    ++out.subjects;
  }
  return out;
}

}  // namespace steersig
