// steersig command-line tool.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 remote judge
// failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "steersig/agreement.hpp"
#include "steersig/analysis.hpp"
#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/features.hpp"
#include "steersig/forest.hpp"
#include "steersig/judge.hpp"
#include "steersig/remote_judge.hpp"
#include "steersig/report.hpp"
#include "steersig/rng.hpp"
#include "steersig/sweep.hpp"
#include "steersig/table_io.hpp"

namespace fs = std::filesystem;
using namespace steersig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRemote = 3;

// Raised for remote-judge problems so they keep exit code 3 even when the
// underlying error is a configuration one (missing token).
struct RemoteFailure : Error {
  using Error::Error;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw CLI::ValidationError("--seeds", "'" + item + "' is not an unsigned integer");
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
  return out;
}

int cmd_sweep(const fs::path& config_path, const fs::path& out, std::size_t workers, bool quiet) {
  const auto config = load_sweep_config(config_path);
  std::fprintf(stderr, "sweep: %zu steered runs, %zu worker(s)\n", grid_size(config), workers);
  const auto outcome = run_sweep(config, out, workers, [&](const std::string& line) {
    if (!quiet) std::fprintf(stderr, "%s\n", line.c_str());
  });
  std::printf("computed %zu, skipped %zu, index %s\n", outcome.computed, outcome.skipped,
              (out / "sweep_index.json").string().c_str());
  return kExitOk;
}

int cmd_annotate(const fs::path& runs, const std::string& judge, const std::string& lexicon,
                 const std::string& judge_config, bool force) {
  AnnotateOptions options;
  options.force = force;
  if (!lexicon.empty()) options.lexicons = load_lexicons(lexicon);
  if (judge == "remote") {
    options.judge = AnnotateOptions::Judge::remote;
    if (judge_config.empty()) throw RemoteFailure("--judge remote needs --judge-config");
    try {
      options.remote = load_remote_judge_config(judge_config);
      judge_token_from_env();
    } catch (const ConfigError& e) {
      throw RemoteFailure(e.what());
    }
  }
  const auto result = annotate_runs(runs, options);
  std::printf("annotated %zu run(s), skipped %zu, unannotated %zu\n", result.records.size(), result.skipped,
              result.unannotated.size());
  for (const auto& m : result.unannotated) {
    std::fprintf(stderr, "unannotated %s (%s): %s\n", m.run_id.c_str(), m.status.c_str(), m.detail.c_str());
  }
  return result.transport_failures > 0 ? kExitRemote : kExitOk;
}

int cmd_features(const fs::path& runs, const std::string& out) {
  const fs::path target = out.empty() ? runs / "features.csv" : fs::path(out);
  write_file_atomic(target, collect_features(runs));
  std::printf("%s\n", target.string().c_str());
  return kExitOk;
}

struct FitArgs {
  std::string features, labels, seeds = "22,42,31,61,10", mapping = "x10", json_out, forest_dir;
  std::size_t trees = 200, workers = 1;
  double test_fraction = 0.3;
  std::optional<std::uint64_t> permute;
};

int cmd_fit(const FitArgs& a) {
  const auto features = features_from_table(read_csv_file(a.features));
  const auto mapping = a.mapping == "minmax" ? ScoreMapping::min_max : ScoreMapping::divide_by_ten;
  const auto annotations = load_annotations(a.labels, mapping);
  FitOptions options;
  options.params.n_trees = a.trees;
  options.params.workers = a.workers;
  options.seeds = parse_seed_list(a.seeds);
  options.test_fraction = a.test_fraction;
  options.permute_labels = a.permute;
  std::vector<EvaluationReport> reports;
  nlohmann::json out = nlohmann::json::array();
  for (const auto& set : join_labels(features, annotations)) {
    auto result = fit_and_evaluate(set, options);
    auto j = report_to_json(result.report);
    j["groups_test"] = nlohmann::json::array();
    for (const auto& s : result.splits) j["groups_test"].push_back(s.test_groups);
    out.push_back(std::move(j));
    if (!a.forest_dir.empty()) {
      // Refit per seed on the training rows so the saved model matches the report.
      fs::create_directories(a.forest_dir);
      for (const auto& split : result.splits) {
        FeatureMatrix train;
        std::vector<double> y;
        std::vector<double> labels = set.labels;
        if (options.permute_labels) Rng(*options.permute_labels).shuffle(labels);
        for (auto i : split.train_rows) {
          train.push_back(set.rows[i].values);
          y.push_back(labels[i]);
        }
        auto params = options.params;
        params.seed = split.seed;
        const auto scaler = fit_scaler(train);
        auto forest = fit_forest(apply_scaler(scaler, train), y, params);
        forest.scaler = scaler;
        write_file_atomic(fs::path(a.forest_dir) / ("forest_" + set.judge + "_" + std::to_string(split.seed) + ".json"),
                          forest_to_json(forest));
      }
    }
    reports.push_back(std::move(result.report));
  }
  std::printf("%s", format_reports(reports).c_str());
  if (!a.json_out.empty()) write_file_atomic(a.json_out, out.dump(2) + "\n");
  return kExitOk;
}

int cmd_agree(const std::string& annotations_path, const std::string& on, const std::string& json_out) {
  const auto annotations = load_annotations(annotations_path);
  std::vector<AgreementQuantity> quantities;
  if (on == "all") {
    quantities = {AgreementQuantity::score, AgreementQuantity::coherence, AgreementQuantity::combined};
  } else {
    quantities = {agreement_quantity_from_string(on)};
  }
  nlohmann::json out = nlohmann::json::array();
  for (auto q : quantities) {
    const auto full = ratings_from_annotations(annotations, q);
    if (full.judges < 2) throw DataError("agreement needs at least two judges");
    const auto complete = complete_subjects(full);
    if (complete.subjects < 2) throw DataError("fewer than two runs rated by every judge");
    auto report = agreement_report(complete, to_string(q));
    // Krippendorff's alpha accepts gaps, so it uses every rated run.
    if (!full.complete()) {
      report.alpha_raw = krippendorff_alpha_interval(full);
      report.alpha_zscored = krippendorff_alpha_interval(zscore_per_judge(full));
    }
    std::printf("%s", agreement_to_text(report).c_str());
    if (complete.subjects != full.subjects) {
      std::printf("  (%zu of %zu runs rated by every judge)\n", complete.subjects, full.subjects);
    }
    out.push_back(agreement_to_json(report));
  }
  if (!json_out.empty()) write_file_atomic(json_out, out.dump(2) + "\n");
  return kExitOk;
}

int cmd_compare(const fs::path& runs, const std::string& labels, const std::string& csv_out) {
  const auto index = load_sweep_index(runs);
  const fs::path label_path = labels.empty() ? runs / "annotations.jsonl" : fs::path(labels);
  const auto table = compare_functions(index, load_annotations(label_path));
  std::printf("%s", comparison_to_text(table).c_str());
  if (!csv_out.empty()) write_file_atomic(csv_out, comparison_to_csv(table));
  return kExitOk;
}

int cmd_audit(const fs::path& runs, bool regenerate, std::size_t workers) {
  const auto report = audit_runs(runs, regenerate, workers);
  for (const auto& i : report.issues) {
    std::printf("MISMATCH %s %s: %s\n", i.run_id.c_str(), i.artifact.c_str(), i.detail.c_str());
  }
  std::printf("audited %zu run(s), %zu mismatch(es)\n", report.checked, report.issues.size());
  return report.issues.empty() ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Steering diagnostics: sweeps, signals, judges, regression and agreement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(STEERSIG_CLI_VERSION));

  std::string config_path, out_dir, runs_dir, judge = "heuristic", lexicon, judge_config, features_out;
  std::size_t workers = 1;
  bool quiet = false, force = false, regenerate = false;

  auto* sweep = app.add_subcommand("sweep", "Run the steering grid and persist traces, signals and features");
  sweep->add_option("--config", config_path, "Sweep config JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--workers", workers, "Parallel grid cells")->check(CLI::PositiveNumber);
  sweep->add_flag("--quiet", quiet, "Only print the summary");

  auto* annotate = app.add_subcommand("annotate", "Score persisted runs with a judge");
  annotate->add_option("--runs", runs_dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  annotate->add_option("--judge", judge, "heuristic | remote")->check(CLI::IsMember({"heuristic", "remote"}));
  annotate->add_option("--lexicon", lexicon, "Concept lexicon JSON (default: lexicons from the sweep)")
      ->check(CLI::ExistingFile);
  annotate->add_option("--judge-config", judge_config, "Remote judge endpoint JSON")->check(CLI::ExistingFile);
  annotate->add_flag("--force", force, "Re-judge runs already scored by this judge");

  auto* features = app.add_subcommand("features", "Collect per-run feature rows into one CSV");
  features->add_option("--runs", runs_dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  features->add_option("--out", features_out, "Output CSV (default <runs>/features.csv)");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Group-split random-forest regression of P on the features");
  fit->add_option("--features", fit_args.features, "Feature CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--labels", fit_args.labels, "Annotations JSONL")->required()->check(CLI::ExistingFile);
  fit->add_option("--seeds", fit_args.seeds, "Comma-separated split seeds");
  fit->add_option("--trees", fit_args.trees, "Trees per forest")->check(CLI::PositiveNumber);
  fit->add_option("--workers", fit_args.workers, "Threads for tree fitting")->check(CLI::PositiveNumber);
  fit->add_option("--test-fraction", fit_args.test_fraction, "Share of groups held out")
      ->check(CLI::Range(0.0, 1.0));
  fit->add_option("--mapping", fit_args.mapping, "Raw score mapping: x10 (x/10) | minmax ((x-1)/9)")
      ->check(CLI::IsMember({"x10", "minmax"}));
  fit->add_option("--permute", fit_args.permute, "Shuffle labels with this seed (permutation null)");
  fit->add_option("--json", fit_args.json_out, "Write reports as JSON");
  fit->add_option("--forest-dir", fit_args.forest_dir, "Save each fitted forest as JSON");

  std::string annotations_path, on = "all", json_out;
  auto* agree = app.add_subcommand("agree", "Inter-judge reliability");
  agree->add_option("--annotations", annotations_path, "Annotations JSONL")->required()->check(CLI::ExistingFile);
  agree->add_option("--on", on, "score | coherence | combined | all")
      ->check(CLI::IsMember({"score", "coherence", "combined", "all"}));
  agree->add_option("--json", json_out, "Write the report as JSON");

  std::string labels, csv_out;
  auto* compare = app.add_subcommand("compare", "Best P over alpha for add vs rotate");
  compare->add_option("--runs", runs_dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--labels", labels, "Annotations JSONL (default <runs>/annotations.jsonl)");
  compare->add_option("--csv", csv_out, "Write per-cell results as CSV");

  std::string kind, svg_path;
  ReportSelection sel;
  auto* report = app.add_subcommand("report", "Emit an SVG plot and its CSV");
  report->add_option("--runs", runs_dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--kind", kind, "nbf-curves | kl-curves | attention-heatmap | appendix-b-pair")
      ->required()
      ->check(CLI::IsMember({"nbf-curves", "kl-curves", "attention-heatmap", "appendix-b-pair"}));
  report->add_option("--svg", svg_path, "Output SVG path; the CSV goes next to it")->required();
  report->add_option("--model", sel.model, "Model id");
  report->add_option("--concept", sel.concept_name, "Concept name");
  report->add_option("--method", sel.method, "caa | import");
  report->add_option("--function", sel.function, "add | rotate");
  report->add_option("--alpha", sel.alpha, "Steering strength");
  report->add_option("--seed", sel.seed, "Decode seed");

  auto* audit = app.add_subcommand("audit", "Recompute signals from traces and compare the stored CSVs");
  audit->add_option("--runs", runs_dir, "Sweep directory")->required()->check(CLI::ExistingDirectory);
  audit->add_flag("--regenerate", regenerate, "Also regenerate the traces");
  audit->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sweep) return cmd_sweep(config_path, out_dir, workers, quiet);
    if (*annotate) return cmd_annotate(runs_dir, judge, lexicon, judge_config, force);
    if (*features) return cmd_features(runs_dir, features_out);
    if (*fit) return cmd_fit(fit_args);
    if (*agree) return cmd_agree(annotations_path, on, json_out);
    if (*compare) return cmd_compare(runs_dir, labels, csv_out);
    if (*report) {
      emit_report(runs_dir, report_kind_from_string(kind), svg_path, sel);
      std::printf("%s\n", svg_path.c_str());
      return kExitOk;
    }
    if (*audit) return cmd_audit(runs_dir, regenerate, workers);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const RemoteFailure& e) {
    std::fprintf(stderr, "remote judge: %s\n", e.what());
    return kExitRemote;
  } catch (const RemoteError& e) {
    std::fprintf(stderr, "remote judge: %s\n", e.what());
    return kExitRemote;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
