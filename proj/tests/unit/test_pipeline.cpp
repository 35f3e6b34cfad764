#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "mock_judge.hpp"
#include "steersig/analysis.hpp"
#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/report.hpp"
#include "steersig/svg.hpp"
#include "steersig/sweep.hpp"
#include "steersig/trace_io.hpp"

using namespace steersig;
namespace fs = std::filesystem;

namespace {

// One planted concept, imported planted direction, last-layer steering.
std::string small_config(const std::string& alphas = "[0, 120, 300]", std::size_t steps = 12) {
  return R"({
    "models": [{"id": "planted", "source": "planted", "gamma": 1.5, "config": {"seed": 1}}],
    "concepts": [{"name": "angry", "tokens": [65, 66, 67, 68]}],
    "methods": ["import"],
    "functions": ["add", "rotate"],
    "alphas": )" + alphas + R"(,
    "layers": [4],
    "steps": )" + std::to_string(steps) + R"(,
    "decode": {"policy": "sample", "temperature": 1.0},
    "seeds": [7],
    "vector_norm": 0.05
  })";
}

SweepOutcome sweep(const fs::path& out, const std::string& cfg = small_config(), std::size_t workers = 1) {
  return run_sweep(parse_sweep_config(cfg), out, workers);
}

void overwrite(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary | std::ios::trunc) << s; }

const RunRecord& find_run(const SweepIndex& idx, const std::string& function, double alpha) {
  for (const auto& r : idx.runs)
    if (r.function == function && r.alpha == alpha) return r;
  throw std::runtime_error("run not found");
}

LabeledSet synthetic_labeled(std::size_t groups, std::size_t per_group, std::uint64_t seed) {
  Rng rng(seed);
  LabeledSet s;
  s.judge = "synthetic";
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < per_group; ++r) {
      FeatureVector f;
      f.run_id = "r" + std::to_string(g) + "_" + std::to_string(r);
      f.group_key = "g" + std::to_string(g);
      f.values.resize(kFeatureLength);
      for (auto& v : f.values) v = rng.normal();
      // the NBF block summarizes one latent series, as in real runs
      const double level = rng.normal();
      for (std::size_t i = 1; i <= kStatNames.size(); ++i) f.values[i] = level + 0.05 * f.values[i];
      f.alpha = f.values[0];
      s.labels.push_back(f.values[1]);  // label = nbf_mean
      s.rows.push_back(std::move(f));
    }
  return s;
}

}  // namespace

TEST_SUITE("sweep") {
  TEST_CASE("grid arithmetic") {
    auto cfg = parse_sweep_config(small_config("[0, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200, 220, 240, 260, 280, 300]"));
    CHECK(grid_size(cfg) == 32);
    CHECK(default_alpha_grid().size() == 16);
    CHECK(default_alpha_grid().back() == 300.0);
  }

  TEST_CASE("config validation") {
    CHECK_THROWS_AS(parse_sweep_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_sweep_config(small_config("[0, 40, 20]")), ConfigError);
    CHECK_THROWS_AS(parse_sweep_config(small_config("[0, 400]")), ConfigError);  // rotate beyond alpha_max
    CHECK_THROWS_AS(parse_sweep_config(R"({"models": [{"id": "m"}], "concepts": [{"name": "bad name"}]})"), ConfigError);
  }

  TEST_CASE("sweep, resume, and tamper detection") {
    testutil::TempDir dir("sweep");
    const auto first = sweep(dir.path());
    CHECK(first.computed == 6 + 1);  // six steered runs plus one baseline
    CHECK(first.index.runs.size() == 6);
    CHECK(first.index.baselines.size() == 1);
    CHECK(fs::exists(dir.path() / "sweep_index.json"));
    for (const auto& r : first.index.runs) {
      for (const char* f : {"trace.bin", "signals.csv", "signals_heads.csv", "features.csv", "text.txt", "manifest.json"})
        CHECK(fs::exists(dir.path() / r.dir / f));
      CHECK(r.group_key == group_key("planted", "angry", "import", r.function));
    }

    const auto again = sweep(dir.path());
    CHECK(again.computed == 0);
    CHECK(again.skipped == 7);

    // run id is a function of the resolved cell
    const auto& run = find_run(first.index, "rotate", 120);
    CHECK(run.run_id == find_run(again.index, "rotate", 120).run_id);

    SUBCASE("edited artifact") {
      overwrite(dir.path() / run.dir / "signals.csv", "tampered\n");
      CHECK_THROWS_AS(sweep(dir.path()), DataError);
    }
    SUBCASE("manifest describing a different cell") {
      const auto mpath = dir.path() / run.dir / "manifest.json";
      auto m = nlohmann::json::parse(read_file(mpath));
      m["config"]["alpha"] = 999.0;
      overwrite(mpath, m.dump());
      CHECK_THROWS_AS(sweep(dir.path()), DataError);
    }
    SUBCASE("missing artifact") {
      fs::remove(dir.path() / run.dir / "features.csv");
      CHECK_THROWS_AS(sweep(dir.path()), DataError);
    }
    SUBCASE("partial run without a manifest is recomputed") {
      const auto before = read_file(dir.path() / run.dir / "signals.csv");
      fs::remove(dir.path() / run.dir / "manifest.json");
      const auto redo = sweep(dir.path());
      CHECK(redo.computed == 1);
      CHECK(read_file(dir.path() / run.dir / "signals.csv") == before);
    }
  }

  TEST_CASE("worker count does not change artifacts") {
    testutil::TempDir a("w1"), b("w3");
    const auto one = sweep(a.path(), small_config(), 1);
    sweep(b.path(), small_config(), 3);
    CHECK(read_file(a.path() / "sweep_index.json") == read_file(b.path() / "sweep_index.json"));
    for (const auto& r : one.index.runs)
      for (const char* f : {"trace.bin", "signals.csv", "signals_heads.csv", "features.csv", "text.txt"})
        CHECK(read_file(a.path() / r.dir / f) == read_file(b.path() / r.dir / f));
    CHECK(collect_features(a.path()) == collect_features(b.path()));
  }

  TEST_CASE("audit reproduces every CSV and flags edits") {
    testutil::TempDir dir("audit");
    const auto out = sweep(dir.path());
    auto report = audit_runs(dir.path(), true, 2);
    CHECK(report.checked == 6);
    CHECK(report.issues.empty());

    const auto& r = out.index.runs[2];
    auto table = read_file(dir.path() / r.dir / "features.csv");
    table[table.size() - 3] = table[table.size() - 3] == '1' ? '2' : '1';
    overwrite(dir.path() / r.dir / "features.csv", table);
    report = audit_runs(dir.path());
    REQUIRE(report.issues.size() >= 1);
    CHECK(report.issues[0].run_id == r.run_id);
    CHECK(report.issues[0].artifact == "features.csv");
  }

  TEST_CASE("alpha zero runs reproduce the baseline signals") {
    testutil::TempDir dir("alpha0");
    const auto out = sweep(dir.path());
    for (const char* fn : {"add", "rotate"}) {
      const auto& r = find_run(out.index, fn, 0);
      const auto bundle = bundle_from_table(read_csv_file(dir.path() / r.dir / "signals.csv"));
      for (double d : bundle.kl.front().diff) CHECK(d == 0.0);
      CHECK(run_text(dir.path(), r) == read_file(dir.path() / out.index.baseline_for(r).dir / "text.txt"));
    }
  }

  TEST_CASE("trace container round trip") {
    testutil::TempDir dir("trace");
    const auto out = sweep(dir.path());
    const auto bytes = read_file(dir.path() / out.index.runs[1].dir / "trace.bin");
    const auto trace = load_trace(bytes);
    CHECK(trace.steps.size() == 12);
    CHECK(save_trace(trace) == bytes);
    CHECK_THROWS_AS(load_trace(bytes.substr(0, bytes.size() - 8)), FormatError);
    CHECK_THROWS_AS(load_trace(bytes + "x"), FormatError);
    CHECK_THROWS_AS(load_trace("STEERSIG1\n{}\n"), FormatError);
  }
}

TEST_SUITE("harness") {
  TEST_CASE("heuristic annotation") {
    testutil::TempDir dir("annotate");
    const auto out = sweep(dir.path());
    AnnotateOptions opt;
    const auto first = annotate_runs(dir.path(), opt);
    CHECK(first.records.size() == 6);
    const auto root_file = read_file(dir.path() / "annotations.jsonl");

    // a second pass finds nothing to do; a forced pass appends identical records
    const auto second = annotate_runs(dir.path(), opt);
    CHECK(second.records.empty());
    CHECK(second.skipped == 6);
    CHECK(read_file(dir.path() / "annotations.jsonl") == root_file);
    opt.force = true;
    const auto forced = annotate_runs(dir.path(), opt);
    REQUIRE(forced.records.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(forced.records[i].score == first.records[i].score);
      CHECK(forced.records[i].coherence == first.records[i].coherence);
    }
    CHECK(read_file(dir.path() / "annotations.jsonl") == root_file);

    // high-alpha rotation expresses the planted concept more than alpha = 0
    const auto anns = load_annotations(dir.path() / "annotations.jsonl");
    auto score_of = [&](const RunRecord& r) {
      for (const auto& a : anns)
        if (a.run_id == r.run_id) return a.score;
      return -1;
    };
    CHECK(score_of(find_run(out.index, "rotate", 300)) > score_of(find_run(out.index, "rotate", 0)));
  }

  TEST_CASE("remote annotation alongside the heuristic judge") {
    testutil::TempDir dir("remote");
    testutil::MockJudge mock;
    sweep(dir.path());
    annotate_runs(dir.path(), {});

    AnnotateOptions opt;
    opt.judge = AnnotateOptions::Judge::remote;
    opt.remote = mock.config();
    opt.remote->id = "mock";

    ::unsetenv(std::string(kJudgeTokenEnv).c_str());
    CHECK_THROWS_AS(annotate_runs(dir.path(), opt), ConfigError);
    CHECK(mock.requests_ == 0);

    ::setenv(std::string(kJudgeTokenEnv).c_str(), "tok-123", 1);
    const auto res = annotate_runs(dir.path(), opt);
    CHECK(res.records.size() == 6);
    CHECK(res.transport_failures == 0);
    const auto anns = load_annotations(dir.path() / "annotations.jsonl");
    CHECK(anns.size() == 12);
    const auto log = read_file(dir.path() / "judge_log.jsonl");
    CHECK(log.find("tok-123") == std::string::npos);

    const auto ratings = ratings_from_annotations(anns, AgreementQuantity::score);
    CHECK(ratings.judges == 2);
    CHECK(ratings.subjects == 6);
    CHECK(ratings.judge_labels == std::vector<std::string>{"heuristic", "mock"});

    const auto features = features_from_table(parse_csv(collect_features(dir.path())));
    const auto sets = join_labels(features, anns);
    CHECK(sets.size() == 2);
    for (const auto& s : sets) CHECK(s.rows.size() == 6);

    SUBCASE("malformed replies leave unannotated markers") {
      mock.reply_ = "not a verdict";
      opt.remote->id = "broken";
      const auto bad = annotate_runs(dir.path(), opt);
      CHECK(bad.records.empty());
      CHECK(bad.unannotated.size() == 6);
      CHECK(bad.transport_failures == 0);
      CHECK(fs::exists(dir.path() / "unannotated.jsonl"));
      CHECK(load_annotations(dir.path() / "annotations.jsonl").size() == 12);
    }
    ::unsetenv(std::string(kJudgeTokenEnv).c_str());
  }

  TEST_CASE("join requires a label for every feature row") {
    auto set = synthetic_labeled(3, 2, 1);
    std::vector<AnnotationRecord> anns;
    for (std::size_t i = 0; i + 1 < set.rows.size(); ++i) anns.push_back(normalize_and_combine(set.rows[i].run_id, "h", 5, 5));
    CHECK_THROWS_AS(join_labels(set.rows, anns), DataError);
  }

  TEST_CASE("fit recovers a deterministic label and the permutation null does not") {
    const auto data = synthetic_labeled(20, 6, 5);
    FitOptions opt;
    opt.params.n_trees = 60;
    const auto fit = fit_and_evaluate(data, opt);
    REQUIRE(fit.report.per_seed.size() == 5);
    CHECK(fit.report.seeds == std::vector<std::uint64_t>{22, 42, 31, 61, 10});
    for (const auto& m : fit.report.per_seed) CHECK(m.r2 > 0.8);
    for (const auto& plan : fit.splits) {
      std::vector<std::string> both;
      std::set_intersection(plan.train_groups.begin(), plan.train_groups.end(), plan.test_groups.begin(),
                            plan.test_groups.end(), std::back_inserter(both));
      CHECK(both.empty());
      CHECK(plan.test_groups.size() == 6);
    }
    opt.permute_labels = 1;
    const auto null = fit_and_evaluate(data, opt);
    CHECK(null.report.mean.r2 <= 0.0);
    CHECK(format_reports({fit.report}).find("R2") != std::string::npos);

    LabeledSet one = data;
    for (auto& r : one.rows) r.group_key = "same";
    CHECK_THROWS_AS(fit_and_evaluate(one, opt), DataError);
  }

  TEST_CASE("comparison ties are not marked") {
    testutil::TempDir dir("compare");
    const auto out = sweep(dir.path());
    std::vector<AnnotationRecord> anns;
    for (const auto& r : out.index.runs) anns.push_back(normalize_and_combine(r.run_id, "h", 6, 6));
    const auto t = compare_functions(out.index, anns);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].winner.empty());
    CHECK(t.rows[0].add == doctest::Approx(0.36));
    const auto text = comparison_to_text(t);
    CHECK(text.substr(0, text.find("(*")).find('*') == std::string::npos);

    anns.clear();
    for (const auto& r : out.index.runs)
      anns.push_back(normalize_and_combine(r.run_id, "h", r.function == "rotate" && r.alpha == 120 ? 9 : 5, 8));
    const auto w = compare_functions(out.index, anns);
    CHECK(w.rows[0].winner == "rotate");
    CHECK(w.cells[0].alpha_rotate == 120.0);
    CHECK(comparison_to_csv(w).find("rotate") != std::string::npos);
  }

  TEST_CASE("reports are deterministic") {
    testutil::TempDir dir("report");
    sweep(dir.path());
    for (auto kind : {ReportKind::nbf_curves, ReportKind::kl_curves, ReportKind::attention_heatmap,
                      ReportKind::appendix_b_pair}) {
      CAPTURE(to_string(kind));
      const auto a = build_report(dir.path(), kind);
      const auto b = build_report(dir.path(), kind);
      CHECK(a.svg == b.svg);
      CHECK(a.csv == b.csv);
      CHECK(a.svg.find("<svg") != std::string::npos);
      CHECK(a.svg.find("</svg>") != std::string::npos);
      CHECK_FALSE(a.csv.empty());
      CHECK(report_kind_from_string(to_string(kind)) == kind);
    }
    const auto kl = build_report(dir.path(), ReportKind::kl_curves).svg;
    CHECK(kl.find("Mean Diff") != std::string::npos);
    CHECK(kl.find("stroke-dasharray") != std::string::npos);
    emit_report(dir.path(), ReportKind::nbf_curves, dir.path() / "figs" / "nbf.svg");
    CHECK(fs::exists(dir.path() / "figs" / "nbf.svg"));
    CHECK(fs::exists(dir.path() / "figs" / "nbf.csv"));
    ReportSelection sel;
    sel.concept_name = "nope";
    CHECK_THROWS_AS(build_report(dir.path(), ReportKind::nbf_curves, sel), DataError);
  }

  TEST_CASE("svg helpers") {
    CHECK(xml_escape("a<b & \"c\"") == "a&lt;b &amp; &quot;c&quot;");
    CHECK(palette_color(0) == palette_color(10));
    SvgDocument doc(100, 50);
    doc.text(1, 2, "hi");
    CHECK(doc.str() == doc.str());
    CHECK(doc.str().find("viewBox") != std::string::npos);
  }
}
