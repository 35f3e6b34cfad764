#include "steersig/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"
#include "steersig/signals.hpp"
#include "steersig/svg.hpp"
#include "steersig/table_io.hpp"

namespace fs = std::filesystem;

namespace steersig {

std::string to_string(ReportKind k) {
  switch (k) {
    case ReportKind::nbf_curves: return "nbf-curves";
    case ReportKind::kl_curves: return "kl-curves";
    case ReportKind::attention_heatmap: return "attention-heatmap";
    case ReportKind::appendix_b_pair: return "appendix-b-pair";
  }
  return "unknown";
}

ReportKind report_kind_from_string(const std::string& s) {
  for (auto k : {ReportKind::nbf_curves, ReportKind::kl_curves, ReportKind::attention_heatmap,
                 ReportKind::appendix_b_pair}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown report kind '" + s + "'");
}

namespace {

struct Loaded {
  const RunRecord* run;
  SignalBundle bundle;
};

SignalBundle load_bundle(const fs::path& root, const RunRecord& r) {
  const auto t = read_csv_file(root / r.dir / "signals.csv");
  for (const char* col : {"nbf", "kl_steered", "kl_unsteered", "kl_diff"}) {
    if (!t.has_column(col)) throw DataError("run " + r.run_id + ": signals.csv lacks column " + col);
  }
  return bundle_from_table(t);
}

std::vector<double> steps_axis(std::size_t n) {
  std::vector<double> x(n);
  std::iota(x.begin(), x.end(), 1.0);
  return x;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string alpha_label(double a) { return "alpha=" + format_double(a); }

// Fixes every unset selector to the first matching run in grid order.
ReportSelection resolve(const SweepIndex& idx, ReportSelection sel, bool need_function) {
  for (const auto& r : idx.runs) {
    if (sel.model && r.model != *sel.model) continue;
    if (sel.concept_name && r.concept_name != *sel.concept_name) continue;
    if (sel.method && r.method != *sel.method) continue;
    if (need_function && sel.function && r.function != *sel.function) continue;
    if (sel.seed && r.seed != *sel.seed) continue;
    sel.model = r.model;
    sel.concept_name = r.concept_name;
    sel.method = r.method;
    if (need_function) sel.function = r.function;
    sel.seed = r.seed;
    return sel;
  }
  throw DataError("no runs match the report selection");
}

std::vector<const RunRecord*> matching(const SweepIndex& idx, const ReportSelection& sel,
                                       const std::string& function) {
  std::vector<const RunRecord*> out;
  for (const auto& r : idx.runs) {
    if (r.model == *sel.model && r.concept_name == *sel.concept_name && r.method == *sel.method &&
        r.function == function && r.seed == *sel.seed) {
      out.push_back(&r);
    }
  }
  std::sort(out.begin(), out.end(), [](const RunRecord* a, const RunRecord* b) { return a->alpha < b->alpha; });
  return out;
}

const RunRecord* at_alpha(const std::vector<const RunRecord*>& runs, double alpha) {
  for (const auto* r : runs) {
    if (r->alpha == alpha) return r;
  }
  return nullptr;
}

ReportOutput nbf_curves(const fs::path& root, const SweepIndex& idx, ReportSelection sel) {
  sel = resolve(idx, sel, true);
  const auto runs = matching(idx, sel, *sel.function);
  LineChart chart{"NBF per step: " + *sel.model + " / " + *sel.concept_name + " / " + *sel.method + " / " +
                      *sel.function,
                  "generation step t", "normalized branching factor", {}};
  CsvTable csv;
  csv.header = {"run_id", "alpha", "t", "nbf"};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto b = load_bundle(root, *runs[i]);
    chart.series.push_back({alpha_label(runs[i]->alpha), steps_axis(b.nbf.size()), b.nbf, palette_color(i), false});
    for (std::size_t t = 0; t < b.nbf.size(); ++t) {
      csv.rows.push_back({runs[i]->run_id, format_double(runs[i]->alpha), std::to_string(t + 1), format_double(b.nbf[t])});
    }
  }
  SvgDocument doc(800, 450);
  doc.line_chart(chart, 0, 0, 800, 450);
  return {doc.str(), write_csv(csv)};
}

ReportOutput kl_curves(const fs::path& root, const SweepIndex& idx, ReportSelection sel) {
  sel = resolve(idx, sel, true);
  const auto runs = matching(idx, sel, *sel.function);
  const RunRecord* run = sel.alpha ? at_alpha(runs, *sel.alpha) : runs.back();
  if (!run) throw DataError("no run at alpha " + format_double(*sel.alpha));
  const auto b = load_bundle(root, *run);
  const auto& kl = b.kl.front();
  const auto x = steps_axis(kl.steered.size());
  const double ms = mean_of(kl.steered), mu = mean_of(kl.unsteered), md = mean_of(kl.diff);
  LineChart chart{"KL to the steering vector: " + run->group_key + " " + alpha_label(run->alpha),
                  "generation step t",
                  "KL divergence",
                  {{"KL steered", x, kl.steered, palette_color(0), false},
                   {"KL unsteered", x, kl.unsteered, palette_color(1), false},
                   {"Diff", x, kl.diff, palette_color(2), false},
                   {"Mean steered", x, std::vector<double>(x.size(), ms), palette_color(0), true},
                   {"Mean unsteered", x, std::vector<double>(x.size(), mu), palette_color(1), true},
                   {"Mean Diff", x, std::vector<double>(x.size(), md), palette_color(2), true}}};
  CsvTable csv;
  csv.header = {"run_id", "t", "kl_steered", "kl_unsteered", "kl_diff"};
  for (std::size_t t = 0; t < x.size(); ++t) {
    csv.rows.push_back({run->run_id, std::to_string(t + 1), format_double(kl.steered[t]),
                        format_double(kl.unsteered[t]), format_double(kl.diff[t])});
  }
  csv.rows.push_back({run->run_id, "mean", format_double(ms), format_double(mu), format_double(md)});
  SvgDocument doc(800, 450);
  doc.line_chart(chart, 0, 0, 800, 450);
  return {doc.str(), write_csv(csv)};
}

ReportOutput attention_heatmap(const fs::path& root, const SweepIndex& idx, const ReportSelection& sel) {
  const std::string model = sel.model.value_or(idx.runs.empty() ? "" : idx.runs.front().model);
  std::vector<std::string> concepts;
  std::map<std::string, std::vector<std::vector<double>>> per_concept;  // concept -> per-run layer means
  std::size_t layers = 0;
  for (const auto& r : idx.runs) {
    if (r.model != model) continue;
    if (sel.method && r.method != *sel.method) continue;
    if (sel.function && r.function != *sel.function) continue;
    if (sel.alpha && r.alpha != *sel.alpha) continue;
    if (sel.seed && r.seed != *sel.seed) continue;
    const auto b = load_bundle(root, r);
    if (b.attention_max.empty()) throw DataError("run " + r.run_id + " has no attention columns");
    layers = b.attention_max.size();
    std::vector<double> means;
    for (const auto& s : b.attention_max) means.push_back(mean_of(s));
    if (!per_concept.count(r.concept_name)) concepts.push_back(r.concept_name);
    per_concept[r.concept_name].push_back(std::move(means));
  }
  if (concepts.empty()) throw DataError("no runs match the report selection");
  Heatmap map{"Mean attention max-probability: " + model, {}, concepts, {}};
  CsvTable csv;
  csv.header = {"layer", "concept", "mean_attn_max", "runs"};
  for (std::size_t l = 0; l < layers; ++l) {
    map.row_labels.push_back("layer " + std::to_string(l + 1));
    std::vector<double> row;
    for (const auto& c : concepts) {
      const auto& runs = per_concept.at(c);
      double s = 0.0;
      for (const auto& m : runs) s += m.at(l);
      const double v = s / static_cast<double>(runs.size());
      row.push_back(v);
      csv.rows.push_back({std::to_string(l + 1), c, format_double(v), std::to_string(runs.size())});
    }
    map.values.push_back(std::move(row));
  }
  SvgDocument doc(120 + 110.0 * static_cast<double>(concepts.size()), 90 + 40.0 * static_cast<double>(layers));
  doc.heatmap(map, 0, 0, 120 + 110.0 * static_cast<double>(concepts.size()), 90 + 40.0 * static_cast<double>(layers));
  return {doc.str(), write_csv(csv)};
}

ReportOutput appendix_b_pair(const fs::path& root, const SweepIndex& idx, ReportSelection sel) {
  sel = resolve(idx, sel, false);
  const auto adds = matching(idx, sel, "add");
  const auto rots = matching(idx, sel, "rotate");
  if (adds.empty() || rots.empty()) throw DataError("appendix-b-pair needs both add and rotate runs");
  const RunRecord* base = at_alpha(adds, 0.0);
  if (!base) base = at_alpha(rots, 0.0);
  if (!base) throw DataError("appendix-b-pair needs an alpha=0 run");

  double alpha = 0.0;
  if (sel.alpha) {
    alpha = *sel.alpha;
  } else {
    // Nonzero alpha with the closest mean NBF between the two functions,
    // ties broken by the larger gap in mean steered KL.
    double best_gap = std::numeric_limits<double>::infinity(), best_kl = -1.0;
    for (const auto* a : adds) {
      if (a->alpha == 0.0) continue;
      const auto* r = at_alpha(rots, a->alpha);
      if (!r) continue;
      const auto ba = load_bundle(root, *a), br = load_bundle(root, *r);
      const double gap = std::abs(ba.nbf_mean - br.nbf_mean);
      const double kl = std::abs(mean_of(ba.kl.front().steered) - mean_of(br.kl.front().steered));
      if (gap < best_gap || (gap == best_gap && kl > best_kl)) {
        best_gap = gap;
        best_kl = kl;
        alpha = a->alpha;
      }
    }
    if (!std::isfinite(best_gap)) throw DataError("no shared nonzero alpha between add and rotate");
  }
  const auto* ra = at_alpha(adds, alpha);
  const auto* rr = at_alpha(rots, alpha);
  if (!ra || !rr) throw DataError("no add/rotate pair at alpha " + format_double(alpha));
  const auto b0 = load_bundle(root, *base), ba = load_bundle(root, *ra), br = load_bundle(root, *rr);
  const auto x = steps_axis(b0.nbf.size());

  LineChart nbf{"NBF", "generation step t", "normalized branching factor",
                {{"alpha=0 baseline", x, b0.nbf, palette_color(7), true},
                 {"add " + alpha_label(alpha), x, ba.nbf, palette_color(0), false},
                 {"rotate " + alpha_label(alpha), x, br.nbf, palette_color(3), false}}};
  LineChart kl{"KL(steered || steering vector)", "generation step t", "KL divergence",
               {{"alpha=0 baseline", x, b0.kl.front().steered, palette_color(7), true},
                {"add " + alpha_label(alpha), x, ba.kl.front().steered, palette_color(0), false},
                {"rotate " + alpha_label(alpha), x, br.kl.front().steered, palette_color(3), false}}};
  CsvTable csv;
  csv.header = {"panel", "series", "run_id", "alpha", "t", "value"};
  const auto dump = [&](const std::string& panel, const std::string& series, const RunRecord& r,
                        const std::vector<double>& v) {
    for (std::size_t t = 0; t < v.size(); ++t) {
      csv.rows.push_back({panel, series, r.run_id, format_double(r.alpha), std::to_string(t + 1), format_double(v[t])});
    }
  };
  dump("nbf", "baseline", *base, b0.nbf);
  dump("nbf", "add", *ra, ba.nbf);
  dump("nbf", "rotate", *rr, br.nbf);
  dump("kl_steered", "baseline", *base, b0.kl.front().steered);
  dump("kl_steered", "add", *ra, ba.kl.front().steered);
  dump("kl_steered", "rotate", *rr, br.kl.front().steered);

  SvgDocument doc(1400, 480);
  doc.text(700, 20, "Add vs rotate: " + *sel.model + " / " + *sel.concept_name + " / " + *sel.method, 15, "middle");
  doc.line_chart(nbf, 0, 30, 700, 450);
  doc.line_chart(kl, 700, 30, 700, 450);
  return {doc.str(), write_csv(csv)};
}

}  // namespace

ReportOutput build_report(const fs::path& root, ReportKind kind, const ReportSelection& sel) {
  const auto idx = load_sweep_index(root);
  if (idx.runs.empty()) throw DataError("sweep has no runs");
  switch (kind) {
    case ReportKind::nbf_curves: return nbf_curves(root, idx, sel);
    case ReportKind::kl_curves: return kl_curves(root, idx, sel);
    case ReportKind::attention_heatmap: return attention_heatmap(root, idx, sel);
    case ReportKind::appendix_b_pair: return appendix_b_pair(root, idx, sel);
  }
  throw InvalidArgument("unknown report kind");
}

void emit_report(const fs::path& root, ReportKind kind, const fs::path& svg_path, const ReportSelection& sel) {
  const auto out = build_report(root, kind, sel);
  if (svg_path.has_parent_path()) fs::create_directories(svg_path.parent_path());
  write_file_atomic(svg_path, out.svg);
  auto csv_path = svg_path;
  csv_path.replace_extension(".csv");
  write_file_atomic(csv_path, out.csv);
}

}  // namespace steersig
