#include "steersig/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "steersig/error.hpp"
#include "steersig/parallel.hpp"
#include "steersig/rng.hpp"

namespace steersig {

void ForestParams::validate() const {
  if (n_trees < 1) throw InvalidArgument("forest: n_trees must be >= 1");
  if (min_samples_split < 2) throw InvalidArgument("forest: min_samples_split must be >= 2");
  if (min_samples_leaf < 1) throw InvalidArgument("forest: min_samples_leaf must be >= 1");
  if (max_features == MaxFeatures::count && max_features_count < 1) {
    throw InvalidArgument("forest: max_features count must be >= 1");
  }
}

std::size_t ForestParams::features_per_node(std::size_t d) const {
  switch (max_features) {
    case MaxFeatures::sqrt:
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
    case MaxFeatures::all: return d;
    case MaxFeatures::count: return std::min(d, max_features_count);
  }
  return d;
}

void to_json(nlohmann::json& j, const ForestParams& p) {
  std::string mf = "sqrt";
  if (p.max_features == ForestParams::MaxFeatures::all) mf = "all";
  if (p.max_features == ForestParams::MaxFeatures::count) mf = std::to_string(p.max_features_count);
  j = nlohmann::json{{"n_trees", p.n_trees},
                     {"bootstrap", p.bootstrap},
                     {"max_features", mf},
                     {"max_depth", p.max_depth ? nlohmann::json(*p.max_depth) : nlohmann::json(nullptr)},
                     {"min_samples_split", p.min_samples_split},
                     {"min_samples_leaf", p.min_samples_leaf},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, ForestParams& p) {
  const ForestParams d;
  p.n_trees = j.value("n_trees", d.n_trees);
  p.bootstrap = j.value("bootstrap", d.bootstrap);
  const auto mf = j.value("max_features", std::string("sqrt"));
  if (mf == "sqrt") {
    p.max_features = ForestParams::MaxFeatures::sqrt;
  } else if (mf == "all") {
    p.max_features = ForestParams::MaxFeatures::all;
  } else {
    p.max_features = ForestParams::MaxFeatures::count;
    p.max_features_count = std::stoul(mf);
  }
  if (j.contains("max_depth") && !j["max_depth"].is_null()) {
    p.max_depth = j["max_depth"].get<std::size_t>();
  } else {
    p.max_depth.reset();
  }
  p.min_samples_split = j.value("min_samples_split", d.min_samples_split);
  p.min_samples_leaf = j.value("min_samples_leaf", d.min_samples_leaf);
  p.seed = j.value("seed", d.seed);
}

double RegressionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

namespace {

struct SplitChoice {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double proxy = -std::numeric_limits<double>::infinity();
  std::size_t left_count = 0;
};

// Better split: larger proxy (equivalently smaller weighted child variance);
// ties go to the lower feature index, then the lower threshold.
bool improves(const SplitChoice& best, double proxy, std::size_t feature, double threshold) {
  if (!best.found) return true;
  if (proxy != best.proxy) return proxy > best.proxy;
  if (feature != best.feature) return feature < best.feature;
  return threshold < best.threshold;
}

struct PendingNode {
  std::size_t node;
  std::size_t begin;
  std::size_t end;
  std::size_t depth;
};

}  // namespace

RegressionTree fit_tree(const FeatureMatrix& x, std::span<const double> y,
                        std::span<const std::size_t> samples, const ForestParams& params,
                        std::uint64_t tree_seed) {
  const std::size_t d = x.front().size();
  const std::size_t mtry = params.features_per_node(d);
  Rng rng(tree_seed);
  std::vector<std::size_t> idx(samples.begin(), samples.end());
  std::vector<std::size_t> features(d);
  std::vector<std::pair<double, std::size_t>> order;

  RegressionTree tree;
  tree.nodes.emplace_back();
  std::vector<PendingNode> stack{{0, 0, idx.size(), 0}};

  while (!stack.empty()) {
    const PendingNode cur = stack.back();
    stack.pop_back();
    const std::size_t n = cur.end - cur.begin;
    double sum = 0.0;
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (std::size_t i = cur.begin; i < cur.end; ++i) {
      const double v = y[idx[i]];
      sum += v;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
    TreeNode& node = tree.nodes[cur.node];
    node.samples = n;
    node.value = sum / static_cast<double>(n);

    const bool depth_reached = params.max_depth && cur.depth >= *params.max_depth;
    if (n < params.min_samples_split || n < 2 * params.min_samples_leaf || ymin == ymax || depth_reached) {
      continue;
    }

    std::iota(features.begin(), features.end(), std::size_t{0});
    SplitChoice best;
    std::size_t visited = 0;
    for (std::size_t k = 0; k < d && visited < mtry; ++k) {
      // Lazy Fisher-Yates: draw the next candidate among the untried ones.
      const std::size_t j = k + static_cast<std::size_t>(rng.below(d - k));
      std::swap(features[k], features[j]);
      const std::size_t f = features[k];

      order.clear();
      for (std::size_t i = cur.begin; i < cur.end; ++i) order.emplace_back(x[idx[i]][f], idx[i]);
      std::sort(order.begin(), order.end());
      if (order.front().first == order.back().first) continue;  // constant here: not counted
      ++visited;

      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y[order[i].second];
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (order[i].first == order[i + 1].first) continue;
        if (nl < params.min_samples_leaf || nr < params.min_samples_leaf) continue;
        const double right_sum = sum - left_sum;
        const double proxy = left_sum * left_sum / static_cast<double>(nl) +
                             right_sum * right_sum / static_cast<double>(nr);
        double thr = 0.5 * (order[i].first + order[i + 1].first);
        if (thr >= order[i + 1].first) thr = order[i].first;
        if (improves(best, proxy, f, thr)) {
          best = {true, f, thr, proxy, nl};
        }
      }
    }
    if (!best.found) continue;

    auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(cur.begin),
                              idx.begin() + static_cast<std::ptrdiff_t>(cur.end),
                              [&](std::size_t r) { return x[r][best.feature] <= best.threshold; });
    const auto split = static_cast<std::size_t>(mid - idx.begin());
    const auto left = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& parent = tree.nodes[cur.node];
    parent.feature = static_cast<int>(best.feature);
    parent.threshold = best.threshold;
    parent.left = static_cast<int>(left);
    parent.right = static_cast<int>(left + 1);
    // Right first so the left subtree is expanded next (depth-first, left to right).
    stack.push_back({left + 1, split, cur.end, cur.depth + 1});
    stack.push_back({left, cur.begin, split, cur.depth + 1});
  }
  return tree;
}

double Forest::predict(std::span<const double> x) const {
  if (x.size() != n_features) {
    throw InvalidArgument("forest: input has " + std::to_string(x.size()) + " features, expected " +
                          std::to_string(n_features));
  }
  double acc = 0.0;
  for (const auto& t : trees) acc += t.predict(x);
  return acc / static_cast<double>(trees.size());
}

std::vector<double> Forest::predict(const FeatureMatrix& rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(predict(std::span<const double>(r)));
  return out;
}

std::vector<std::size_t> Forest::split_counts() const {
  std::vector<std::size_t> counts(n_features, 0);
  for (const auto& t : trees) {
    for (const auto& n : t.nodes) {
      if (n.feature >= 0) ++counts[static_cast<std::size_t>(n.feature)];
    }
  }
  return counts;
}

Forest fit_forest(const FeatureMatrix& x, std::span<const double> y, const ForestParams& params) {
  params.validate();
  if (x.empty() || y.empty()) throw InvalidArgument("fit_forest: empty data");
  if (x.size() != y.size()) throw InvalidArgument("fit_forest: X and y differ in length");
  if (x.size() < params.min_samples_split) {
    throw InvalidArgument("fit_forest: fewer rows than min_samples_split");
  }
  const std::size_t d = x.front().size();
  if (d == 0) throw InvalidArgument("fit_forest: no features");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != d) throw InvalidArgument("fit_forest: ragged feature matrix");
    if (!std::isfinite(y[i])) throw InvalidArgument("fit_forest: non-finite target");
    for (double v : x[i]) {
      if (!std::isfinite(v)) throw InvalidArgument("fit_forest: non-finite feature");
    }
  }

  Forest forest;
  forest.params = params;
  forest.n_features = d;
  forest.trees.resize(params.n_trees);
  const std::size_t n = x.size();

  auto build = [&](std::size_t t) {
    const std::uint64_t seed = derive_seed(params.seed, t);
    std::vector<std::size_t> samples(n);
    if (params.bootstrap) {
      Rng draw(derive_seed(seed, 0xb007));
      for (auto& s : samples) s = static_cast<std::size_t>(draw.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    forest.trees[t] = fit_tree(x, y, samples, params, seed);
  };

  parallel_for(params.n_trees, params.workers, build);
  return forest;
}

std::string forest_to_json(const Forest& forest) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : forest.trees) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(),
                   value = nlohmann::json::array(), samples = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      samples.push_back(n.samples);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left},
                     {"right", right},     {"value", value},         {"samples", samples}});
  }
  nlohmann::json j{{"format", "steersig-forest"},
                   {"version", 1},
                   {"n_features", forest.n_features},
                   {"params", forest.params},
                   {"trees", trees}};
  if (forest.scaler) {
    j["scaler"] = {{"mean", forest.scaler->mean},
                   {"std", forest.scaler->std},
                   {"constant", forest.scaler->constant}};
  }
  return j.dump();
}

Forest forest_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "steersig-forest") throw FormatError("not a steersig forest file");
    if (j.at("version") != 1) throw FormatError("unsupported forest version");
    Forest f;
    f.n_features = j.at("n_features").get<std::size_t>();
    f.params = j.at("params").get<ForestParams>();
    for (const auto& t : j.at("trees")) {
      RegressionTree tree;
      const auto feature = t.at("feature").get<std::vector<int>>();
      const auto threshold = t.at("threshold").get<std::vector<double>>();
      const auto left = t.at("left").get<std::vector<int>>();
      const auto right = t.at("right").get<std::vector<int>>();
      const auto value = t.at("value").get<std::vector<double>>();
      const auto samples = t.at("samples").get<std::vector<std::size_t>>();
      const std::size_t m = feature.size();
      if (threshold.size() != m || left.size() != m || right.size() != m || value.size() != m ||
          samples.size() != m || m == 0) {
        throw FormatError("forest tree arrays differ in length");
      }
      for (std::size_t i = 0; i < m; ++i) {
        if (feature[i] >= 0 && (feature[i] >= static_cast<int>(f.n_features) || left[i] <= 0 ||
                                right[i] <= 0 || left[i] >= static_cast<int>(m) ||
                                right[i] >= static_cast<int>(m))) {
          throw FormatError("forest node references are out of range");
        }
        tree.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i], samples[i]});
      }
      f.trees.push_back(std::move(tree));
    }
    if (f.trees.empty()) throw FormatError("forest has no trees");
    if (j.contains("scaler")) {
      Scaler s;
      s.mean = j["scaler"].at("mean").get<std::vector<double>>();
      s.std = j["scaler"].at("std").get<std::vector<double>>();
      s.constant = j["scaler"].at("constant").get<std::vector<bool>>();
      f.scaler = std::move(s);
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed forest file: ") + e.what());
  }
}

Metrics evaluate(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.size() != truth.size()) throw InvalidArgument("evaluate: length mismatch");
  if (truth.size() < 2) throw InvalidArgument("evaluate: need at least two points");
  const double n = static_cast<double>(truth.size());
  double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
  for (double t : truth) mean += t;
  mean /= n;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = predictions[i] - truth[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  Metrics m;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (ss_tot > 0.0) {
    m.r2 = 1.0 - sq_sum / ss_tot;
  } else {
    m.r2 = std::numeric_limits<double>::quiet_NaN();
    m.r2_defined = false;
  }
  return m;
}

EvaluationReport aggregate_report(std::string label, std::vector<std::uint64_t> seeds,
                                  std::vector<Metrics> per_seed) {
  if (per_seed.empty()) throw InvalidArgument("aggregate_report: no seeds");
  EvaluationReport r;
  r.label = std::move(label);
  r.seeds = std::move(seeds);
  r.per_seed = std::move(per_seed);
  const double n = static_cast<double>(r.per_seed.size());
  auto mean_std = [&](auto get, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& m : r.per_seed) mean += get(m);
    mean /= n;
    double ss = 0.0;
    for (const auto& m : r.per_seed) ss += (get(m) - mean) * (get(m) - mean);
    sd = std::sqrt(ss / n);
  };
  mean_std([](const Metrics& m) { return m.mae; }, r.mean.mae, r.std.mae);
  mean_std([](const Metrics& m) { return m.rmse; }, r.mean.rmse, r.std.rmse);
  mean_std([](const Metrics& m) { return m.r2; }, r.mean.r2, r.std.r2);
  r.mean.r2_defined = r.std.r2_defined =
      std::all_of(r.per_seed.begin(), r.per_seed.end(), [](const Metrics& m) { return m.r2_defined; });
  return r;
}

nlohmann::json report_to_json(const EvaluationReport& report) {
  auto metric_json = [](const Metrics& m) {
    return nlohmann::json{{"mae", m.mae},
                          {"rmse", m.rmse},
                          {"r2", m.r2_defined ? nlohmann::json(m.r2) : nlohmann::json(nullptr)}};
  };
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::size_t i = 0; i < report.per_seed.size(); ++i) {
    auto m = metric_json(report.per_seed[i]);
    m["seed"] = report.seeds.at(i);
    per_seed.push_back(std::move(m));
  }
  return {{"label", report.label},
          {"per_seed", per_seed},
          {"mean", metric_json(report.mean)},
          {"std", metric_json(report.std)}};
}

SplitPlan group_shuffle_split(const std::vector<std::string>& row_groups, double test_fraction,
                              std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("group_shuffle_split: test fraction must be in (0, 1)");
  }
  const std::set<std::string> distinct(row_groups.begin(), row_groups.end());
  if (distinct.size() < 2) throw InvalidArgument("group_shuffle_split: need at least two groups");
  std::vector<std::string> groups(distinct.begin(), distinct.end());
  Rng rng(seed);
  rng.shuffle(groups);

  const double raw = test_fraction * static_cast<double>(groups.size());
  auto n_test = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, groups.size() - 1);

  SplitPlan plan;
  plan.seed = seed;
  plan.test_fraction = test_fraction;
  plan.row_groups = row_groups;
  const std::set<std::string> test(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_test));
  for (std::size_t i = 0; i < row_groups.size(); ++i) {
    (test.count(row_groups[i]) ? plan.test_rows : plan.train_rows).push_back(i);
  }
  plan.test_groups.assign(test.begin(), test.end());
  for (const auto& g : distinct) {
    if (!test.count(g)) plan.train_groups.push_back(g);
  }
  return plan;
}

}  // namespace steersig
