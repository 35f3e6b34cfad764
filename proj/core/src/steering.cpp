#include "steersig/steering.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "steersig/checkpoint.hpp"
#include "steersig/error.hpp"

namespace steersig {

namespace {

constexpr double kAngleEps = 1e-8;

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void require_same_dim(std::span<const double> h, std::span<const double> s, const char* op) {
  if (h.size() != s.size()) {
    throw InvalidArgument(std::string(op) + ": dimension mismatch (" + std::to_string(h.size()) +
                          " vs " + std::to_string(s.size()) + ")");
  }
}

// Unit vector orthogonal to x_hat: Gram-Schmidt of `seed`, repeated once to
// remove the rounding left by the first pass.
std::vector<double> orthonormal_to(std::span<const double> x_hat, std::vector<double> seed) {
  for (int pass = 0; pass < 2; ++pass) {
    const double c = dot(x_hat, seed);
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] -= c * x_hat[i];
  }
  const double n = norm(seed);
  for (auto& v : seed) v /= n;
  return seed;
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::caa: return "caa";
    case Provenance::imported_sae: return "imported-sae";
    case Provenance::planted: return "planted";
    case Provenance::file: return "file";
  }
  return "file";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "caa") return Provenance::caa;
  if (s == "imported-sae" || s == "sae") return Provenance::imported_sae;
  if (s == "planted") return Provenance::planted;
  if (s == "file") return Provenance::file;
  throw InvalidArgument("unknown provenance '" + s + "'");
}

std::string to_string(SteeringFunction f) { return f == SteeringFunction::add ? "add" : "rotate"; }

SteeringFunction steering_function_from_string(const std::string& s) {
  if (s == "add") return SteeringFunction::add;
  if (s == "rotate" || s == "rot") return SteeringFunction::rotate;
  throw InvalidArgument("unknown steering function '" + s + "'");
}

void SteeringVector::validate() const {
  if (values.empty()) throw InvalidArgument("steering vector is empty");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("steering vector has a non-finite entry");
  }
  if (!(norm(values) > 0.0)) throw InvalidArgument("steering vector has zero norm");
}

void SteeringSpec::validate(std::size_t n_layers, std::size_t d_model) const {
  vector.validate();
  if (vector.values.size() != d_model) {
    throw InvalidArgument("steering vector dimension " + std::to_string(vector.values.size()) +
                          " does not match d_model " + std::to_string(d_model));
  }
  if (!(alpha_max > 0.0)) throw InvalidArgument("alpha_max must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be finite and >= 0");
  if (function == SteeringFunction::rotate && alpha > alpha_max) {
    throw InvalidArgument("rotation requires alpha <= alpha_max");
  }
  if (layers.empty()) throw InvalidArgument("steering layer set is empty");
  for (auto l : layers) {
    if (l < 1 || l > n_layers) {
      throw InvalidArgument("steering layer " + std::to_string(l) + " outside 1.." + std::to_string(n_layers));
    }
  }
}

RotationGeometry rotation_geometry(std::span<const double> h, std::span<const double> s, double beta) {
  require_same_dim(h, s, "rotation_geometry");
  const double hn = norm(h);
  const double sn = norm(s);
  if (!(hn > 0.0)) throw InvalidArgument("steer_rotate: residual has zero norm");
  if (!(sn > 0.0)) throw InvalidArgument("steer_rotate: steering vector has zero norm");

  RotationGeometry g;
  g.x_hat.resize(h.size());
  g.y_hat.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    g.x_hat[i] = h[i] / hn;
    g.y_hat[i] = s[i] / sn;
  }
  const double c = std::clamp(dot(g.x_hat, g.y_hat), -1.0, 1.0);
  g.theta = std::acos(c);
  g.phi = beta * g.theta;

  g.parallel = g.theta < kAngleEps;
  g.antiparallel = std::numbers::pi - g.theta < kAngleEps;
  if (g.parallel || g.antiparallel) {
    // Lowest-index basis vector that is not collinear with x_hat. In the
    // parallel case the plane is irrelevant (phi = 0) but v_hat stays unit.
    std::size_t pick = 0;
    for (; pick + 1 < h.size(); ++pick) {
      if (1.0 - g.x_hat[pick] * g.x_hat[pick] > 1e-12) break;
    }
    std::vector<double> e(h.size(), 0.0);
    e[pick] = 1.0;
    g.v_hat = h.size() > 1 ? orthonormal_to(g.x_hat, std::move(e)) : std::vector<double>(1, 0.0);
    if (g.parallel) {
      g.phi = 0.0;
      g.z_hat = g.x_hat;
      return g;
    }
  } else {
    g.v_hat = orthonormal_to(g.x_hat, g.y_hat);
  }
  const double cp = std::cos(g.phi);
  const double sp = std::sin(g.phi);
  g.z_hat.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) g.z_hat[i] = cp * g.x_hat[i] + sp * g.v_hat[i];
  return g;
}

std::vector<double> steer_add(std::span<const double> h, std::span<const double> s, double alpha) {
  require_same_dim(h, s, "steer_add");
  std::vector<double> out(h.begin(), h.end());
  if (alpha == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * s[i];
  return out;
}

std::vector<double> steer_rotate(std::span<const double> h, std::span<const double> s, double alpha,
                                 double alpha_max) {
  require_same_dim(h, s, "steer_rotate");
  if (!(alpha_max > 0.0)) throw InvalidArgument("steer_rotate: alpha_max must be > 0");
  if (!(alpha >= 0.0 && alpha <= alpha_max)) {
    throw InvalidArgument("steer_rotate: alpha outside [0, alpha_max]");
  }
  const auto g = rotation_geometry(h, s, alpha / alpha_max);
  if (alpha == 0.0 || g.parallel) return {h.begin(), h.end()};
  const double hn = norm(h);
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = hn * g.z_hat[i];
  return out;
}

bool SteeringIntervention::applies_at(std::size_t layer) const {
  return std::find(spec_.layers.begin(), spec_.layers.end(), layer) != spec_.layers.end();
}

void SteeringIntervention::apply(std::size_t, std::span<double> residual) const {
  const auto& s = spec_.vector.values;
  std::vector<double> out = spec_.function == SteeringFunction::add
                                ? steer_add(residual, s, spec_.alpha)
                                : steer_rotate(residual, s, spec_.alpha, spec_.alpha_max);
  std::copy(out.begin(), out.end(), residual.begin());
}

SteeringVector extract_caa(const Model& model, const std::vector<std::vector<TokenId>>& positive,
                           const std::vector<std::vector<TokenId>>& negative, std::size_t layer,
                           bool unit_normalize) {
  if (positive.empty() || negative.empty()) throw InvalidArgument("extract_caa: empty prompt set");
  if (layer < 1 || layer > model.config.n_layers) {
    throw InvalidArgument("extract_caa: layer " + std::to_string(layer) + " outside 1.." +
                          std::to_string(model.config.n_layers));
  }
  const std::size_t d = model.config.d_model;
  auto mean_activation = [&](const std::vector<std::vector<TokenId>>& prompts) {
    std::vector<double> acc(d, 0.0);
    for (const auto& p : prompts) {
      const auto trace = forward_step(model, p);
      const auto& h = trace.residual_pre[layer];
      for (std::size_t i = 0; i < d; ++i) acc[i] += h[i];
    }
    for (auto& v : acc) v /= static_cast<double>(prompts.size());
    return acc;
  };
  const auto pos = mean_activation(positive);
  const auto neg = mean_activation(negative);
  SteeringVector out;
  out.provenance = Provenance::caa;
  out.source_layer = layer;
  out.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) out.values[i] = pos[i] - neg[i];
  const double n = norm(out.values);
  if (!(n > 0.0)) throw InvalidArgument("extract_caa: positive and negative means coincide");
  if (unit_normalize) {
    for (auto& v : out.values) v /= n;
  }
  return out;
}

std::string export_vector(const SteeringVector& v) {
  const nlohmann::json j{{"concept", v.concept_name},
                         {"layer", v.source_layer},
                         {"dim", v.values.size()},
                         {"values", v.values},
                         {"provenance", to_string(v.provenance)}};
  return j.dump(2) + "\n";
}

void export_vector_file(const SteeringVector& v, const std::filesystem::path& path) {
  write_file_atomic(path, export_vector(v));
}

SteeringVector import_vector(std::string_view json_text, std::size_t expected_dim) {
  SteeringVector v;
  try {
    const auto j = nlohmann::json::parse(json_text);
    v.concept_name = j.value("concept", std::string{});
    v.source_layer = j.value("layer", std::size_t{0});
    v.values = j.at("values").get<std::vector<double>>();
    const auto dim = j.at("dim").get<std::size_t>();
    if (dim != v.values.size()) {
      throw FormatError("vector file declares dim " + std::to_string(dim) + " but has " +
                        std::to_string(v.values.size()) + " values");
    }
    const auto prov = j.value("provenance", std::string("file"));
    v.provenance = (prov == "imported-sae" || prov == "sae") ? Provenance::imported_sae : Provenance::file;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vector file: ") + e.what());
  }
  if (expected_dim != 0 && v.values.size() != expected_dim) {
    throw InvalidArgument("vector has dimension " + std::to_string(v.values.size()) +
                          ", model expects " + std::to_string(expected_dim));
  }
  try {
    v.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return v;
}

SteeringVector import_vector_file(const std::filesystem::path& path, std::size_t expected_dim) {
  return import_vector(read_file(path), expected_dim);
}

}  // namespace steersig
