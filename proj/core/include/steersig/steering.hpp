#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "steersig/model.hpp"

namespace steersig {

enum class Provenance { caa, imported_sae, planted, file };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct SteeringVector {
  std::vector<double> values;
  Provenance provenance = Provenance::file;
  std::string concept_name;
  std::size_t source_layer = 0;

  // Throws InvalidArgument unless entries are finite and the norm is > 0.
  void validate() const;
};

enum class SteeringFunction { add, rotate };

std::string to_string(SteeringFunction f);
SteeringFunction steering_function_from_string(const std::string& s);

inline constexpr double kDefaultAlphaMax = 320.0;

struct SteeringSpec {
  SteeringVector vector;
  SteeringFunction function = SteeringFunction::add;
  double alpha = 0.0;
  double alpha_max = kDefaultAlphaMax;
  std::vector<std::size_t> layers;  // 1-based, subset of {1..L}

  void validate(std::size_t n_layers, std::size_t d_model) const;
};

// Geometry of one rotation step, exposed for tests and diagnostics.
struct RotationGeometry {
  std::vector<double> x_hat;  // normalized residual
  std::vector<double> y_hat;  // normalized steering direction
  double theta = 0.0;         // angle between x_hat and y_hat
  std::vector<double> v_hat;  // unit tangent at x_hat towards y_hat
  double phi = 0.0;           // beta * theta
  std::vector<double> z_hat;  // rotated direction
  bool parallel = false;      // theta < 1e-8; z_hat == x_hat
  bool antiparallel = false;  // pi - theta < 1e-8; plane from a basis vector
};

RotationGeometry rotation_geometry(std::span<const double> h, std::span<const double> s, double beta);

// h + alpha * s
std::vector<double> steer_add(std::span<const double> h, std::span<const double> s, double alpha);

// ||h|| * z_hat with beta = alpha / alpha_max. alpha == 0 and parallel inputs
// return h unchanged.
std::vector<double> steer_rotate(std::span<const double> h, std::span<const double> s, double alpha,
                                 double alpha_max = kDefaultAlphaMax);

// Applies spec.function at every position of the layers in spec.layers.
class SteeringIntervention final : public ResidualIntervention {
 public:
  explicit SteeringIntervention(const SteeringSpec& spec) : spec_(spec) {}
  bool applies_at(std::size_t layer) const override;
  void apply(std::size_t layer, std::span<double> residual) const override;

 private:
  const SteeringSpec& spec_;
};

// Contrastive activation difference: mean last-token residual h^(layer) over
// the positive prompts minus the same mean over the negative prompts.
SteeringVector extract_caa(const Model& model, const std::vector<std::vector<TokenId>>& positive,
                           const std::vector<std::vector<TokenId>>& negative, std::size_t layer,
                           bool unit_normalize = false);

// Vector file: {"concept", "layer", "dim", "values", "provenance"}.
std::string export_vector(const SteeringVector& v);
void export_vector_file(const SteeringVector& v, const std::filesystem::path& path);

// expected_dim == 0 skips the dimension check.
SteeringVector import_vector(std::string_view json_text, std::size_t expected_dim = 0);
SteeringVector import_vector_file(const std::filesystem::path& path, std::size_t expected_dim = 0);

}  // namespace steersig
