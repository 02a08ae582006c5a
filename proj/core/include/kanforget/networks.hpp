#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "kanforget/matrix.hpp"
#include "kanforget/spline_basis.hpp"

namespace kanforget {

/// One KAN layer: out_dim × in_dim univariate branches
///   phi_{p,q}(z) = base_weights(q,p) * silu(z) + spline_scalers(q,p) * spline_{q,p}(z)
/// summed over p at each output q. No bias terms.
struct KanLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  KnotGrid grid;
  Matrix base_weights;                // [out_dim × in_dim]
  std::vector<double> spline_coeffs;  // [out_dim][in_dim][basis_count]
  Matrix spline_scalers;              // [out_dim × in_dim]

  /// All-zero layer with the given shape.
  static KanLayer zeros(std::size_t in_dim, std::size_t out_dim, const KnotGrid& grid);

  [[nodiscard]] std::span<double> coeffs(std::size_t q, std::size_t p);
  [[nodiscard]] std::span<const double> coeffs(std::size_t q, std::size_t p) const;

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    return 2 * in_dim * out_dim + spline_coeffs.size();
  }

  /// Throws UsageError on inconsistent shapes or non-finite parameters.
  void validate() const;

  friend bool operator==(const KanLayer&, const KanLayer&) = default;
};

struct KanNetwork {
  std::vector<KanLayer> layers;
  std::uint64_t seed = 0;  // recorded for checkpoints only

  [[nodiscard]] std::vector<std::size_t> dims() const;
  [[nodiscard]] std::size_t parameter_count() const noexcept;

  /// Parameters flattened layer by layer as base_weights, spline_coeffs,
  /// spline_scalers (each row-major). Gradients use the same order.
  [[nodiscard]] std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  void validate() const;

  friend bool operator==(const KanNetwork&, const KanNetwork&) = default;
};

/// Inputs seen by every layer plus the network output.
/// pre_activations[l] is [batch × layers[l].in_dim].
struct ForwardTrace {
  std::vector<Matrix> pre_activations;
  Matrix output;
};

/// Gradients in flat_parameters() order, plus d(loss)/d(input batch).
struct GradientSet {
  std::vector<double> parameters;
  Matrix input;
};

[[nodiscard]] double silu(double z) noexcept;
[[nodiscard]] double silu_derivative(double z) noexcept;

/// phi_{p,q}(z) for input index p and output index q of `layer`.
[[nodiscard]] double branch_eval(const KanLayer& layer, std::size_t p, std::size_t q, double z);

/// Spline part alone (without the scaler), used by support analysis.
[[nodiscard]] double branch_spline(const KanLayer& layer, std::size_t p, std::size_t q, double z);

[[nodiscard]] ForwardTrace forward(const KanNetwork& net, const Matrix& batch);

/// Chain rule through the trace produced by forward(net, ...).
[[nodiscard]] GradientSet backward(const KanNetwork& net, const ForwardTrace& trace,
                                   const Matrix& output_grad);

struct KanInitOptions {
  double range_lo = -1.0;
  double range_hi = 1.0;
  int grid_size = 5;
  int order = 3;
  double base_weight_scale = 1.0;
  double spline_weight_scale = 1.0;
  double spline_noise_scale = 0.1;
};

/// Base weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) * base_weight_scale;
/// spline coefficients fitted to U(-0.5, 0.5) * noise_scale noise drawn at
/// the grid points; scalers = spline_weight_scale. Deterministic in seed.
[[nodiscard]] KanNetwork init_kan(std::span<const std::size_t> dims, const KanInitOptions& options,
                                  std::uint64_t seed);

/// Fully connected baseline with silu on hidden layers and a linear head.
struct MlpLayer {
  Matrix weights;            // [out × in]
  std::vector<double> bias;  // [out]

  friend bool operator==(const MlpLayer&, const MlpLayer&) = default;
};

struct MlpNetwork {
  std::vector<MlpLayer> layers;
  std::uint64_t seed = 0;

  [[nodiscard]] std::vector<std::size_t> dims() const;
  [[nodiscard]] std::size_t parameter_count() const noexcept;
  /// weights then bias, layer by layer.
  [[nodiscard]] std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);
  void validate() const;

  friend bool operator==(const MlpNetwork&, const MlpNetwork&) = default;
};

/// pre_activations[l] is the input of layer l; affine[l] its pre-nonlinearity output.
struct MlpTrace {
  std::vector<Matrix> pre_activations;
  std::vector<Matrix> affine;
  Matrix output;
};

[[nodiscard]] MlpNetwork init_mlp(std::span<const std::size_t> dims, std::uint64_t seed);
[[nodiscard]] MlpTrace mlp_forward(const MlpNetwork& net, const Matrix& batch);
[[nodiscard]] GradientSet mlp_backward(const MlpNetwork& net, const MlpTrace& trace,
                                       const Matrix& output_grad);

inline MlpTrace forward(const MlpNetwork& net, const Matrix& batch) {
  return mlp_forward(net, batch);
}
inline GradientSet backward(const MlpNetwork& net, const MlpTrace& trace,
                            const Matrix& output_grad) {
  return mlp_backward(net, trace, output_grad);
}

/// Versioned text checkpoints; doubles are written with 17 significant
/// digits so a save/load cycle is bitwise exact.
void write_checkpoint(std::ostream& out, const KanNetwork& net);
void write_checkpoint(std::ostream& out, const MlpNetwork& net);
[[nodiscard]] KanNetwork read_kan_checkpoint(std::istream& in);
[[nodiscard]] MlpNetwork read_mlp_checkpoint(std::istream& in);

}  // namespace kanforget
