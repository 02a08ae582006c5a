#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kanforget {

/// Uniform knot layout for the B-spline branches of a KAN layer.
///
/// `grid_size` intervals cover [range_lo, range_hi]; the knot vector is
/// extended by `order` uniformly spaced knots on each side, giving
/// grid_size + 2*order + 1 knots and grid_size + order basis functions.
/// `order` is the polynomial degree (3 = cubic).
class KnotGrid {
 public:
  KnotGrid() = default;

  /// Throws UsageError unless range_lo < range_hi, grid_size >= 1, order >= 1.
  KnotGrid(double range_lo, double range_hi, int grid_size, int order);

  [[nodiscard]] double range_lo() const noexcept { return range_lo_; }
  [[nodiscard]] double range_hi() const noexcept { return range_hi_; }
  [[nodiscard]] int grid_size() const noexcept { return grid_size_; }
  [[nodiscard]] int order() const noexcept { return order_; }
  [[nodiscard]] double spacing() const noexcept { return (range_hi_ - range_lo_) / grid_size_; }
  [[nodiscard]] std::size_t basis_count() const noexcept {
    return static_cast<std::size_t>(grid_size_ + order_);
  }
  [[nodiscard]] std::span<const double> knots() const noexcept { return knots_; }

  /// The grid_size + 1 knots that lie inside [range_lo, range_hi].
  [[nodiscard]] std::vector<double> interior_knots() const;

  friend bool operator==(const KnotGrid&, const KnotGrid&) = default;

 private:
  double range_lo_ = -1.0;
  double range_hi_ = 1.0;
  int grid_size_ = 5;
  int order_ = 3;
  std::vector<double> knots_;
};

/// Values of all basis functions at one point; length grid.basis_count().
using BasisVector = std::vector<double>;

/// Cox-de Boor evaluation of every basis function at x. Points outside the
/// range are evaluated against the extended knots (no clamping), so the
/// result vanishes entirely beyond the outermost knots.
/// Throws DomainError for non-finite x.
[[nodiscard]] BasisVector eval_basis(const KnotGrid& grid, double x);

/// Non-allocating form; `out.size()` must equal grid.basis_count().
void eval_basis_into(const KnotGrid& grid, double x, std::span<double> out);

/// Sparse form: writes the order+1 basis values that can be nonzero at x
/// into `local` (size >= order+1) and returns the global index of local[0].
/// Entries whose global index falls outside [0, basis_count) are zeroed.
/// Returns -1 (and zeroes `local`) when x lies beyond the extended knots.
long eval_basis_local(const KnotGrid& grid, double x, std::span<double> local);

/// Sparse derivative companion of eval_basis_local, same index convention.
long eval_basis_derivative_local(const KnotGrid& grid, double x, std::span<double> local);

/// d/dx of every basis function, through the order-reduction identity
///   B'_{i,k} = k/(t_{i+k}-t_i) B_{i,k-1} - k/(t_{i+k+1}-t_{i+1}) B_{i+1,k-1}.
[[nodiscard]] BasisVector eval_basis_derivative(const KnotGrid& grid, double x);

void eval_basis_derivative_into(const KnotGrid& grid, double x, std::span<double> out);

/// Spline value sum_m coeffs[m] * B_m(x).
[[nodiscard]] double eval_spline(const KnotGrid& grid, std::span<const double> coeffs, double x);

struct FitOptions {
  /// When the normal equations are rank deficient (or the system is
  /// underdetermined), solve the ridge-regularized system instead of throwing.
  bool allow_rank_deficient = false;
  double ridge = 1e-10;
  /// Condition estimate (ratio of extreme Cholesky pivots) above which the
  /// design matrix counts as rank deficient.
  double max_condition = 1e12;
};

/// Least-squares spline coefficients minimizing sum_i (spline(xs[i]) - ys[i])^2,
/// solved through the normal equations with a Cholesky factorization.
///
/// Throws UsageError on length mismatch or (unless allow_rank_deficient)
/// fewer samples than basis functions; throws FitError carrying the
/// condition estimate when the design matrix is rank deficient.
[[nodiscard]] std::vector<double> fit_coefficients(const KnotGrid& grid,
                                                   std::span<const double> xs,
                                                   std::span<const double> ys,
                                                   const FitOptions& options = {});

struct RefitResult {
  KnotGrid grid;
  std::vector<double> coeffs;
};
/// Re-fit hook for grid updates: moves the uniform grid onto the sample
/// range widened by `grid_epsilon` on each side and refits the coefficients
/// so the spline keeps its values over the samples. The training pipeline
/// never calls this.
[[nodiscard]] RefitResult refit_grid(const KnotGrid& grid, std::span<const double> coeffs,
                                     std::span<const double> samples, double grid_epsilon);

}  // namespace kanforget
