#include "kanforget/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kanforget/errors.hpp"

namespace kanforget {

namespace {

constexpr int kMaxOrder = 16;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string(what) + ": non-finite input");
  }
}

// Knot t_i of the uniformly extended vector; valid for any integer i, which
// lets the local recursion run near the ends without bounds juggling.
double knot_at(const KnotGrid& grid, long i) {
  return grid.range_lo() + static_cast<double>(i - grid.order()) * grid.spacing();
}

// Index m of the knot span [t_m, t_{m+1}) holding x, or -1 beyond the knots.
long find_span(const KnotGrid& grid, double x) {
  const long last = static_cast<long>(grid.knots().size()) - 2;
  const double t0 = grid.knots().front();
  if (x < t0 || x >= grid.knots().back()) return -1;
  long m = static_cast<long>(std::floor((x - t0) / grid.spacing()));
  m = std::clamp(m, 0L, last);
  // Guard against rounding at the span boundaries.
  if (m > 0 && x < knot_at(grid, m)) --m;
  if (m < last && x >= knot_at(grid, m + 1)) ++m;
  return m;
}

// The degree+1 basis functions of `degree` that are nonzero on span m,
// local[r] belonging to global index m - degree + r.
void local_basis(const KnotGrid& grid, long m, int degree, double x, double* local) {
  double left[kMaxOrder + 1];
  double right[kMaxOrder + 1];
  local[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knot_at(grid, m + 1 - j);
    right[j] = knot_at(grid, m + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = local[r] / (right[r + 1] + left[j - r]);
      local[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    local[j] = saved;
  }
}

}  // namespace

KnotGrid::KnotGrid(double range_lo, double range_hi, int grid_size, int order)
    : range_lo_(range_lo), range_hi_(range_hi), grid_size_(grid_size), order_(order) {
  if (!std::isfinite(range_lo) || !std::isfinite(range_hi) || !(range_lo < range_hi)) {
    throw UsageError("KnotGrid: require finite range_lo < range_hi");
  }
  if (grid_size < 1) throw UsageError("KnotGrid: grid_size must be >= 1");
  if (order < 1 || order > kMaxOrder) {
    throw UsageError("KnotGrid: order must be in [1, " + std::to_string(kMaxOrder) + "]");
  }
  const std::size_t count = static_cast<std::size_t>(grid_size + 2 * order + 1);
  knots_.resize(count);
  for (std::size_t i = 0; i < count; ++i) knots_[i] = knot_at(*this, static_cast<long>(i));
}

std::vector<double> KnotGrid::interior_knots() const {
  return {knots_.begin() + order_, knots_.begin() + order_ + grid_size_ + 1};
}

void eval_basis_into(const KnotGrid& grid, double x, std::span<double> out) {
  require_finite(x, "eval_basis");
  if (out.size() != grid.basis_count()) throw UsageError("eval_basis: output size mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const long m = find_span(grid, x);
  if (m < 0) return;
  const int k = grid.order();
  double local[kMaxOrder + 1];
  local_basis(grid, m, k, x, local);
  const long n = static_cast<long>(out.size());
  for (int r = 0; r <= k; ++r) {
    const long idx = m - k + r;
    if (idx >= 0 && idx < n) out[static_cast<std::size_t>(idx)] = local[r];
  }
}

long eval_basis_local(const KnotGrid& grid, double x, std::span<double> local) {
  require_finite(x, "eval_basis");
  const int k = grid.order();
  if (local.size() < static_cast<std::size_t>(k + 1)) throw UsageError("eval_basis_local: buffer");
  std::fill(local.begin(), local.end(), 0.0);
  const long m = find_span(grid, x);
  if (m < 0) return -1;
  local_basis(grid, m, k, x, local.data());
  const long first = m - k;
  const long n = static_cast<long>(grid.basis_count());
  for (int r = 0; r <= k; ++r) {
    const long idx = first + r;
    if (idx < 0 || idx >= n) local[static_cast<std::size_t>(r)] = 0.0;
  }
  return first;
}

long eval_basis_derivative_local(const KnotGrid& grid, double x, std::span<double> local) {
  require_finite(x, "eval_basis_derivative");
  const int k = grid.order();
  if (local.size() < static_cast<std::size_t>(k + 1)) {
    throw UsageError("eval_basis_derivative_local: buffer");
  }
  std::fill(local.begin(), local.end(), 0.0);
  const long m = find_span(grid, x);
  if (m < 0) return -1;
  double lower[kMaxOrder + 1];
  local_basis(grid, m, k - 1, x, lower);
  const long first = m - k;
  const long n = static_cast<long>(grid.basis_count());
  for (int r = 0; r <= k; ++r) {
    const long i = first + r;
    if (i < 0 || i >= n) continue;
    // lower[r'] is the degree k-1 function with global index m-(k-1)+r' = first+1+r'.
    const double left = (r >= 1) ? lower[r - 1] : 0.0;
    const double right = (r <= k - 1) ? lower[r] : 0.0;
    const double a = k / (knot_at(grid, i + k) - knot_at(grid, i));
    const double b = k / (knot_at(grid, i + k + 1) - knot_at(grid, i + 1));
    local[static_cast<std::size_t>(r)] = a * left - b * right;
  }
  return first;
}

BasisVector eval_basis(const KnotGrid& grid, double x) {
  BasisVector out(grid.basis_count());
  eval_basis_into(grid, x, out);
  return out;
}

void eval_basis_derivative_into(const KnotGrid& grid, double x, std::span<double> out) {
  require_finite(x, "eval_basis_derivative");
  if (out.size() != grid.basis_count()) {
    throw UsageError("eval_basis_derivative: output size mismatch");
  }
  std::fill(out.begin(), out.end(), 0.0);
  const long m = find_span(grid, x);
  if (m < 0) return;
  const int k = grid.order();
  // Degree k-1 functions nonzero on span m: global index m-(k-1)+r.
  double lower[kMaxOrder + 1];
  local_basis(grid, m, k - 1, x, lower);
  auto lower_at = [&](long j) {
    const long r = j - (m - (k - 1));
    return (r >= 0 && r < k) ? lower[r] : 0.0;
  };
  const long n = static_cast<long>(out.size());
  for (long i = std::max(0L, m - k); i <= std::min(n - 1, m); ++i) {
    const double a = k / (knot_at(grid, i + k) - knot_at(grid, i));
    const double b = k / (knot_at(grid, i + k + 1) - knot_at(grid, i + 1));
    out[static_cast<std::size_t>(i)] = a * lower_at(i) - b * lower_at(i + 1);
  }
}

BasisVector eval_basis_derivative(const KnotGrid& grid, double x) {
  BasisVector out(grid.basis_count());
  eval_basis_derivative_into(grid, x, out);
  return out;
}

double eval_spline(const KnotGrid& grid, std::span<const double> coeffs, double x) {
  if (coeffs.size() != grid.basis_count()) throw UsageError("eval_spline: coefficient count");
  double basis[64];
  std::vector<double> heap;
  std::span<double> b;
  if (coeffs.size() <= 64) {
    b = std::span<double>(basis, coeffs.size());
  } else {
    heap.resize(coeffs.size());
    b = heap;
  }
  eval_basis_into(grid, x, b);
  double acc = 0.0;
  for (std::size_t m = 0; m < b.size(); ++m) acc += coeffs[m] * b[m];
  return acc;
}

namespace {

// In-place Cholesky of a symmetric n×n matrix (lower triangle). Returns the
// extreme pivots; a non-positive pivot aborts with ok = false.
struct CholeskyInfo {
  bool ok = true;
  double min_pivot = std::numeric_limits<double>::infinity();
  double max_pivot = 0.0;
};

CholeskyInfo cholesky(std::vector<double>& a, std::size_t n) {
  CholeskyInfo info;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j * n + p] * a[j * n + p];
    if (!(d > 0.0)) {
      info.ok = false;
      info.min_pivot = 0.0;
      return info;
    }
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    info.min_pivot = std::min(info.min_pivot, l);
    info.max_pivot = std::max(info.max_pivot, l);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t p = 0; p < j; ++p) s -= a[i * n + p] * a[j * n + p];
      a[i * n + j] = s / l;
    }
  }
  return info;
}

void cholesky_solve(const std::vector<double>& l, std::size_t n, std::vector<double>& rhs) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = rhs[i];
    for (std::size_t p = 0; p < i; ++p) s -= l[i * n + p] * rhs[p];
    rhs[i] = s / l[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t p = i + 1; p < n; ++p) s -= l[p * n + i] * rhs[p];
    rhs[i] = s / l[i * n + i];
  }
}

double condition_of(const CholeskyInfo& info) {
  if (!info.ok || info.min_pivot <= 0.0) return std::numeric_limits<double>::infinity();
  const double r = info.max_pivot / info.min_pivot;
  return r * r;
}

}  // namespace

std::vector<double> fit_coefficients(const KnotGrid& grid, std::span<const double> xs,
                                     std::span<const double> ys, const FitOptions& options) {
  if (xs.size() != ys.size()) throw UsageError("fit_coefficients: xs and ys differ in length");
  const std::size_t nb = grid.basis_count();
  const bool underdetermined = xs.size() < nb;
  if (underdetermined && !options.allow_rank_deficient) {
    throw UsageError("fit_coefficients: need at least " + std::to_string(nb) + " samples, got " +
                     std::to_string(xs.size()));
  }
  const double slack = 1e-12 * (grid.range_hi() - grid.range_lo());
  std::vector<double> normal(nb * nb, 0.0);
  std::vector<double> rhs(nb, 0.0);
  BasisVector b(nb);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_finite(ys[i], "fit_coefficients");
    if (xs[i] < grid.range_lo() - slack || xs[i] > grid.range_hi() + slack) {
      throw UsageError("fit_coefficients: sample outside the grid range");
    }
    eval_basis_into(grid, xs[i], b);
    for (std::size_t r = 0; r < nb; ++r) {
      if (b[r] == 0.0) continue;
      rhs[r] += b[r] * ys[i];
      for (std::size_t c = 0; c <= r; ++c) normal[r * nb + c] += b[r] * b[c];
    }
  }
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = r + 1; c < nb; ++c) normal[r * nb + c] = normal[c * nb + r];

  std::vector<double> factor = normal;
  CholeskyInfo info = cholesky(factor, nb);
  double condition = condition_of(info);
  if (underdetermined || condition > options.max_condition) {
    if (!options.allow_rank_deficient) {
      throw FitError("fit_coefficients: rank-deficient design matrix (condition estimate " +
                         std::to_string(condition) + ")",
                     condition);
    }
    factor = normal;
    for (std::size_t r = 0; r < nb; ++r) factor[r * nb + r] += options.ridge;
    info = cholesky(factor, nb);
    condition = condition_of(info);
    if (!info.ok) {
      throw FitError("fit_coefficients: ridge-regularized system is not positive definite",
                     condition);
    }
  }
  cholesky_solve(factor, nb, rhs);
  return rhs;
}

RefitResult refit_grid(const KnotGrid& grid, std::span<const double> coeffs,
                       std::span<const double> samples, double grid_epsilon) {
  if (samples.empty()) throw UsageError("refit_grid: no samples");
  if (!(grid_epsilon >= 0.0)) throw UsageError("refit_grid: grid_epsilon must be >= 0");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *lo_it - grid_epsilon;
  double hi = *hi_it + grid_epsilon;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  RefitResult result{KnotGrid(lo, hi, grid.grid_size(), grid.order()), {}};
  std::vector<double> xs(samples.begin(), samples.end());
  for (double t : result.grid.interior_knots()) xs.push_back(t);
  std::vector<double> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = std::clamp(xs[i], lo, hi);
    ys[i] = eval_spline(grid, coeffs, xs[i]);
  }
  FitOptions opts;
  opts.allow_rank_deficient = true;
  result.coeffs = fit_coefficients(result.grid, xs, ys, opts);
  return result;
}

}  // namespace kanforget
