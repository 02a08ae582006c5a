#pragma once

// Slow, independent reference implementations used only by the tests.

#include <cmath>
#include <cstddef>
#include <vector>

#include "kanforget/spline_basis.hpp"

namespace oracle {

/// Plain recursive Cox-de Boor in long double, half-open intervals.
inline long double bspline(const std::vector<long double>& t, std::size_t i, int k, long double x) {
  if (k == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0L : 0.0L;
  long double left = 0.0L;
  long double right = 0.0L;
  const long double dl = t[i + k] - t[i];
  const long double dr = t[i + k + 1] - t[i + 1];
  if (dl != 0.0L) left = (x - t[i]) / dl * bspline(t, i, k - 1, x);
  if (dr != 0.0L) right = (t[i + k + 1] - x) / dr * bspline(t, i + 1, k - 1, x);
  return left + right;
}

/// Knots rebuilt from the definition, not read back from the grid.
inline std::vector<long double> knots(long double lo, long double hi, int G, int k) {
  std::vector<long double> t;
  const long double h = (hi - lo) / G;
  for (int j = -k; j <= G + k; ++j) t.push_back(lo + h * j);
  return t;
}

inline std::vector<long double> basis(long double lo, long double hi, int G, int k, long double x) {
  const auto t = knots(lo, hi, G, k);
  std::vector<long double> out(static_cast<std::size_t>(G + k));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bspline(t, i, k, x);
  return out;
}

/// d/dx through the textbook identity, recursively in long double.
inline std::vector<long double> basis_derivative(long double lo, long double hi, int G, int k, long double x) {
  const auto t = knots(lo, hi, G, k);
  std::vector<long double> out(static_cast<std::size_t>(G + k));
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double d = 0.0L;
    const long double dl = t[i + k] - t[i];
    const long double dr = t[i + k + 1] - t[i + 1];
    if (dl != 0.0L) d += k / dl * bspline(t, i, k - 1, x);
    if (dr != 0.0L) d -= k / dr * bspline(t, i + 1, k - 1, x);
    out[i] = d;
  }
  return out;
}

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

/// Dense least squares by Householder QR in long double; returns the
/// residual sum of squares of the optimum.
inline long double least_squares_rss(std::vector<std::vector<long double>> a, std::vector<long double> b) {
  const std::size_t m = a.size();
  const std::size_t n = a.front().size();
  for (std::size_t j = 0; j < n; ++j) {
    long double norm = 0.0L;
    for (std::size_t i = j; i < m; ++i) norm += a[i][j] * a[i][j];
    norm = std::sqrt(norm);
    if (norm == 0.0L) continue;
    const long double alpha = a[j][j] > 0 ? -norm : norm;
    std::vector<long double> v(m, 0.0L);
    for (std::size_t i = j; i < m; ++i) v[i] = a[i][j];
    v[j] -= alpha;
    long double vv = 0.0L;
    for (std::size_t i = j; i < m; ++i) vv += v[i] * v[i];
    if (vv == 0.0L) continue;
    for (std::size_t c = j; c < n; ++c) {
      long double dot = 0.0L;
      for (std::size_t i = j; i < m; ++i) dot += v[i] * a[i][c];
      for (std::size_t i = j; i < m; ++i) a[i][c] -= 2.0L * dot / vv * v[i];
    }
    long double dot = 0.0L;
    for (std::size_t i = j; i < m; ++i) dot += v[i] * b[i];
    for (std::size_t i = j; i < m; ++i) b[i] -= 2.0L * dot / vv * v[i];
  }
  long double rss = 0.0L;
  for (std::size_t i = n; i < m; ++i) rss += b[i] * b[i];
  return rss;
}

/// Sample standard deviation over |mean|, two-pass.
inline double cv(const std::vector<double>& v) {
  long double mean = 0.0L;
  for (double x : v) mean += x;
  mean /= v.size();
  long double ss = 0.0L;
  for (double x : v) ss += (x - mean) * (x - mean);
  return static_cast<double>(std::sqrt(ss / (v.size() - 1)) / std::fabs(mean));
}

}  // namespace oracle
