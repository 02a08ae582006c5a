#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "kanforget/errors.hpp"
#include "kanforget/spline_basis.hpp"
#include "oracles.hpp"

using namespace kanforget;

TEST_SUITE("spline_basis") {

TEST_CASE("knot grid layout") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  CHECK(grid.knots().size() == 5 + 2 * 3 + 1);
  CHECK(grid.basis_count() == 8);
  CHECK(grid.spacing() == doctest::Approx(0.4).epsilon(1e-15));
  for (std::size_t i = 1; i < grid.knots().size(); ++i) {
    CHECK(grid.knots()[i] - grid.knots()[i - 1] == doctest::Approx(0.4).epsilon(1e-12));
  }
  CHECK(grid.interior_knots().size() == 6);
  CHECK_THROWS_AS(KnotGrid(1.0, -1.0, 5, 3), UsageError);
  CHECK_THROWS_AS(KnotGrid(-1.0, 1.0, 0, 3), UsageError);
  CHECK_THROWS_AS(KnotGrid(-1.0, 1.0, 5, 0), UsageError);
}

TEST_CASE("partition of unity on 1000 interior points") {
  for (int G : {1, 5, 10, 20}) {
    const KnotGrid grid(-1.0, 1.0, G, 3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double x = -1.0 + 2.0 * (i + 0.5) / 1000.0;
      const auto b = eval_basis(grid, x);
      worst = std::max(worst, std::fabs(std::accumulate(b.begin(), b.end(), 0.0) - 1.0));
    }
    CHECK(worst < 1e-12);
  }
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  for (double x : {-1.0, 1.0}) {
    const auto b = eval_basis(grid, x);
    CHECK(std::fabs(std::accumulate(b.begin(), b.end(), 0.0) - 1.0) < 1e-12);
  }
}

TEST_CASE("locality: at most k+1 nonzero entries") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k : {1, 2, 3}) {
    const KnotGrid grid(-1.0, 1.0, 7, k);
    for (int i = 0; i < 500; ++i) {
      const auto b = eval_basis(grid, u(gen));
      const auto nz = std::count_if(b.begin(), b.end(), [](double v) { return std::fabs(v) > 0.0; });
      CHECK(nz <= k + 1);
    }
  }
}

TEST_CASE("mirror symmetry at the centre") {
  const auto b = eval_basis(KnotGrid(-1.0, 1.0, 5, 3), 0.0);
  REQUIRE(b.size() == 8);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == doctest::Approx(b[b.size() - 1 - i]).epsilon(1e-14));
}

TEST_CASE("matches recursive long double oracle at x = 0.3") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  const auto b = eval_basis(grid, 0.3);
  const auto ref = oracle::basis(-1.0L, 1.0L, 5, 3, 0.3L);
  REQUIRE(b.size() == ref.size());
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::fabs(b[i] - static_cast<double>(ref[i])) < 1e-14);
}

TEST_CASE("matches oracle on random points, several orders") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.6, 1.6);
  for (int k : {1, 2, 3, 4}) {
    const KnotGrid grid(-1.0, 1.0, 6, k);
    for (int i = 0; i < 200; ++i) {
      const double x = u(gen);
      const auto b = eval_basis(grid, x);
      const auto ref = oracle::basis(-1.0L, 1.0L, 6, k, x);
      for (std::size_t m = 0; m < b.size(); ++m) CHECK(std::fabs(b[m] - static_cast<double>(ref[m])) < 1e-13);
    }
  }
}

TEST_CASE("outside the range uses extended knots, then vanishes") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  const auto inside_ext = eval_basis(grid, 1.3);
  CHECK(std::accumulate(inside_ext.begin(), inside_ext.end(), 0.0) < 1.0);
  CHECK(std::accumulate(inside_ext.begin(), inside_ext.end(), 0.0) > 0.0);
  const auto beyond = eval_basis(grid, 5.0);
  for (double v : beyond) CHECK(v == 0.0);
}

TEST_CASE("non-finite input is a domain error") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  CHECK_THROWS_AS((void)eval_basis(grid, std::numeric_limits<double>::quiet_NaN()), DomainError);
  CHECK_THROWS_AS((void)eval_basis(grid, std::numeric_limits<double>::infinity()), DomainError);
  CHECK_THROWS_AS((void)eval_basis_derivative(grid, std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST_CASE("derivative entries sum to zero") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  for (int i = 0; i < 100; ++i) {
    const double x = -0.99 + 1.98 * i / 99.0;
    const auto d = eval_basis_derivative(grid, x);
    CHECK(std::fabs(std::accumulate(d.begin(), d.end(), 0.0)) < 1e-10);
  }
}

TEST_CASE("derivative vs central finite differences") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-0.98, 0.98);
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  const double h = 1e-6;
  double worst = 0.0;
  std::vector<double> xs{0.3};
  for (int i = 0; i < 100; ++i) xs.push_back(u(gen));
  for (double x : xs) {
    const auto d = eval_basis_derivative(grid, x);
    const auto p = eval_basis(grid, x + h);
    const auto m = eval_basis(grid, x - h);
    for (std::size_t q = 0; q < d.size(); ++q) {
      const double fd = (p[q] - m[q]) / (2 * h);
      worst = std::max(worst, std::fabs(d[q] - fd) / (std::fabs(d[q]) + 1e-8));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("derivative on the degenerate G = 1 grid matches oracle") {
  const KnotGrid grid(-1.0, 1.0, 1, 3);
  for (double x : {-0.9, -0.25, 0.0, 0.4, 0.95}) {
    const auto d = eval_basis_derivative(grid, x);
    const auto ref = oracle::basis_derivative(-1.0L, 1.0L, 1, 3, x);
    REQUIRE(d.size() == ref.size());
    for (std::size_t q = 0; q < d.size(); ++q) CHECK(std::fabs(d[q] - static_cast<double>(ref[q])) < 1e-12);
  }
}

TEST_CASE("local forms agree with dense forms") {
  const KnotGrid grid(-1.0, 1.0, 8, 3);
  std::vector<double> local(4);
  for (double x : {-1.0, -0.73, 0.0, 0.31, 0.999, 1.2}) {
    const auto dense = eval_basis(grid, x);
    const long first = eval_basis_local(grid, x, local);
    REQUIRE(first >= -3);
    for (std::size_t j = 0; j < 4; ++j) {
      const long g = first + static_cast<long>(j);
      if (g >= 0 && g < static_cast<long>(dense.size())) CHECK(local[j] == doctest::Approx(dense[g]).epsilon(1e-15));
    }
    const auto ddense = eval_basis_derivative(grid, x);
    const long dfirst = eval_basis_derivative_local(grid, x, local);
    CHECK(dfirst == first);
    for (std::size_t j = 0; j < 4; ++j) {
      const long g = dfirst + static_cast<long>(j);
      if (g >= 0 && g < static_cast<long>(ddense.size())) CHECK(local[j] == doctest::Approx(ddense[g]).epsilon(1e-13));
    }
  }
}

TEST_CASE("fit: zero targets give zero coefficients") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  std::vector<double> xs(40), ys(40, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = -1.0 + 2.0 * i / 39.0;
  for (double c : fit_coefficients(grid, xs, ys)) CHECK(c == 0.0);
}

TEST_CASE("fit: recovers a spline from its own samples") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> truth(grid.basis_count());
  for (double& c : truth) c = u(gen);
  std::vector<double> xs(64), ys(64);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = u(gen);
    ys[i] = eval_spline(grid, truth, xs[i]);
  }
  const auto c = fit_coefficients(grid, xs, ys);
  for (std::size_t m = 0; m < c.size(); ++m) CHECK(std::fabs(c[m] - truth[m]) < 1e-8);
  for (int i = 0; i < 50; ++i) {
    const double x = u(gen);
    CHECK(std::fabs(eval_spline(grid, c, x) - eval_spline(grid, truth, x)) < 1e-8);
  }
}

TEST_CASE("fit: residual matches dense least-squares oracle") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> xs(64), ys(64);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = u(gen);
    ys[i] = u(gen);
  }
  const auto c = fit_coefficients(grid, xs, ys);
  double rss = 0.0;
  std::vector<std::vector<long double>> a;
  std::vector<long double> b;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = eval_spline(grid, c, xs[i]) - ys[i];
    rss += r * r;
    a.push_back(oracle::basis(-1.0L, 1.0L, 5, 3, xs[i]));
    b.push_back(ys[i]);
  }
  CHECK(std::fabs(rss - static_cast<double>(oracle::least_squares_rss(a, b))) < 1e-8);
}

TEST_CASE("fit errors") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  std::vector<double> few{0.0, 0.1};
  CHECK_THROWS_AS((void)fit_coefficients(grid, few, few), UsageError);
  std::vector<double> xs(20, 0.25), ys(20, 1.0);
  try {
    (void)fit_coefficients(grid, xs, ys);
    FAIL("expected FitError");
  } catch (const FitError& e) {
    CHECK(e.condition_estimate() > 1e12);
  }
  FitOptions ridge;
  ridge.allow_rank_deficient = true;
  const auto c = fit_coefficients(grid, xs, ys, ridge);
  CHECK(eval_spline(grid, c, 0.25) == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<double> shorter(19, 0.0);
  CHECK_THROWS_AS((void)fit_coefficients(grid, xs, shorter), UsageError);
}

TEST_CASE("refit hook keeps values over the samples") {
  const KnotGrid grid(-1.0, 1.0, 5, 3);
  std::vector<double> coeffs(grid.basis_count());
  for (std::size_t m = 0; m < coeffs.size(); ++m) coeffs[m] = std::sin(1.0 + m);
  std::vector<double> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(-0.5 + i / 199.0);
  const auto refit = refit_grid(grid, coeffs, samples, 0.02);
  CHECK(refit.grid.range_lo() < -0.5);
  CHECK(refit.grid.range_hi() > 0.5);
  for (double x : samples) CHECK(std::fabs(eval_spline(refit.grid, refit.coeffs, x) - eval_spline(grid, coeffs, x)) < 1e-3);
}

}
