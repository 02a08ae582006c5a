#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "kanforget/errors.hpp"
#include "kanforget/forgetting_lab.hpp"
#include "oracles.hpp"

using namespace kanforget;

namespace {

constexpr std::size_t kBins = 400;

BranchSupport interval_branch(double a, double b, std::size_t bins = kBins) {
  BranchSupport s;
  s.axis = SupportAxis{-1.0, 1.0, bins};
  s.mask.assign(bins, 0);
  const double w = s.axis.bin_width();
  for (std::size_t k = 0; k < bins; ++k) {
    const double centre = -1.0 + (k + 0.5) * w;
    if (centre >= a && centre <= b) s.mask[k] = 1;
  }
  return s;
}

SupportProfile profile_of(std::vector<BranchSupport> branches) {
  SupportProfile p;
  for (std::size_t i = 0; i < branches.size(); ++i) branches[i].q = i;
  p.branches = std::move(branches);
  return p;
}

SupportProfile random_profile(std::mt19937_64& gen, std::size_t branches, std::size_t bins) {
  std::bernoulli_distribution coin(0.3);
  std::vector<BranchSupport> out(branches);
  for (auto& b : out) {
    b.axis = SupportAxis{-1.0, 1.0, bins};
    b.mask.resize(bins);
    for (auto& m : b.mask) m = coin(gen) ? 1 : 0;
  }
  return profile_of(std::move(out));
}

// Hand-built branch with |phi| > t exactly on (-0.5, 0): linear hats
// (order 1, spacing 0.1) centred at -0.4 .. -0.1 with huge amplitude.
KanNetwork plateau_net() {
  KanNetwork net;
  net.layers.push_back(KanLayer::zeros(1, 1, KnotGrid(-1.0, 1.0, 20, 1)));
  auto c = net.layers[0].coeffs(0, 0);
  // Basis m peaks at knot t_{m+1} = -1.1 + 0.1 (m + 1).
  for (std::size_t m = 6; m <= 9; ++m) c[m] = 1e6;
  net.layers[0].spline_scalers(0, 0) = 1.0;
  return net;
}

TaskDataset dense_inputs(std::size_t rows) {
  TaskDataset task;
  task.inputs = Matrix(rows, 1);
  task.targets = Matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) task.inputs(r, 0) = -1.0 + 2.0 * (r + 0.5) / rows;
  return task;
}

}  // namespace

TEST_SUITE("forgetting_lab") {

TEST_CASE("axis binning") {
  const SupportAxis axis{-1.0, 1.0, 400};
  CHECK(axis.bin_width() == 0.005);
  CHECK(axis.bin_of(-1.0) == 0);
  CHECK(axis.bin_of(-5.0) == 0);
  CHECK(axis.bin_of(1.0) == 399);
  CHECK(axis.bin_of(0.0) == 200);
}

TEST_CASE("measure of a zero branch is zero") {
  KanNetwork net;
  net.layers.push_back(KanLayer::zeros(2, 2, KnotGrid(-1.0, 1.0, 5, 3)));
  TaskDataset task;
  task.inputs = Matrix(50, 2, 0.3);
  task.targets = Matrix(50, 2);
  const auto profile = measure_supports(net, task, 1e-2, kBins);
  CHECK(profile.branches.size() == 4);
  CHECK(profile.total_measure() == 0.0);
}

TEST_CASE("constructed plateau branch measures 0.5") {
  const auto profile = measure_supports(plateau_net(), dense_inputs(4000), 1e-2, kBins);
  REQUIRE(profile.branches.size() == 1);
  const auto& b = profile.branches[0];
  CHECK(b.axis.lo == -1.0);
  CHECK(b.axis.hi == 1.0);
  CHECK(std::fabs(b.measure() - 0.5) <= 2 * b.axis.bin_width());
  CHECK(b.measure() <= b.axis.length());
  // Only bins a sample reaches count.
  const auto sparse = measure_supports(plateau_net(), dense_inputs(3), 1e-2, kBins);
  CHECK(sparse.branches[0].active_bins() <= 1);
}

TEST_CASE("measure is bounded by the axis on random networks") {
  KanInitOptions opt;
  const KanNetwork net = init_kan(std::vector<std::size_t>{2, 3, 2}, opt, 4);
  TaskDataset task;
  task.inputs = Matrix(300, 2);
  task.targets = Matrix(300, 2);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (double& v : task.inputs.values()) v = u(gen);
  const auto profile = measure_supports(net, task, 1e-2, kBins);
  CHECK(profile.branches.size() == 2 * 3 + 3 * 2);
  for (const auto& b : profile.branches) {
    CHECK(b.measure() <= b.axis.length() + 1e-12);
    CHECK(b.axis.lo <= -1.0);
    CHECK(b.axis.hi >= 1.0);
  }
  // Ordered by (layer, p, q).
  for (std::size_t i = 1; i < profile.branches.size(); ++i) {
    const auto& a = profile.branches[i - 1];
    const auto& b = profile.branches[i];
    CHECK(std::tie(a.layer, a.p, a.q) < std::tie(b.layer, b.p, b.q));
  }
  CHECK_THROWS_AS((void)measure_supports(net, task, 0.0, kBins), UsageError);
  TaskDataset empty;
  empty.inputs = Matrix(0, 2);
  CHECK_THROWS_AS((void)measure_supports(net, empty, 1e-2, kBins), UsageError);
}

TEST_CASE("refinement changes a measure by at most one bin per interval end") {
  const auto coarse = measure_supports(plateau_net(), dense_inputs(8000), 1e-2, 400);
  const auto fine = measure_supports(plateau_net(), dense_inputs(8000), 1e-2, 800);
  CHECK(std::fabs(coarse.branches[0].measure() - fine.branches[0].measure()) <= 2 * coarse.branches[0].axis.bin_width());
}

TEST_CASE("pairwise overlap") {
  const auto a = profile_of({interval_branch(0.0, 0.5), interval_branch(-1.0, -0.6)});
  const auto b = profile_of({interval_branch(0.3, 0.8), interval_branch(0.6, 1.0)});
  const auto ov = pairwise_overlap(a, b);
  const double w = a.branches[0].axis.bin_width();
  CHECK(std::fabs(ov.per_branch[0] - 0.2) <= w);
  CHECK(ov.per_branch[1] == 0.0);
  CHECK(ov.delta == ov.per_branch[0]);

  const auto same = pairwise_overlap(a, a);
  for (std::size_t i = 0; i < a.branches.size(); ++i) CHECK(same.per_branch[i] == a.branches[i].measure());

  const auto d = pairwise_overlap(profile_of({interval_branch(-1, -0.1)}), profile_of({interval_branch(0.1, 1)}));
  CHECK(d.delta == 0.0);

  auto other_axis = profile_of({interval_branch(0.0, 0.5, 200), interval_branch(0.0, 0.5, 200)});
  CHECK_THROWS_AS((void)pairwise_overlap(a, other_axis), UsageError);
  CHECK_THROWS_AS((void)pairwise_overlap(a, profile_of({interval_branch(0.0, 0.5)})), UsageError);
}

TEST_CASE("measure monotonicity on random profiles") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_profile(gen, 3, 64);
    const auto b = random_profile(gen, 3, 64);
    const auto ov = pairwise_overlap(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ov.per_branch[i] <= std::min(a.branches[i].measure(), b.branches[i].measure()));
    }
  }
}

TEST_CASE("cumulative overlap") {
  const std::vector<SupportProfile> ps{profile_of({interval_branch(-1.0, 0.0)}), profile_of({interval_branch(-0.5, 0.5)}),
                                       profile_of({interval_branch(-0.2, 1.0)})};
  const double w = ps[0].branches[0].axis.bin_width();
  const auto c0 = cumulative_overlap(ps, 0);
  // Hand intervals: [-1,0]∩[-0.5,0.5] = 0.5, [-1,0]∩[-0.2,1] = 0.2.
  CHECK(std::fabs(c0.total - 0.7) <= 2 * w);
  CHECK(cumulative_overlap(ps, 2).total == 0.0);
  CHECK_THROWS_AS((void)cumulative_overlap(ps, 3), UsageError);

  const std::vector<SupportProfile> apart{profile_of({interval_branch(-1.0, -0.5)}), profile_of({interval_branch(0.0, 0.3)}),
                                          profile_of({interval_branch(0.5, 1.0)})};
  CHECK(cumulative_overlap(apart, 0).total == 0.0);
}

TEST_CASE("union overlap: nested and disjoint") {
  const std::vector<SupportProfile> nested{profile_of({interval_branch(-1.0, 1.0)}), profile_of({interval_branch(-0.5, 0.5)}),
                                           profile_of({interval_branch(-0.2, 0.2)})};
  const auto un = union_overlap(nested, 0);
  CHECK(un.per_branch[0] == pairwise_overlap(nested[0], nested[1]).per_branch[0]);
  CHECK(un.all_pass);

  const std::vector<SupportProfile> disjoint{profile_of({interval_branch(-1.0, 1.0)}), profile_of({interval_branch(-0.8, -0.4)}),
                                             profile_of({interval_branch(0.2, 0.6)})};
  const auto ud = union_overlap(disjoint, 0);
  const double sum = pairwise_overlap(disjoint[0], disjoint[1]).per_branch[0] + pairwise_overlap(disjoint[0], disjoint[2]).per_branch[0];
  CHECK(ud.per_branch[0] == doctest::Approx(sum).epsilon(1e-14));
}

TEST_CASE("union bound holds on 100 random profile sets") {
  std::mt19937_64 gen(2024);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SupportProfile> ps;
    for (int t = 0; t < 5; ++t) ps.push_back(random_profile(gen, 4, 100));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto u = union_overlap(ps, i);
      CHECK(u.all_pass);
      for (std::size_t b = 0; b < u.per_branch.size(); ++b) {
        if (u.per_branch[b] > u.bound[b] * (1 + 1e-12)) ++violations;
      }
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("overlap matrix") {
  std::mt19937_64 gen(5);
  std::vector<SupportProfile> ps;
  for (int t = 0; t < 4; ++t) ps.push_back(random_profile(gen, 2, 50));
  const auto m = overlap_matrix(ps);
  CHECK(m.delta.rows() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m.delta(i, i) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(m.delta(i, j) == m.delta(j, i));
  }
  CHECK(m.cumulative.size() == 4);
  CHECK(m.unions.size() == 4);
}

TEST_CASE("forgetting from a hand-built ledger") {
  ForgettingLedger ledger(3);
  const double l[3][3] = {{0.1, 0.9, 0.8}, {0.3, 0.05, 0.7}, {0.4, 0.2, 0.02}};
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) ledger.loss(t, i) = l[t][i];
  const auto f = compute_forgetting(ledger);
  REQUIRE(f.size() == 3);
  CHECK(f[0] == doctest::Approx(0.4 - 0.1));
  CHECK(f[1] == doctest::Approx(0.2 - 0.05));
  CHECK(f[2] == 0.0);

  ForgettingLedger same(2);
  for (double& v : same.loss.values()) v = 0.25;
  for (double v : compute_forgetting(same)) CHECK(v == 0.0);

  ForgettingLedger gap(2);
  gap.loss(0, 0) = 1.0;
  CHECK_THROWS_AS((void)compute_forgetting(gap), UsageError);
}

TEST_CASE("coefficient of variation") {
  const std::vector<double> v{0.74, 0.72, 0.77, 0.75};
  CHECK(std::fabs(coefficient_of_variation(v) - oracle::cv(v)) < 1e-14);
  const std::vector<double> one{3.0};
  CHECK(coefficient_of_variation(one) == 0.0);
  const std::vector<double> flat{2.0, 2.0, 2.0};
  CHECK(coefficient_of_variation(flat) == 0.0);
  const std::vector<double> zero_mean{-1.0, 1.0};
  CHECK(std::isinf(coefficient_of_variation(zero_mean)));
}

TEST_CASE("theorem1 report") {
  std::vector<PairMeasurement> pairs;
  const double f[4] = {0.46, 0.31, 0.22, 0.15};
  const double dl[4] = {0.62, 0.42, 0.29, 0.2};
  for (int i = 0; i < 4; ++i) pairs.push_back({10, i + 1, i + 2, f[i], dl[i], 0.005});
  pairs.push_back({10, 5, 1, 0.0, 0.0, 0.005});   // disjoint: null ratio, not flagged
  pairs.push_back({10, 4, 2, 0.03, 0.001, 0.005});  // below resolution with forgetting: flagged
  const auto rep = ratio_report_theorem1(pairs);
  REQUIRE(rep.rows.size() == 6);
  std::vector<double> ratios;
  for (int i = 0; i < 4; ++i) {
    REQUIRE(rep.rows[i].ratio.has_value());
    CHECK(*rep.rows[i].ratio == doctest::Approx(f[i] / dl[i]));
    ratios.push_back(f[i] / dl[i]);
  }
  CHECK_FALSE(rep.rows[4].ratio.has_value());
  CHECK_FALSE(rep.rows[4].flagged);
  CHECK_FALSE(rep.rows[5].ratio.has_value());
  CHECK(rep.rows[5].flagged);
  CHECK(std::fabs(rep.cv_by_grid.at(10) - oracle::cv(ratios)) < 1e-12);

  std::ostringstream out;
  write_ratio_csv(out, rep);
  const std::string csv = out.str();
  CHECK(csv.find("task_i,task_j,grid,F_i,delta,ratio") != std::string::npos);
}

TEST_CASE("measure_pair uses a two-task ledger") {
  ForgettingLedger ledger(2);
  ledger.loss(0, 0) = 0.1;
  ledger.loss(0, 1) = 0.5;
  ledger.loss(1, 0) = 0.3;
  ledger.loss(1, 1) = 0.05;
  const auto a = profile_of({interval_branch(0.0, 0.5)});
  const auto b = profile_of({interval_branch(0.3, 0.8)});
  const auto m = measure_pair(10, 1, 2, ledger, a, b);
  CHECK(m.forgetting == doctest::Approx(0.2));
  CHECK(std::fabs(m.delta - 0.2) <= m.bin_width);
  CHECK_THROWS_AS((void)measure_pair(10, 1, 2, ForgettingLedger(3), a, b), UsageError);
}

TEST_CASE("theorem2 report skips the last task") {
  ForgettingLedger ledger(3);
  const double l[3][3] = {{0.1, 0.9, 0.8}, {0.3, 0.05, 0.7}, {0.4, 0.2, 0.02}};
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 3; ++i) ledger.loss(t, i) = l[t][i];
  const std::vector<SupportProfile> ps{profile_of({interval_branch(-1.0, 0.0)}), profile_of({interval_branch(-0.5, 0.5)}),
                                       profile_of({interval_branch(-0.2, 1.0)})};
  const auto rows = measure_cumulative(20, ledger, ps);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].task_js == std::vector<int>{2, 3});
  const auto rep = ratio_report_theorem2(rows);
  REQUIRE(rep.rows.size() == 2);
  CHECK(*rep.rows[0].ratio == doctest::Approx(rows[0].forgetting / rows[0].cumulative));
  CHECK(rep.cv_by_grid.count(20) == 1);
}

TEST_CASE("theorem3 report") {
  std::vector<DimensionMeasurement> runs{{{2, 28, 28}, 1e-3}, {{16, 16, 16}, 2e-3}, {{256, 28, 28}, 5e-4}};
  const auto rep = ratio_report_theorem3(runs);
  REQUIRE(rep.rows.size() == 3);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rep.rows[i].denominator == intrinsic_dimension(runs[i].spec));
    const double expect = std::log10(runs[i].forgetting) / intrinsic_dimension(runs[i].spec);
    CHECK(*rep.rows[i].ratio == doctest::Approx(expect).epsilon(1e-14));
    ratios.push_back(expect);
  }
  CHECK(std::fabs(rep.cv_by_grid.begin()->second - oracle::cv(ratios)) < 1e-12);
  std::vector<DimensionMeasurement> negative{{{2, 28, 28}, -1e-3}};
  CHECK(ratio_report_theorem3(negative).rows[0].flagged);
}

}
