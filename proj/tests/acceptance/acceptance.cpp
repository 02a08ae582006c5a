// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   kanforget_acceptance                 run all eleven criteria
//   kanforget_acceptance -c 3 -c 6       run a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kanforget/errors.hpp"
#include "kanforget/forgetting_lab.hpp"
#include "kanforget/networks.hpp"
#include "kanforget/runner/artifacts.hpp"
#include "kanforget/runner/config.hpp"
#include "kanforget/runner/experiments.hpp"
#include "kanforget/spline_basis.hpp"
#include "kanforget/task_corpus.hpp"
#include "kanforget/training.hpp"

using namespace kanforget;
using namespace kanforget::runner;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- pinned tolerances ------------------------------------------------------
constexpr double kMaxForgettingBinary = 1e-4;     // criterion 1
constexpr double kTransferDrop = 100.0;           // criterion 1: two orders of magnitude
constexpr double kInversionSlack = 0.10;          // criterion 2
constexpr double kPairCvMax = 0.20;               // criterion 3
constexpr double kCumulativeCvMax = 0.20;         // criterion 4
constexpr double kCvGrowthSlack = 0.05;           // criterion 4
constexpr double kMcSigmas = 3.0;                 // criterion 6
constexpr int kMcCellsRequired = 8;               // criterion 6, of 9
constexpr double kDimensionSlopeTol = 0.3;        // criterion 7
constexpr double kFragmentSlopeTol = 0.3;         // criterion 8
constexpr double kImageCvMax = 0.25;              // criterion 9
constexpr double kUnityTol = 1e-12;               // criterion 10
constexpr double kGradTol = 1e-5;                 // criterion 10
constexpr double kAdamTol = 1e-12;                // criterion 10

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

unsigned g_workers = 1;
bool g_verbose = false;

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

ExperimentConfig preset(const std::string& name) {
  const fs::path path = fs::path(KANFORGET_SOURCE_DIR) / "presets" / (name + ".json");
  ParseResult r = load_config(path);
  if (!r.ok()) throw ConfigError(path.string() + ":\n" + format_diagnostics(r.diagnostics));
  return *r.config;
}

ExperimentOutput run(const ExperimentConfig& cfg, unsigned workers = g_workers) {
  ExperimentOutput out;
  RunOptions opts;
  opts.workers = workers;
  if (g_verbose) opts.log = &std::cerr;
  execute(cfg, opts, out);
  return out;
}

const std::string& file(const ExperimentOutput& out, const std::string& path) {
  for (const auto& f : out.files) {
    if (f.path == path) return f.content;
  }
  throw IoError("missing artifact " + path);
}

// Cached so criterion 5 reuses the runs of criteria 3 and 4.
const ExperimentOutput& theorem1_output() {
  static const ExperimentOutput out = run(preset("theorem1"));
  return out;
}
const ExperimentOutput& theorem2_output() {
  static const ExperimentOutput out = run(preset("theorem2"));
  return out;
}

// ---- 1 ----------------------------------------------------------------------
Outcome binary_retention() {
  const ExperimentConfig cfg = preset("binary-add");
  const ExperimentOutput out = run(cfg);
  double worst_f = -INFINITY;
  double worst_drop = INFINITY;
  std::string worst_at;
  for (const auto& [tag, cell] : out.bundle["cells"].items()) {
    for (double f : cell["forgetting"].get<std::vector<double>>()) worst_f = std::max(worst_f, f);
    const ForgettingLedger ledger = ledger_from_json(cell);
    const auto initial = cell["initial_losses"].get<std::vector<double>>();
    for (std::size_t i = 1; i < initial.size(); ++i) {
      const double drop = initial[i] / ledger.loss(0, i);
      if (drop < worst_drop) {
        worst_drop = drop;
        worst_at = tag + " task " + std::to_string(i + 1);
      }
    }
  }
  const bool pass = worst_f < kMaxForgettingBinary && worst_drop >= kTransferDrop;
  return {pass, "max F_i = " + num(worst_f) + " (< " + num(kMaxForgettingBinary) + "), min task-1 transfer drop = " +
                    num(worst_drop) + "x at " + worst_at + " (>= " + num(kTransferDrop) + "x)"};
}

// ---- 2 ----------------------------------------------------------------------
Outcome decimal_trend() {
  const ExperimentOutput out = run(preset("decimal-add"));
  std::vector<std::pair<int, double>> sums;
  bool f1_ge_f4 = true;
  std::string f_detail;
  for (const auto& row : out.bundle["summary"]) {
    const int g = row["grid"].get<int>();
    sums.emplace_back(g, row["mean_sum_F"].get<double>());
    const auto mf = row["mean_F"].get<std::vector<double>>();
    if (!(mf[0] >= mf[3])) f1_ge_f4 = false;
    f_detail += " g" + std::to_string(g) + ":F1=" + num(mf[0], 3) + ",F4=" + num(mf[3], 3);
  }
  std::sort(sums.begin(), sums.end());
  int inversions = 0;
  bool small = true;
  std::string trend;
  for (std::size_t k = 0; k < sums.size(); ++k) {
    trend += (k ? " " : "") + std::to_string(sums[k].first) + ":" + num(sums[k].second);
    if (k > 0 && sums[k].second > sums[k - 1].second) {
      ++inversions;
      if (sums[k].second > sums[k - 1].second * (1.0 + kInversionSlack)) small = false;
    }
  }
  const bool grids_ok = sums.size() == 4 && sums.front().first == 5 && sums.back().first == 20;
  const bool pass = grids_ok && inversions <= 1 && small && f1_ge_f4;
  return {pass, "mean sum F by grid [" + trend + "], inversions " + std::to_string(inversions) + ";" + f_detail};
}

// ---- 3 ----------------------------------------------------------------------
Outcome theorem1_constancy() {
  const auto& out = theorem1_output();
  const auto& t1 = out.bundle["theorem1"];
  bool pass = t1["cv_by_grid"].size() == 3;
  std::string detail = "CV(F_i/Delta) per grid:";
  for (const auto& [g, cv] : t1["cv_by_grid"].items()) {
    const double v = cv.get<double>();
    detail += " " + g + "=" + num(v, 3);
    if (!(v <= kPairCvMax)) pass = false;
  }
  detail += " (<= " + num(kPairCvMax) + "); grid-10 ratios";
  for (const auto& row : t1["rows"]) {
    if (row["grid"] == 10 && !row["ratio"].is_null()) detail += " " + num(row["ratio"].get<double>(), 3);
  }
  detail += " (reference 0.72-0.77)";
  return {pass, detail};
}

// ---- 4 ----------------------------------------------------------------------
Outcome theorem2_constancy() {
  const auto& out = theorem2_output();
  const auto& cvs = out.bundle["theorem2"]["cv_by_grid"];
  bool pass = cvs.size() == 3 && cvs.contains("10") && cvs.contains("20");
  std::string detail = "CV(F_i/sum mu) per grid:";
  for (const auto& [g, cv] : cvs.items()) {
    const double v = cv.get<double>();
    detail += " " + g + "=" + num(v, 3);
    if (!(v <= kCumulativeCvMax)) pass = false;
  }
  if (pass) pass = cvs["20"].get<double>() <= cvs["10"].get<double>() + kCvGrowthSlack;
  return {pass, detail + " (each <= " + num(kCumulativeCvMax) + ", CV20 <= CV10 + " + num(kCvGrowthSlack) + ")"};
}

// ---- 5 ----------------------------------------------------------------------
std::pair<std::size_t, std::size_t> count_union_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  std::size_t rows = 0, violations = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    if (line.back() != '1') ++violations;
  }
  return {rows, violations};
}

Outcome union_bound() {
  std::size_t rows = 0, violations = 0;
  for (const auto* out : {&theorem1_output(), &theorem2_output()}) {
    const auto [r, v] = count_union_rows(file(*out, "union_checks.csv"));
    rows += r;
    violations += v;
  }
  std::mt19937_64 gen(5);
  std::bernoulli_distribution coin(0.35);
  std::size_t synthetic = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SupportProfile> ps(5);
    for (auto& p : ps) {
      for (std::size_t b = 0; b < 6; ++b) {
        BranchSupport s;
        s.q = b;
        s.axis = SupportAxis{-1.0, 1.0, 400};
        s.mask.resize(400);
        for (auto& m : s.mask) m = coin(gen) ? 1 : 0;
        p.branches.push_back(std::move(s));
      }
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      try {
        const UnionOverlap u = union_overlap(ps, i);
        for (std::size_t b = 0; b < u.per_branch.size(); ++b) {
          ++synthetic;
          if (u.per_branch[b] > u.bound[b]) ++violations;
        }
      } catch (const InternalConsistencyError&) {
        ++violations;
      }
    }
  }
  return {violations == 0 && rows > 0,
          std::to_string(rows) + " measured branch checks + " + std::to_string(synthetic) +
              " synthetic, violations " + std::to_string(violations)};
}

// ---- 6 ----------------------------------------------------------------------
Outcome corollary1() {
  const ExperimentConfig cfg = preset("corollary1-mc");
  const ExperimentOutput out = run(cfg);
  int good = 0;
  int cells = 0;
  double worst = 0.0;
  for (const auto& c : out.bundle["corollary1"]) {
    ++cells;
    const double z = c["z_score"].get<double>();
    worst = std::max(worst, std::fabs(z));
    if (std::fabs(z) <= kMcSigmas && c["trials"].get<std::size_t>() == 100000) ++good;
  }
  return {cells == 9 && good >= kMcCellsRequired,
          std::to_string(good) + "/" + std::to_string(cells) + " cells within " + num(kMcSigmas) +
              " SE at N = 1e5, max |z| = " + num(worst, 3)};
}

// ---- 7 ----------------------------------------------------------------------
Outcome dimension_slopes() {
  const ExperimentOutput out = run(preset("dimension-mc"));
  bool pass = out.bundle["dimension"].size() == 3;
  std::string detail;
  for (const auto& s : out.bundle["dimension"]) {
    const double expected = s["d_i"].get<double>() + s["d_j"].get<double>();
    const double slope = s["slope"].get<double>();
    if (!(std::fabs(slope - expected) <= kDimensionSlopeTol)) pass = false;
    if (s["points"].size() != 8) pass = false;
    detail += "(" + num(s["d_i"].get<double>()) + "," + num(s["d_j"].get<double>()) + ") slope " + num(slope, 5) +
              " vs " + num(expected) + "; ";
  }
  return {pass, detail + "tolerance +-" + num(kDimensionSlopeTol)};
}

// ---- 8 ----------------------------------------------------------------------
Outcome fragmentation_slopes() {
  const ExperimentOutput out = run(preset("fragmentation-mc"));
  bool pass = out.bundle["fragmentation"].size() == 2;
  std::string detail;
  for (const auto& s : out.bundle["fragmentation"]) {
    const double di = s["d_i"].get<double>();
    const double slope = s["sweep_k_i"]["slope"].get<double>();
    if (!(std::fabs(slope + di) <= kFragmentSlopeTol)) pass = false;
    detail += "d_i=" + num(di) + " slope " + num(slope, 5) + " vs " + num(-di) + "; ";
  }
  return {pass, detail + "tolerance +-" + num(kFragmentSlopeTol)};
}

// ---- 9 ----------------------------------------------------------------------
Outcome image_constancy() {
  const ExperimentConfig cfg = preset("theorem3");
  const bool protocol = cfg.images.configs.size() == 7 && cfg.images.samples_per_class * 2 == 200 && cfg.seeds.size() == 3;
  const ExperimentOutput out = run(cfg);
  const auto& t3 = out.bundle["theorem3"];
  const double cv = t3["cv"].get<double>();
  std::string detail = "CV(log10 F_1 / d) = " + num(cv, 3) + " (<= " + num(kImageCvMax) + "); rows";
  bool all_ratios = true;
  for (const auto& row : t3["rows"]) {
    if (row["ratio"].is_null()) {
      all_ratios = false;
      detail += " null";
    } else {
      detail += " " + num(row["ratio"].get<double>(), 3);
    }
  }
  return {protocol && all_ratios && cv <= kImageCvMax, detail};
}

// ---- 10 ---------------------------------------------------------------------
Outcome kernel_suite() {
  std::vector<std::string> failures;
  // Partition of unity.
  double unity = 0.0;
  for (int G : {5, 10, 20}) {
    const KnotGrid grid(-1.0, 1.0, G, 3);
    for (int i = 0; i < 1000; ++i) {
      const auto b = eval_basis(grid, -1.0 + 2.0 * (i + 0.5) / 1000.0);
      unity = std::max(unity, std::fabs(std::accumulate(b.begin(), b.end(), 0.0) - 1.0));
    }
  }
  if (!(unity < kUnityTol)) failures.push_back("unity " + num(unity));

  // Gradient vs central differences on 20 random coordinates.
  KanInitOptions opt;
  opt.spline_noise_scale = 0.5;
  KanNetwork net = init_kan(std::vector<std::size_t>{2, 3, 2}, opt, 13);
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Matrix x(6, 2), w(6, 2);
  for (double& v : x.values()) v = u(gen);
  for (double& v : w.values()) v = u(gen);
  const auto loss = [&](const KanNetwork& n) {
    const Matrix o = forward(n, x).output;
    double a = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) a += o.values()[i] * w.values()[i];
    return a;
  };
  const GradientSet g = backward(net, forward(net, x), w);
  auto params = net.flat_parameters();
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  double grad_err = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::size_t k = pick(gen);
    const double saved = params[k];
    params[k] = saved + 1e-5;
    net.set_flat_parameters(params);
    const double up = loss(net);
    params[k] = saved - 1e-5;
    net.set_flat_parameters(params);
    const double down = loss(net);
    params[k] = saved;
    net.set_flat_parameters(params);
    const double fd = (up - down) / 2e-5;
    grad_err = std::max(grad_err, std::fabs(g.parameters[k] - fd) / (std::fabs(g.parameters[k]) + 1e-8));
  }
  if (!(grad_err < kGradTol)) failures.push_back("gradient " + num(grad_err));

  // AdamW first step against the closed form.
  TrainConfig tc;
  tc.weight_decay = 1e-2;
  std::vector<double> p{0.5, -0.25, 2.0}, grad{0.3, -1e-3, 4.0};
  const auto p0 = p;
  AdamwState st;
  adamw_step(st, p, grad, tc);
  double adam_err = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double expect = p0[k] * (1 - tc.learning_rate * tc.weight_decay) -
                          tc.learning_rate * grad[k] / (std::fabs(grad[k]) + tc.epsilon);
    adam_err = std::max(adam_err, std::fabs(p[k] - expect));
  }
  if (!(adam_err <= kAdamTol)) failures.push_back("adamw " + num(adam_err));

  // Encoding round trips.
  const DecimalEncoding enc;
  bool round_trip = true;
  for (int d = 0; d <= 9; ++d) round_trip = round_trip && enc.decode_digit(enc.encode_digit(d)) == d;
  for (int c : {0, 1}) {
    round_trip = round_trip && DecimalEncoding::decode_carry(DecimalEncoding::encode_carry(c)) == c &&
                 decode_bit(encode_bit(c)) == c;
  }
  if (!round_trip) failures.push_back("encoding");

  // IDX parser rejects corrupted headers.
  RawImageSet set;
  set.count = 2;
  set.height = set.width = 28;
  set.pixels.assign(2 * 784, 7);
  set.labels = {1, 2};
  const auto bytes = encode_idx_images(set);
  const auto rejects = [](std::vector<std::uint8_t> b, const std::string& field) {
    try {
      (void)parse_idx_images(b);
    } catch (const FormatError& e) {
      return e.field() == field;
    }
    return false;
  };
  auto magic = bytes;
  magic[3] = 0x01;
  auto truncated = bytes;
  truncated.resize(bytes.size() - 1);
  auto dims = bytes;
  dims[7] = 0x03;  // claims 3 images
  bool idx_ok = rejects(magic, "magic") && rejects(truncated, "payload") && rejects(dims, "payload");
  try {
    idx_ok = idx_ok && parse_idx_images(bytes).count == 2;
  } catch (...) {
    idx_ok = false;
  }
  if (!idx_ok) failures.push_back("idx");

  std::string detail = "unity err " + num(unity, 3) + ", grad rel err " + num(grad_err, 3) + ", adamw err " +
                       num(adam_err, 3) + ", encodings " + (round_trip ? "exact" : "broken") + ", idx " +
                       (idx_ok ? "rejects corruption" : "accepts corruption");
  return {failures.empty(), detail};
}

// ---- 11 ---------------------------------------------------------------------
Outcome determinism() {
  std::string detail;
  bool pass = true;
  for (const char* name : {"binary-add", "theorem1", "corollary1-mc"}) {
    const ExperimentConfig cfg = preset(name);
    const ExperimentOutput a = run(cfg, 1);
    const ExperimentOutput b = run(cfg, 2);
    std::size_t compared = 0, differ = 0;
    if (a.files.size() != b.files.size()) {
      pass = false;
      differ = std::max(a.files.size(), b.files.size());
    } else {
      for (std::size_t i = 0; i < a.files.size(); ++i) {
        ++compared;
        if (a.files[i].path != b.files[i].path || a.files[i].content != b.files[i].content) ++differ;
      }
    }
    if (differ) pass = false;
    detail += std::string(name) + ": " + std::to_string(compared) + " files, " + std::to_string(differ) + " differ; ";
  }
  return {pass, detail + "(second run on 2 workers)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kanforget acceptance suite"};
  std::vector<int> only;
  app.add_option("-c,--criterion", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("-w,--workers", g_workers, "Worker threads for experiment cells")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g_verbose, "Progress lines on stderr");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "binary-addition retention", 60, binary_retention},
      {2, "decimal-addition grid trend", 300, decimal_trend},
      {3, "pair ratio constancy", 0, theorem1_constancy},
      {4, "cumulative ratio constancy", 0, theorem2_constancy},
      {5, "union bound", 0, union_bound},
      {6, "expected overlap Monte Carlo", 60, corollary1},
      {7, "dimension exponent recovery", 60, dimension_slopes},
      {8, "fragmentation exponents", 60, fragmentation_slopes},
      {9, "image intrinsic-dimension constancy", 1800, image_constancy},
      {10, "numerical kernel properties", 60, kernel_suite},
      {11, "determinism", 0, determinism},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over runtime budget " + num(c.budget_s) + " s";
    }
    if (!o.pass) ++failed;
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
