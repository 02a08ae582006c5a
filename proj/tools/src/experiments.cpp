#include "kanforget/runner/experiments.hpp"

#include "kanforget/runner/artifacts.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "kanforget/errors.hpp"
#include "kanforget/forgetting_lab.hpp"
#include "kanforget/networks.hpp"
#include "kanforget/overlap_mc.hpp"
#include "kanforget/task_corpus.hpp"
#include "kanforget/training.hpp"

namespace kanforget::runner {

using nlohmann::json;

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned pool = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(count)));
  if (pool == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (unsigned w = 0; w < pool; ++w) threads.emplace_back(work);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

// Reference values from the published decimal-addition tables, keyed by grid;
// shown next to our numbers, never gated.
struct ReferenceRow {
  int grid;
  int task_i;
  double forgetting;
  double ratio;
};

const std::vector<ReferenceRow>& pair_reference() {
  static const std::vector<ReferenceRow> rows{
      {10, 1, 0.46, 0.74}, {10, 2, 0.45, 0.73}, {10, 3, 0.52, 0.77}, {10, 4, 0.44, 0.72},
      {15, 1, 0.45, 0.74}, {15, 2, 0.40, 0.67}, {15, 3, 0.46, 0.74}, {15, 4, 0.42, 0.68},
      {20, 1, 0.32, 0.61}, {20, 2, 0.34, 0.64}, {20, 3, 0.32, 0.63}, {20, 4, 0.32, 0.64},
  };
  return rows;
}

const std::vector<ReferenceRow>& cumulative_reference() {
  static const std::vector<ReferenceRow> rows{
      {10, 1, 0.68, 0.15}, {10, 2, 0.67, 0.16}, {10, 3, 0.39, 0.16}, {10, 4, 0.25, 0.18},
      {15, 1, 0.62, 0.15}, {15, 2, 0.51, 0.15}, {15, 3, 0.39, 0.16}, {15, 4, 0.19, 0.17},
      {20, 1, 0.57, 0.16}, {20, 2, 0.44, 0.16}, {20, 3, 0.29, 0.16}, {20, 4, 0.16, 0.17},
  };
  return rows;
}

const ReferenceRow* find_reference(const std::vector<ReferenceRow>& rows, int grid, int task_i) {
  for (const auto& r : rows) {
    if (r.grid == grid && r.task_i == task_i) return &r;
  }
  return nullptr;
}

std::ostringstream csv_stream() {
  std::ostringstream out;
  out << std::setprecision(17);
  return out;
}

std::string fmt(double v) {
  auto s = csv_stream();
  s << v;
  return s.str();
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string ledger_csv(const ForgettingLedger& ledger) {
  auto out = csv_stream();
  out << "checkpoint_t,task_i,loss,accuracy\n";
  for (std::size_t t = 0; t < ledger.task_count(); ++t) {
    for (std::size_t i = 0; i < ledger.task_count(); ++i) {
      out << t + 1 << ',' << i + 1 << ',' << ledger.loss(t, i) << ',' << ledger.accuracy(t, i) << '\n';
    }
  }
  return out.str();
}

KanInitOptions init_options(const NetworkSection& n, int grid) {
  KanInitOptions o;
  o.range_lo = n.grid_lo;
  o.range_hi = n.grid_hi;
  o.grid_size = grid;
  o.order = n.spline_order;
  o.base_weight_scale = n.base_weight_scale;
  o.spline_weight_scale = n.spline_weight_scale;
  o.spline_noise_scale = n.spline_noise_scale;
  return o;
}

class Logger {
 public:
  explicit Logger(std::ostream* out, std::string prefix) : out_(out), prefix_(std::move(prefix)) {}
  void line(const std::string& msg) {
    if (!out_) return;
    std::lock_guard lock(mu_);
    *out_ << '[' << prefix_ << "] " << msg << std::endl;
  }

 private:
  std::ostream* out_;
  std::string prefix_;
  std::mutex mu_;
};

std::string image_tag(const ImagePreprocessSpec& s) {
  return "q" + std::to_string(s.quantize_levels) + "_" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// ---- training experiments -------------------------------------------------

struct TrainCell {
  int grid = 0;
  std::uint64_t seed = 0;
  std::size_t image = 0;
  std::string tag;
};

struct TrainCellResult {
  ForgettingLedger ledger;
  std::vector<CurvePoint> curves;
  std::vector<double> initial_losses;
  std::vector<double> forgetting;
  std::string final_checkpoint;
  std::vector<KanNetwork> kan_checkpoints;  // kept only for support analysis
};

template <class Net>
TrainCellResult train_cell(Net net, std::span<const TaskDataset> tasks, const TrainConfig& cfg, bool keep) {
  TrainCellResult r;
  for (const auto& t : tasks) r.initial_losses.push_back(evaluate_loss(net, t, cfg.loss_kind));
  auto seq = train_sequence(std::move(net), tasks, cfg);
  r.ledger = seq.ledger;
  r.curves = std::move(seq.curves);
  r.forgetting = compute_forgetting(r.ledger);
  std::ostringstream ck;
  write_checkpoint(ck, seq.checkpoints.back());
  r.final_checkpoint = ck.str();
  if constexpr (std::is_same_v<Net, KanNetwork>) {
    if (keep) r.kan_checkpoints = std::move(seq.checkpoints);
  }
  return r;
}

TrainCellResult run_train_cell(const ExperimentConfig& cfg, const TrainCell& cell, std::span<const TaskDataset> tasks,
                               bool keep_checkpoints) {
  TrainConfig tc = cfg.training;
  tc.seed = cell.seed;
  std::vector<std::size_t> dims = cfg.network.dims;
  dims.front() = tasks.front().inputs.cols();
  if (cfg.network.model == ModelKind::Mlp) {
    return train_cell(init_mlp(dims, cell.seed), tasks, tc, false);
  }
  return train_cell(init_kan(dims, init_options(cfg.network, cell.grid), cell.seed), tasks, tc, keep_checkpoints);
}

std::vector<std::vector<TaskDataset>> load_image_tasks(const ExperimentConfig& cfg) {
  const RawImageSet raw = load_mnist_idx(cfg.images.images, cfg.images.labels);
  std::vector<std::vector<TaskDataset>> out;
  for (const auto& spec : cfg.images.configs) {
    const Matrix pre = preprocess_images(raw, spec);
    out.push_back(build_image_tasks(pre, raw.labels, mnist_class_plan(), cfg.images.samples_per_class,
                                    intrinsic_dimension(spec)));
  }
  return out;
}

std::vector<std::vector<TaskDataset>> task_sets(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::BinaryAdd:
      return {gen_binary_tasks()};
    case ExperimentKind::DecimalAdd:
    case ExperimentKind::Theorem1:
    case ExperimentKind::Theorem2:
      return {gen_decimal_tasks()};
    default:
      return load_image_tasks(cfg);
  }
}

std::vector<TrainCell> make_cells(const ExperimentConfig& cfg, std::size_t image_count,
                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<TrainCell> cells;
  for (std::size_t img = 0; img < image_count; ++img) {
    for (int g : cfg.network.grid_sizes) {
      for (auto s : seeds) {
        std::string tag = "g" + std::to_string(g) + "_s" + std::to_string(s);
        if (image_count > 1 || cfg.kind == ExperimentKind::MnistCl || cfg.kind == ExperimentKind::Theorem3) {
          tag = image_tag(cfg.images.configs[img]) + "_" + tag;
        }
        cells.push_back({g, s, img, tag});
      }
    }
  }
  return cells;
}

void emit_train_cell(const TrainCell& cell, const TrainCellResult& r, ExperimentOutput& out, bool write_curves) {
  out.files.push_back({"ledgers/ledger_" + cell.tag + ".csv", ledger_csv(r.ledger)});
  json side = {{"grid", cell.grid}, {"seed", cell.seed}, {"tasks", r.ledger.task_count()},
               {"forgetting", r.forgetting}, {"initial_losses", r.initial_losses}};
  side.update(ledger_to_json(r.ledger));
  out.files.push_back({"ledgers/ledger_" + cell.tag + ".json", side.dump(2) + "\n"});
  out.files.push_back({"checkpoints/" + cell.tag + "_final.ckpt", r.final_checkpoint});
  if (write_curves && !r.curves.empty()) {
    const std::size_t tasks = r.curves.front().task_losses.size();
    for (std::size_t i = 0; i < tasks; ++i) {
      auto dat = csv_stream();
      dat << "# epoch loss_task" << i + 1 << " (" << cell.tag << ")\n";
      for (const auto& p : r.curves) dat << p.epoch << ' ' << p.task_losses[i] << '\n';
      out.files.push_back({"curves/" + cell.tag + "_task" + std::to_string(i + 1) + ".dat", dat.str()});
    }
  }
  out.bundle["cells"][cell.tag] = side;
}

void run_training_experiment(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                             const RunOptions& opts, ExperimentOutput& out) {
  Logger log(opts.log, to_string(cfg.kind));
  const auto sets = task_sets(cfg);
  const auto cells = make_cells(cfg, sets.size(), seeds);
  std::vector<std::optional<TrainCellResult>> results(cells.size());
  std::exception_ptr failure;
  try {
    parallel_for(cells.size(), opts.workers, [&](std::size_t c) {
      const auto t0 = std::chrono::steady_clock::now();
      results[c] = run_train_cell(cfg, cells[c], sets[cells[c].image], false);
      log.line(cells[c].tag + " done in " +
               fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
    });
  } catch (...) {
    failure = std::current_exception();
  }

  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (results[c]) emit_train_cell(cells[c], *results[c], out, cfg.training.record_curves);
  }
  if (failure) std::rethrow_exception(failure);

  const std::size_t T = results.front()->forgetting.size();
  auto per_cell = csv_stream();
  per_cell << (sets.size() > 1 || cfg.kind == ExperimentKind::MnistCl ? "image," : "") << "grid,seed";
  for (std::size_t i = 0; i < T; ++i) per_cell << ",F_" << i + 1;
  per_cell << ",sum_F,max_F\n";
  auto transfer = csv_stream();
  transfer << "grid,seed,task,loss_initial,loss_after_task1,drop_factor\n";

  struct Agg {
    std::vector<double> sum;
    std::vector<double> max;
    std::vector<std::vector<double>> per_task;
  };
  std::map<std::pair<std::size_t, int>, Agg> agg;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& r = *results[c];
    const auto& cell = cells[c];
    const bool image_col = sets.size() > 1 || cfg.kind == ExperimentKind::MnistCl;
    if (image_col) per_cell << image_tag(cfg.images.configs[cell.image]) << ',';
    per_cell << cell.grid << ',' << cell.seed;
    double sum = 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    for (double f : r.forgetting) {
      per_cell << ',' << f;
      sum += f;
      mx = std::max(mx, f);
    }
    per_cell << ',' << sum << ',' << mx << '\n';
    auto& a = agg[{cell.image, cell.grid}];
    a.sum.push_back(sum);
    a.max.push_back(mx);
    a.per_task.resize(T);
    for (std::size_t i = 0; i < T; ++i) a.per_task[i].push_back(r.forgetting[i]);
    for (std::size_t i = 1; i < T; ++i) {
      const double before = r.initial_losses[i];
      const double after = r.ledger.loss(0, i);
      transfer << cell.grid << ',' << cell.seed << ',' << i + 1 << ',' << before << ',' << after << ','
               << (after > 0.0 ? before / after : std::numeric_limits<double>::infinity()) << '\n';
    }
  }
  out.files.push_back({"forgetting.csv", per_cell.str()});
  out.files.push_back({"task1_transfer.csv", transfer.str()});

  auto summary = csv_stream();
  summary << (sets.size() > 1 || cfg.kind == ExperimentKind::MnistCl ? "image," : "")
          << "grid,seeds,mean_sum_F,std_sum_F,mean_max_F,std_max_F";
  for (std::size_t i = 0; i < T; ++i) summary << ",mean_F_" << i + 1;
  summary << '\n';
  json jsum = json::array();
  for (const auto& [key, a] : agg) {
    if (sets.size() > 1 || cfg.kind == ExperimentKind::MnistCl) summary << image_tag(cfg.images.configs[key.first]) << ',';
    summary << key.second << ',' << a.sum.size() << ',' << mean_of(a.sum) << ',' << std_of(a.sum) << ','
            << mean_of(a.max) << ',' << std_of(a.max);
    std::vector<double> means;
    for (const auto& v : a.per_task) {
      means.push_back(mean_of(v));
      summary << ',' << means.back();
    }
    summary << '\n';
    jsum.push_back({{"grid", key.second},
                    {"image", key.first},
                    {"mean_sum_F", mean_of(a.sum)},
                    {"std_sum_F", std_of(a.sum)},
                    {"mean_max_F", mean_of(a.max)},
                    {"mean_F", means}});
  }
  out.files.push_back({"forgetting_summary.csv", summary.str()});
  out.bundle["summary"] = jsum;
}

// ---- support analysis -----------------------------------------------------

json profile_json(const SupportProfile& p) {
  json branches = json::array();
  for (const auto& b : p.branches) {
    branches.push_back({{"layer", b.layer}, {"p", b.p}, {"q", b.q}, {"lo", b.axis.lo}, {"hi", b.axis.hi},
                        {"bins", b.axis.bins}, {"measure", b.measure()}});
  }
  return {{"threshold", p.threshold}, {"branches", branches}};
}

struct UnionRecord {
  std::string tag;
  int task_i;
  UnionOverlap result;
};

std::string union_csv(const std::vector<UnionRecord>& records) {
  auto out = csv_stream();
  out << "run,task_i,branch,mu_union,bound,holds\n";
  for (const auto& r : records) {
    for (std::size_t k = 0; k < r.result.per_branch.size(); ++k) {
      out << r.tag << ',' << r.task_i << ',' << k << ',' << r.result.per_branch[k] << ',' << r.result.bound[k] << ','
          << (r.result.per_branch[k] <= r.result.bound[k] * (1.0 + 1e-12) ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

struct PairCellResult {
  std::vector<PairMeasurement> pairs;
  std::vector<UnionRecord> unions;
  json audit = json::array();
};

PairCellResult theorem1_cell(const ExperimentConfig& cfg, const TrainCell& cell, std::span<const TaskDataset> tasks) {
  PairCellResult out;
  TrainConfig tc = cfg.training;
  tc.seed = cell.seed;
  tc.record_curves = false;
  const KanNetwork init = init_kan(cfg.network.dims, init_options(cfg.network, cell.grid), cell.seed);
  for (std::size_t i = 0; i + 1 < tasks.size(); ++i) {
    const TaskDataset pair[2] = {tasks[i], tasks[i + 1]};
    auto seq = train_sequence(init, std::span<const TaskDataset>(pair, 2), tc);
    const std::vector<ForwardTrace> traces{forward(seq.checkpoints[0], pair[0].inputs),
                                           forward(seq.checkpoints[1], pair[1].inputs)};
    const AxisPlan axes = plan_axes(init, traces, cfg.analysis.support_bins);
    const std::vector<SupportProfile> profiles{
        measure_supports(seq.checkpoints[0], traces[0], cfg.analysis.activation_threshold, axes),
        measure_supports(seq.checkpoints[1], traces[1], cfg.analysis.activation_threshold, axes)};
    const int ti = static_cast<int>(i + 1);
    out.pairs.push_back(measure_pair(cell.grid, ti, ti + 1, seq.ledger, profiles[0], profiles[1]));
    out.unions.push_back({cell.tag + "_pair" + std::to_string(ti), ti, union_overlap(profiles, 0)});
    out.audit.push_back({{"task_i", ti},
                         {"task_j", ti + 1},
                         {"ledger", ledger_to_json(seq.ledger)},
                         {"per_branch_overlap", pairwise_overlap(profiles[0], profiles[1]).per_branch},
                         {"profile_i", profile_json(profiles[0])},
                         {"profile_j", profile_json(profiles[1])}});
  }
  return out;
}

struct CumulativeCellResult {
  ForgettingLedger ledger;
  std::vector<CumulativeMeasurement> rows;
  std::vector<UnionRecord> unions;
  json audit;
};

CumulativeCellResult theorem2_cell(const ExperimentConfig& cfg, const TrainCell& cell,
                                   std::span<const TaskDataset> tasks) {
  ExperimentConfig local = cfg;
  local.training.record_curves = false;
  TrainCellResult r = run_train_cell(local, cell, tasks, true);
  std::vector<ForwardTrace> traces;
  for (std::size_t t = 0; t < tasks.size(); ++t) traces.push_back(forward(r.kan_checkpoints[t], tasks[t].inputs));
  const AxisPlan axes = plan_axes(r.kan_checkpoints.front(), traces, cfg.analysis.support_bins);
  std::vector<SupportProfile> profiles;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    profiles.push_back(measure_supports(r.kan_checkpoints[t], traces[t], cfg.analysis.activation_threshold, axes));
  }
  CumulativeCellResult out;
  out.ledger = r.ledger;
  out.rows = measure_cumulative(cell.grid, r.ledger, profiles);
  const OverlapMatrix om = overlap_matrix(profiles);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    out.unions.push_back({cell.tag, static_cast<int>(i + 1), om.unions[i]});
  }
  json delta = json::array();
  for (std::size_t i = 0; i < om.delta.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < om.delta.cols(); ++j) row.push_back(om.delta(i, j));
    delta.push_back(row);
  }
  json cumulative = json::array();
  for (const auto& c : om.cumulative) cumulative.push_back({{"total", c.total}, {"per_branch", c.per_branch}});
  json profs = json::array();
  for (const auto& p : profiles) profs.push_back(profile_json(p));
  out.audit = {{"ledger", ledger_to_json(r.ledger)}, {"delta", delta}, {"cumulative", cumulative}, {"profiles", profs}};
  return out;
}

std::string ratio_csv(const RatioReport& report) {
  std::ostringstream out;
  write_ratio_csv(out, report);
  return out.str();
}

void run_theorem1(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds, const RunOptions& opts,
                  ExperimentOutput& out) {
  Logger log(opts.log, "theorem1");
  const auto tasks = gen_decimal_tasks();
  const auto cells = make_cells(cfg, 1, seeds);
  std::vector<std::optional<PairCellResult>> results(cells.size());
  std::exception_ptr failure;
  try {
    parallel_for(cells.size(), opts.workers, [&](std::size_t c) {
      results[c] = theorem1_cell(cfg, cells[c], tasks);
      log.line(cells[c].tag + " done");
    });
  } catch (...) {
    failure = std::current_exception();
  }
  std::vector<UnionRecord> unions;
  auto by_seed = csv_stream();
  by_seed << "grid,seed,task_i,task_j,F_i,delta,ratio\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!results[c]) continue;
    out.bundle["cells"][cells[c].tag] = results[c]->audit;
    unions.insert(unions.end(), results[c]->unions.begin(), results[c]->unions.end());
    const RatioReport rep = ratio_report_theorem1(results[c]->pairs);
    for (const auto& row : rep.rows) {
      by_seed << row.grid << ',' << cells[c].seed << ',' << row.task_i << ',' << row.task_js.front() << ','
              << row.forgetting << ',' << row.denominator << ',';
      if (row.ratio) by_seed << *row.ratio;
      by_seed << '\n';
    }
  }
  out.files.push_back({"theorem1_by_seed.csv", by_seed.str()});
  out.files.push_back({"union_checks.csv", union_csv(unions)});
  if (failure) std::rethrow_exception(failure);

  // Ratio of seed means per (grid, pair).
  std::vector<PairMeasurement> pooled;
  for (int g : cfg.network.grid_sizes) {
    const std::size_t npairs = results.front()->pairs.size();
    for (std::size_t k = 0; k < npairs; ++k) {
      PairMeasurement m{g, static_cast<int>(k + 1), static_cast<int>(k + 2), 0.0, 0.0,
                        std::numeric_limits<double>::infinity()};
      std::size_t n = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].grid != g) continue;
        const auto& pm = results[c]->pairs[k];
        m.forgetting += pm.forgetting;
        m.delta += pm.delta;
        m.bin_width = std::min(m.bin_width, pm.bin_width);
        ++n;
      }
      m.forgetting /= static_cast<double>(n);
      m.delta /= static_cast<double>(n);
      pooled.push_back(m);
    }
  }
  const RatioReport report = ratio_report_theorem1(pooled);
  out.files.push_back({"theorem1.csv", ratio_csv(report)});
  auto summary = csv_stream();
  summary << "grid,task_i,task_j,F_i,delta,ratio,reference_F,reference_ratio\n";
  json jrows = json::array();
  for (const auto& row : report.rows) {
    summary << row.grid << ',' << row.task_i << ',' << row.task_js.front() << ',' << row.forgetting << ','
            << row.denominator << ',';
    if (row.ratio) summary << *row.ratio;
    summary << ',';
    if (const auto* ref = find_reference(pair_reference(), row.grid, row.task_i)) {
      summary << ref->forgetting << ',' << ref->ratio;
    } else {
      summary << ',';
    }
    summary << '\n';
    jrows.push_back({{"grid", row.grid}, {"task_i", row.task_i}, {"task_j", row.task_js.front()},
                     {"F_i", row.forgetting}, {"delta", row.denominator},
                     {"ratio", row.ratio ? json(*row.ratio) : json(nullptr)}, {"flagged", row.flagged}});
  }
  summary << "# ratio = F_i / Delta_ij, pooled as mean F over seeds / mean Delta over seeds\n";
  for (const auto& [g, cv] : report.cv_by_grid) summary << "# cv grid " << g << " = " << cv << '\n';
  out.files.push_back({"theorem1_summary.csv", summary.str()});
  json cvs = json::object();
  for (const auto& [g, cv] : report.cv_by_grid) cvs[std::to_string(g)] = cv;
  out.bundle["theorem1"] = {{"rows", jrows}, {"cv_by_grid", cvs}, {"note", report.note}};
}

void run_theorem2(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds, const RunOptions& opts,
                  ExperimentOutput& out) {
  Logger log(opts.log, "theorem2");
  const auto tasks = gen_decimal_tasks();
  const auto cells = make_cells(cfg, 1, seeds);
  std::vector<std::optional<CumulativeCellResult>> results(cells.size());
  std::exception_ptr failure;
  try {
    parallel_for(cells.size(), opts.workers, [&](std::size_t c) {
      results[c] = theorem2_cell(cfg, cells[c], tasks);
      log.line(cells[c].tag + " done");
    });
  } catch (...) {
    failure = std::current_exception();
  }
  std::vector<UnionRecord> unions;
  auto by_seed = csv_stream();
  by_seed << "grid,seed,task_i,task_j_set,F_i,sum_mu,ratio\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!results[c]) continue;
    out.bundle["cells"][cells[c].tag] = results[c]->audit;
    out.files.push_back({"ledgers/ledger_" + cells[c].tag + ".csv", ledger_csv(results[c]->ledger)});
    unions.insert(unions.end(), results[c]->unions.begin(), results[c]->unions.end());
    const RatioReport rep = ratio_report_theorem2(results[c]->rows);
    for (const auto& row : rep.rows) {
      by_seed << row.grid << ',' << cells[c].seed << ',' << row.task_i << ',';
      for (std::size_t k = 0; k < row.task_js.size(); ++k) by_seed << (k ? " " : "") << row.task_js[k];
      by_seed << ',' << row.forgetting << ',' << row.denominator << ',';
      if (row.ratio) by_seed << *row.ratio;
      by_seed << '\n';
    }
  }
  out.files.push_back({"theorem2_by_seed.csv", by_seed.str()});
  out.files.push_back({"union_checks.csv", union_csv(unions)});
  if (failure) std::rethrow_exception(failure);

  std::vector<CumulativeMeasurement> pooled;
  for (int g : cfg.network.grid_sizes) {
    const std::size_t nrows = results.front()->rows.size();
    for (std::size_t k = 0; k < nrows; ++k) {
      CumulativeMeasurement m = results.front()->rows[k];
      m.grid = g;
      m.forgetting = 0.0;
      m.cumulative = 0.0;
      m.bin_width = std::numeric_limits<double>::infinity();
      std::size_t n = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].grid != g) continue;
        const auto& row = results[c]->rows[k];
        m.forgetting += row.forgetting;
        m.cumulative += row.cumulative;
        m.bin_width = std::min(m.bin_width, row.bin_width);
        ++n;
      }
      m.forgetting /= static_cast<double>(n);
      m.cumulative /= static_cast<double>(n);
      pooled.push_back(m);
    }
  }
  const RatioReport report = ratio_report_theorem2(pooled);
  out.files.push_back({"theorem2.csv", ratio_csv(report)});
  auto summary = csv_stream();
  summary << "grid,task_i,F_i,sum_mu,ratio,reference_F,reference_ratio\n";
  json jrows = json::array();
  for (const auto& row : report.rows) {
    summary << row.grid << ',' << row.task_i << ',' << row.forgetting << ',' << row.denominator << ',';
    if (row.ratio) summary << *row.ratio;
    summary << ',';
    if (const auto* ref = find_reference(cumulative_reference(), row.grid, row.task_i)) {
      summary << ref->forgetting << ',' << ref->ratio;
    } else {
      summary << ',';
    }
    summary << '\n';
    jrows.push_back({{"grid", row.grid}, {"task_i", row.task_i}, {"task_js", row.task_js}, {"F_i", row.forgetting},
                     {"sum_mu", row.denominator}, {"ratio", row.ratio ? json(*row.ratio) : json(nullptr)},
                     {"flagged", row.flagged}});
  }
  summary << "# ratio = F_i / sum_{j>i} sum_branches mu(S_i ∩ S_j), pooled over seeds\n";
  for (const auto& [g, cv] : report.cv_by_grid) summary << "# cv grid " << g << " = " << cv << '\n';
  out.files.push_back({"theorem2_summary.csv", summary.str()});
  json cvs = json::object();
  for (const auto& [g, cv] : report.cv_by_grid) cvs[std::to_string(g)] = cv;
  out.bundle["theorem2"] = {{"rows", jrows}, {"cv_by_grid", cvs}, {"note", report.note}};
}

void run_theorem3(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds, const RunOptions& opts,
                  ExperimentOutput& out) {
  if (cfg.network.grid_sizes.size() != 1) throw ConfigError("theorem3 takes exactly one grid size");
  Logger log(opts.log, "theorem3");
  const auto sets = load_image_tasks(cfg);
  const auto cells = make_cells(cfg, sets.size(), seeds);
  ExperimentConfig local = cfg;
  local.training.record_curves = false;
  std::vector<std::optional<TrainCellResult>> results(cells.size());
  std::exception_ptr failure;
  try {
    parallel_for(cells.size(), opts.workers, [&](std::size_t c) {
      const auto t0 = std::chrono::steady_clock::now();
      results[c] = run_train_cell(local, cells[c], sets[cells[c].image], false);
      log.line(cells[c].tag + " F_1 = " + fmt(results[c]->forgetting.front()) + " (" +
               fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
    });
  } catch (...) {
    failure = std::current_exception();
  }
  auto by_seed = csv_stream();
  by_seed << "quantize,shape,seed,intrinsic_dim,F_1,log10_F_over_d\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!results[c]) continue;
    emit_train_cell(cells[c], *results[c], out, false);
    const auto& spec = cfg.images.configs[cells[c].image];
    const double d = intrinsic_dimension(spec);
    const double f1 = results[c]->forgetting.front();
    by_seed << spec.quantize_levels << ',' << spec.height << 'x' << spec.width << ',' << cells[c].seed << ',' << d
            << ',' << f1 << ',';
    if (f1 > 0.0) by_seed << std::log10(f1) / d;
    by_seed << '\n';
  }
  out.files.push_back({"theorem3_by_seed.csv", by_seed.str()});
  if (failure) std::rethrow_exception(failure);

  std::vector<DimensionMeasurement> runs;
  for (std::size_t img = 0; img < sets.size(); ++img) {
    std::vector<double> f;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].image == img) f.push_back(results[c]->forgetting.front());
    }
    runs.push_back({cfg.images.configs[img], mean_of(f)});
  }
  const RatioReport report = ratio_report_theorem3(runs);
  auto csv = csv_stream();
  write_ratio_csv(csv, report);
  csv << "# log base 10; F_1 is the mean over seeds; d = log2(Q * S)\n";
  std::vector<double> ratios;
  json jrows = json::array();
  for (const auto& row : report.rows) {
    if (row.ratio) ratios.push_back(*row.ratio);
    jrows.push_back({{"quantize", row.quantize_levels}, {"height", row.height}, {"width", row.width},
                     {"intrinsic_dim", row.denominator}, {"F_1", row.forgetting},
                     {"ratio", row.ratio ? json(*row.ratio) : json(nullptr)}});
  }
  const double cv = coefficient_of_variation(ratios);
  csv << "# cv = " << cv << '\n';
  out.files.push_back({"theorem3.csv", csv.str()});
  out.bundle["theorem3"] = {{"rows", jrows}, {"cv", cv}, {"note", report.note}};
}

// ---- Monte Carlo ----------------------------------------------------------

McConfig mc_config(const ExperimentConfig& cfg, const RunOptions& opts) {
  McConfig mc = cfg.monte_carlo.mc;
  mc.seed += opts.seed_offset;
  mc.workers = opts.workers;
  return mc;
}

json estimate_json(const McEstimate& e) {
  return {{"mean", e.mean}, {"std_error", e.std_error}, {"trials", e.trials}, {"analytic", e.analytic},
          {"z_score", e.z_score()}};
}

json study_json(const ScalingStudy& s) {
  json pts = json::array();
  for (const auto& p : s.points) {
    json e = estimate_json(p.estimate);
    e["sweep_value"] = p.sweep_value;
    pts.push_back(e);
  }
  return {{"label", s.label}, {"slope", s.fit.slope}, {"slope_stderr", s.fit.slope_stderr},
          {"intercept", s.fit.intercept}, {"residuals", s.fit.residuals}, {"points", pts}};
}

std::string scaling_csv(const ScalingStudy& s) {
  std::ostringstream out;
  write_scaling_csv(out, s);
  return out.str();
}

std::string num_tag(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void run_corollary1(const ExperimentConfig& cfg, const RunOptions& opts, ExperimentOutput& out) {
  const McConfig mc = mc_config(cfg, opts);
  std::vector<EstimateRow> rows;
  std::uint64_t study = 0;
  json cells = json::array();
  for (double si : cfg.monte_carlo.s_values) {
    for (double sj : cfg.monte_carlo.s_values) {
      const auto a = SupportModel::torus(si);
      const auto b = SupportModel::torus(sj);
      const McEstimate e = mc_expected_overlap(a, b, mc, study++);
      rows.push_back({a, b, e});
      json j = estimate_json(e);
      j["s_i"] = si;
      j["s_j"] = sj;
      cells.push_back(j);
    }
  }
  std::ostringstream csv;
  write_estimate_csv(csv, rows);
  out.files.push_back({"corollary1.csv", csv.str()});
  out.bundle["corollary1"] = cells;
}

void run_saturation(const ExperimentConfig& cfg, const RunOptions& opts, ExperimentOutput& out) {
  const McConfig mc = mc_config(cfg, opts);
  const auto& m = cfg.monte_carlo;
  SupportModel later = SupportModel::torus(m.s_j);
  later.placement = m.placement == "same"       ? SupportModel::Placement::SameAsReference
                    : m.placement == "disjoint" ? SupportModel::Placement::DisjointFromReference
                                                : SupportModel::Placement::Independent;
  const std::vector<SupportModel> models(m.later_tasks, later);
  const SaturationCurve curve = saturation_curve(SupportModel::torus(m.s_i), models, mc);
  std::ostringstream csv;
  write_saturation_csv(csv, curve);
  out.files.push_back({"saturation.csv", csv.str()});
  auto dat = csv_stream();
  dat << "# T mean_union\n";
  for (const auto& p : curve.points) dat << p.later_tasks << ' ' << p.mean_union << '\n';
  out.files.push_back({"curves/saturation.dat", dat.str()});
  json pts = json::array();
  for (const auto& p : curve.points) {
    pts.push_back({{"T", p.later_tasks}, {"mean_union", p.mean_union}, {"std_error", p.std_error},
                   {"mean_slack", p.mean_slack}, {"oracle", p.oracle}});
  }
  out.bundle["saturation"] = {{"points", pts}, {"violations", curve.violations},
                              {"plateau_onset", curve.plateau_onset ? json(*curve.plateau_onset) : json(nullptr)}};
}

void run_dimension(const ExperimentConfig& cfg, const RunOptions& opts, ExperimentOutput& out) {
  const McConfig mc = mc_config(cfg, opts);
  auto fits = csv_stream();
  fits << "d_i,d_j,slope,slope_stderr,expected_slope\n";
  json studies = json::array();
  for (const auto& [di, dj] : cfg.monte_carlo.dim_pairs) {
    const ScalingStudy s = dimension_scaling(di, dj, mc.r_sweep, mc);
    out.files.push_back({"dimension_d" + num_tag(di) + "_" + num_tag(dj) + ".csv", scaling_csv(s)});
    fits << di << ',' << dj << ',' << s.fit.slope << ',' << s.fit.slope_stderr << ',' << di + dj << '\n';
    json j = study_json(s);
    j["d_i"] = di;
    j["d_j"] = dj;
    studies.push_back(j);
  }
  out.files.push_back({"dimension_fits.csv", fits.str()});
  out.bundle["dimension"] = studies;
}

void run_fragmentation(const ExperimentConfig& cfg, const RunOptions& opts, ExperimentOutput& out) {
  const McConfig mc = mc_config(cfg, opts);
  auto fits = csv_stream();
  fits << "d_i,d_j,r,swept,slope,slope_stderr,expected_slope\n";
  json studies = json::array();
  const double r = cfg.monte_carlo.fragment_radius;
  for (const auto& [di, dj] : cfg.monte_carlo.dim_pairs) {
    const FragmentationStudy s = fragmentation_scaling(di, dj, r, mc.k_sweep, mc);
    const std::string tag = "d" + num_tag(di) + "_" + num_tag(dj);
    out.files.push_back({"fragmentation_" + tag + "_ki.csv", scaling_csv(s.sweep_i)});
    out.files.push_back({"fragmentation_" + tag + "_kj.csv", scaling_csv(s.sweep_j)});
    fits << di << ',' << dj << ',' << r << ",k_i," << s.sweep_i.fit.slope << ',' << s.sweep_i.fit.slope_stderr << ','
         << -di << '\n';
    fits << di << ',' << dj << ',' << r << ",k_j," << s.sweep_j.fit.slope << ',' << s.sweep_j.fit.slope_stderr << ','
         << -dj << '\n';
    studies.push_back({{"d_i", di}, {"d_j", dj}, {"sweep_k_i", study_json(s.sweep_i)},
                       {"sweep_k_j", study_json(s.sweep_j)}});
  }
  out.files.push_back({"fragmentation_fits.csv", fits.str()});
  out.bundle["fragmentation"] = studies;
}

}  // namespace

void execute(const ExperimentConfig& config, const RunOptions& options, ExperimentOutput& output) {
  std::vector<std::uint64_t> seeds;
  for (auto s : config.seeds) seeds.push_back(s + options.seed_offset);
  output.seeds_used = seeds;
  output.bundle["experiment"] = to_string(config.kind);
  output.bundle["config"] = config.echo();
  output.bundle["seeds_used"] = seeds;
  switch (config.kind) {
    case ExperimentKind::BinaryAdd:
    case ExperimentKind::DecimalAdd:
    case ExperimentKind::MnistCl:
      run_training_experiment(config, seeds, options, output);
      break;
    case ExperimentKind::Theorem1:
      run_theorem1(config, seeds, options, output);
      break;
    case ExperimentKind::Theorem2:
      run_theorem2(config, seeds, options, output);
      break;
    case ExperimentKind::Theorem3:
      run_theorem3(config, seeds, options, output);
      break;
    case ExperimentKind::Corollary1Mc:
      output.seeds_used = {config.monte_carlo.mc.seed + options.seed_offset};
      run_corollary1(config, options, output);
      break;
    case ExperimentKind::SaturationMc:
      output.seeds_used = {config.monte_carlo.mc.seed + options.seed_offset};
      run_saturation(config, options, output);
      break;
    case ExperimentKind::DimensionMc:
      output.seeds_used = {config.monte_carlo.mc.seed + options.seed_offset};
      run_dimension(config, options, output);
      break;
    case ExperimentKind::FragmentationMc:
      output.seeds_used = {config.monte_carlo.mc.seed + options.seed_offset};
      run_fragmentation(config, options, output);
      break;
  }
}

}  // namespace kanforget::runner
