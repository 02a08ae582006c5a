#include "kanforget/overlap_mc.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "kanforget/errors.hpp"
#include "kanforget/random.hpp"

namespace kanforget {

namespace {

// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) noexcept {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  [[nodiscard]] double value() const noexcept { return sum + carry; }
};

struct Moments {
  CompensatedSum x;
  CompensatedSum xx;
  void add(double v) noexcept {
    x.add(v);
    xx.add(v * v);
  }
};

double interval_overlap(double a0, double a1, double b0, double b1) noexcept {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

double wrap(double x) noexcept {
  x -= std::floor(x);
  return x >= 1.0 ? 0.0 : x;
}

std::uint64_t shard_stream(std::uint64_t study, std::size_t shard) {
  return streams::kMonteCarloBase + (study << 24) + shard;
}

// Runs fn(shard, rng, begin, end) for every shard over the worker pool.
template <typename Fn>
void for_each_shard(std::size_t trials, unsigned workers, Fn&& fn) {
  const std::size_t shards = (trials + kMcShardSize - 1) / kMcShardSize;
  const unsigned pool = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(shards)));
  auto run = [&](unsigned w) {
    for (std::size_t s = w; s < shards; s += pool) {
      const std::size_t begin = s * kMcShardSize;
      fn(s, begin, std::min(trials, begin + kMcShardSize));
    }
  };
  if (pool == 1) {
    run(0);
    return;
  }
  std::vector<std::jthread> threads;
  for (unsigned w = 0; w < pool; ++w) threads.emplace_back(run, w);
}

double mean_and_stderr(const std::vector<Moments>& shards, std::size_t n, double& std_error) {
  CompensatedSum x;
  CompensatedSum xx;
  for (const auto& m : shards) {
    x.add(m.x.value());
    xx.add(m.xx.value());
  }
  const double dn = static_cast<double>(n);
  const double mean = x.value() / dn;
  if (n < 2) {
    std_error = 0.0;
    return mean;
  }
  const double var = std::max(0.0, (xx.value() - dn * mean * mean) / (dn - 1.0));
  std_error = std::sqrt(var / dn);
  return mean;
}

// Sorted disjoint intervals inside the reference arc, in local coordinates.
class IntervalSet {
 public:
  void clear() { spans_.clear(); }
  void insert(double lo, double hi) {
    if (!(hi > lo)) return;
    std::vector<std::pair<double, double>> merged;
    merged.reserve(spans_.size() + 1);
    bool placed = false;
    for (const auto& sp : spans_) {
      if (sp.second < lo) {
        merged.push_back(sp);
      } else if (sp.first > hi) {
        if (!placed) {
          merged.emplace_back(lo, hi);
          placed = true;
        }
        merged.push_back(sp);
      } else {
        lo = std::min(lo, sp.first);
        hi = std::max(hi, sp.second);
      }
    }
    if (!placed) merged.emplace_back(lo, hi);
    spans_.swap(merged);
  }
  [[nodiscard]] double measure() const {
    double m = 0.0;
    for (const auto& sp : spans_) m += sp.second - sp.first;
    return m;
  }

 private:
  std::vector<std::pair<double, double>> spans_;
};

// Pieces of arc b that fall inside arc a, as offsets from a.start.
void local_pieces(Arc a, Arc b, IntervalSet& into, double& measure) {
  measure = 0.0;
  const double rel = wrap(b.start - a.start);
  for (int shift = -1; shift <= 0; ++shift) {
    const double lo = std::max(0.0, rel + shift);
    const double hi = std::min(a.length, rel + shift + b.length);
    if (hi > lo) {
      into.insert(lo, hi);
      measure += hi - lo;
    }
  }
}

Arc place(const SupportModel& model, Arc reference, CounterRng& rng) {
  const double len = model.effective_length();
  switch (model.placement) {
    case SupportModel::Placement::Independent:
      return {rng.uniform(), len};
    case SupportModel::Placement::SameAsReference:
      return {reference.start, len};
    case SupportModel::Placement::DisjointFromReference: {
      const double room = 1.0 - reference.length - len;
      return {wrap(reference.start + reference.length + rng.uniform() * std::max(0.0, room)), len};
    }
  }
  return {rng.uniform(), len};
}

}  // namespace

SupportModel SupportModel::torus(double s) {
  SupportModel m;
  m.kind = Kind::TorusInterval;
  m.s = s;
  m.validate();
  return m;
}

SupportModel SupportModel::projected(double r, double d) {
  SupportModel m;
  m.kind = Kind::ManifoldProjected;
  m.r = r;
  m.d = d;
  m.validate();
  return m;
}

SupportModel SupportModel::fragmented(double r, double d, int k) {
  SupportModel m;
  m.kind = Kind::Fragmented;
  m.r = r;
  m.d = d;
  m.k = k;
  m.validate();
  return m;
}

double SupportModel::effective_length() const {
  switch (kind) {
    case Kind::TorusInterval:
      return s;
    case Kind::ManifoldProjected:
      return std::pow(r, d);
    case Kind::Fragmented:
      return std::pow(r / static_cast<double>(k), d);
  }
  return 0.0;
}

void SupportModel::validate() const {
  if (kind == Kind::TorusInterval) {
    if (!(s >= 0.0 && s <= 1.0)) throw UsageError("support model: s must lie in [0, 1]");
    return;
  }
  if (!(r > 0.0 && r < 1.0)) throw UsageError("support model: r must lie in (0, 1)");
  if (!(d >= 1.0)) throw UsageError("support model: d must be >= 1");
  if (k < 1) throw UsageError("support model: k must be >= 1");
}

std::string SupportModel::describe() const {
  std::ostringstream out;
  out << std::setprecision(6);
  switch (kind) {
    case Kind::TorusInterval:
      out << "torus(s=" << s << ")";
      break;
    case Kind::ManifoldProjected:
      out << "projected(r=" << r << ";d=" << d << ")";
      break;
    case Kind::Fragmented:
      out << "fragmented(r=" << r << ";d=" << d << ";k=" << k << ")";
      break;
  }
  return out.str();
}

void McConfig::validate() const {
  if (trials < 1) throw UsageError("mc: trials must be >= 1");
  if (workers < 1) throw UsageError("mc: workers must be >= 1");
}

double torus_overlap(Arc a, Arc b) {
  if (!(a.length >= 0.0 && a.length <= 1.0) || !(b.length >= 0.0 && b.length <= 1.0)) {
    throw UsageError("torus_overlap: arc length outside [0, 1]");
  }
  if (!std::isfinite(a.start) || !std::isfinite(b.start)) throw UsageError("torus_overlap: non-finite start");
  const double a0 = wrap(a.start);
  const double b0 = wrap(b.start);
  double total = 0.0;
  for (int shift = -1; shift <= 1; ++shift) {
    total += interval_overlap(a0, a0 + a.length, b0 + shift, b0 + shift + b.length);
  }
  return std::min(total, std::min(a.length, b.length));
}

double McEstimate::z_score() const noexcept {
  if (std_error == 0.0) return mean == analytic ? 0.0 : std::copysign(INFINITY, mean - analytic);
  return (mean - analytic) / std_error;
}

McEstimate mc_expected_overlap(const SupportModel& model_i, const SupportModel& model_j, const McConfig& cfg,
                               std::uint64_t study) {
  model_i.validate();
  model_j.validate();
  cfg.validate();
  const std::size_t shards = (cfg.trials + kMcShardSize - 1) / kMcShardSize;
  std::vector<Moments> partial(shards);
  for_each_shard(cfg.trials, cfg.workers, [&](std::size_t s, std::size_t begin, std::size_t end) {
    CounterRng rng(cfg.seed, shard_stream(study, s));
    Moments m;
    for (std::size_t t = begin; t < end; ++t) {
      const Arc a{rng.uniform(), model_i.effective_length()};
      const Arc b = place(model_j, a, rng);
      m.add(torus_overlap(a, b));
    }
    partial[s] = m;
  });
  McEstimate est;
  est.trials = cfg.trials;
  est.mean = mean_and_stderr(partial, cfg.trials, est.std_error);
  est.analytic = model_i.effective_length() * model_j.effective_length();
  return est;
}

SaturationCurve saturation_curve(const SupportModel& model_i, std::span<const SupportModel> later,
                                 const McConfig& cfg) {
  if (later.empty()) throw UsageError("saturation_curve: need at least one later model");
  model_i.validate();
  for (const auto& m : later) m.validate();
  cfg.validate();
  const std::size_t horizon = later.size();
  const std::size_t shards = (cfg.trials + kMcShardSize - 1) / kMcShardSize;
  std::vector<std::vector<Moments>> unions(shards, std::vector<Moments>(horizon));
  std::vector<std::vector<Moments>> slacks(shards, std::vector<Moments>(horizon));
  std::vector<std::size_t> violations(shards, 0);

  for_each_shard(cfg.trials, cfg.workers, [&](std::size_t s, std::size_t begin, std::size_t end) {
    CounterRng rng(cfg.seed, shard_stream(0xFFFF, s));
    IntervalSet covered;
    for (std::size_t t = begin; t < end; ++t) {
      const Arc a{rng.uniform(), model_i.effective_length()};
      covered.clear();
      double overlap_sum = 0.0;
      for (std::size_t j = 0; j < horizon; ++j) {
        const Arc b = place(later[j], a, rng);
        double piece = 0.0;
        local_pieces(a, b, covered, piece);
        overlap_sum += piece;
        const double mu = covered.measure();
        const double bound = std::min(overlap_sum, a.length);
        if (mu > bound + 1e-12) ++violations[s];
        unions[s][j].add(mu);
        slacks[s][j].add(bound - mu);
      }
    }
  });

  SaturationCurve curve;
  for (auto v : violations) curve.violations += v;
  if (curve.violations > 0) {
    throw InternalConsistencyError("saturation_curve: " + std::to_string(curve.violations) +
                                   " trials broke mu(U) <= min(sum, mu(S_i))");
  }
  const double si = model_i.effective_length();
  double survive = 1.0;
  for (std::size_t j = 0; j < horizon; ++j) {
    std::vector<Moments> u(shards);
    std::vector<Moments> sl(shards);
    for (std::size_t s = 0; s < shards; ++s) {
      u[s] = unions[s][j];
      sl[s] = slacks[s][j];
    }
    SaturationPoint pt;
    pt.later_tasks = j + 1;
    pt.mean_union = mean_and_stderr(u, cfg.trials, pt.std_error);
    double unused = 0.0;
    pt.mean_slack = mean_and_stderr(sl, cfg.trials, unused);
    survive *= 1.0 - later[j].effective_length();
    pt.oracle = si * (1.0 - survive);
    if (!curve.plateau_onset && si > 0.0 && pt.mean_union >= 0.99 * si) curve.plateau_onset = j + 1;
    curve.points.push_back(pt);
  }
  return curve;
}

PowerLawFit fit_power_law(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw UsageError("fit_power_law: length mismatch");
  if (xs.size() < 2) throw UsageError("fit_power_law: need at least two points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n);
  std::vector<double> ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw DomainError("fit_power_law: values must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw UsageError("fit_power_law: sweep values are all equal");
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    fit.residuals.push_back(r);
    sse += r * r;
  }
  fit.slope_stderr = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : 0.0;
  return fit;
}

namespace {

void check_sweep_size(std::size_t n, const char* what) {
  if (n < 4) throw UsageError(std::string(what) + ": need at least 4 sweep points");
}

ScalingStudy run_sweep(std::string label, const std::vector<std::pair<double, std::pair<SupportModel, SupportModel>>>& cells,
                       const McConfig& cfg, std::uint64_t study_base) {
  ScalingStudy study;
  study.label = std::move(label);
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& [value, models] = cells[c];
    const McEstimate est = mc_expected_overlap(models.first, models.second, cfg, study_base + c);
    study.points.push_back({value, est});
    xs.push_back(value);
    ys.push_back(est.mean);
  }
  study.fit = fit_power_law(xs, ys);
  return study;
}

}  // namespace

ScalingStudy dimension_scaling(double d_i, double d_j, std::span<const double> r_sweep, const McConfig& cfg) {
  check_sweep_size(r_sweep.size(), "dimension_scaling");
  std::vector<double> sorted(r_sweep.begin(), r_sweep.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw UsageError("dimension_scaling: repeated r values");
  }
  std::vector<std::pair<double, std::pair<SupportModel, SupportModel>>> cells;
  for (double r : r_sweep) {
    if (!(r > 0.0 && r < 1.0)) throw UsageError("dimension_scaling: r must lie in (0, 1)");
    cells.push_back({r, {SupportModel::projected(r, d_i), SupportModel::projected(r, d_j)}});
  }
  std::ostringstream label;
  label << "dimension d_i=" << d_i << " d_j=" << d_j;
  return run_sweep(label.str(), cells, cfg, 0x100);
}

FragmentationStudy fragmentation_scaling(double d_i, double d_j, double r, std::span<const int> k_sweep,
                                         const McConfig& cfg) {
  check_sweep_size(k_sweep.size(), "fragmentation_scaling");
  std::vector<int> sorted(k_sweep.begin(), k_sweep.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw UsageError("fragmentation_scaling: repeated k values");
  }
  std::vector<std::pair<double, std::pair<SupportModel, SupportModel>>> cells_i;
  std::vector<std::pair<double, std::pair<SupportModel, SupportModel>>> cells_j;
  for (int k : k_sweep) {
    if (k < 1) throw UsageError("fragmentation_scaling: k must be >= 1");
    cells_i.push_back({static_cast<double>(k),
                       {SupportModel::fragmented(r, d_i, k), SupportModel::fragmented(r, d_j, 1)}});
    cells_j.push_back({static_cast<double>(k),
                       {SupportModel::fragmented(r, d_i, 1), SupportModel::fragmented(r, d_j, k)}});
  }
  std::ostringstream label;
  label << "fragmentation d_i=" << d_i << " d_j=" << d_j << " r=" << r;
  return {run_sweep(label.str() + " sweep=k_i", cells_i, cfg, 0x200),
          run_sweep(label.str() + " sweep=k_j", cells_j, cfg, 0x300)};
}

void write_estimate_csv(std::ostream& out, std::span<const EstimateRow> rows) {
  out << std::setprecision(17);
  out << "model_i,model_j,N,mean,std_error,analytic_expectation,z_score\n";
  for (const auto& row : rows) {
    out << row.model_i.describe() << ',' << row.model_j.describe() << ',' << row.estimate.trials << ','
        << row.estimate.mean << ',' << row.estimate.std_error << ',' << row.estimate.analytic << ','
        << row.estimate.z_score() << '\n';
  }
}

void write_saturation_csv(std::ostream& out, const SaturationCurve& curve) {
  out << std::setprecision(17);
  out << "T,mean_union,std_error,mean_slack,oracle\n";
  for (const auto& p : curve.points) {
    out << p.later_tasks << ',' << p.mean_union << ',' << p.std_error << ',' << p.mean_slack << ',' << p.oracle
        << '\n';
  }
}

void write_scaling_csv(std::ostream& out, const ScalingStudy& study) {
  out << std::setprecision(17);
  out << "# " << study.label << " (projected 1-D firing model: support length r^d, or (r/k)^d per fragment)\n";
  out << "sweep_value,N,mean,std_error,analytic_expectation,fit_residual,slope,slope_stderr\n";
  for (std::size_t i = 0; i < study.points.size(); ++i) {
    const auto& p = study.points[i];
    out << p.sweep_value << ',' << p.estimate.trials << ',' << p.estimate.mean << ',' << p.estimate.std_error << ','
        << p.estimate.analytic << ',' << study.fit.residuals[i] << ',' << study.fit.slope << ','
        << study.fit.slope_stderr << '\n';
  }
}

}  // namespace kanforget
