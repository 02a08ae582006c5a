#include "kanforget/forgetting_lab.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "kanforget/errors.hpp"

namespace kanforget {

std::size_t SupportAxis::bin_of(double z) const noexcept {
  const double pos = (z - lo) / bin_width();
  if (!(pos > 0.0)) return 0;
  const auto idx = static_cast<std::size_t>(pos);
  return std::min(idx, bins - 1);
}

std::size_t BranchSupport::active_bins() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

double BranchSupport::measure() const noexcept {
  return static_cast<double>(active_bins()) * axis.bin_width();
}

double SupportProfile::total_measure() const noexcept {
  double total = 0.0;
  for (const auto& b : branches) total += b.measure();
  return total;
}

double SupportProfile::min_bin_width() const noexcept {
  double w = std::numeric_limits<double>::infinity();
  for (const auto& b : branches) w = std::min(w, b.axis.bin_width());
  return branches.empty() ? 0.0 : w;
}

AxisPlan plan_axes(const KanNetwork& net, std::span<const ForwardTrace> traces, std::size_t bins) {
  if (bins < 10) throw UsageError("plan_axes: need at least 10 bins");
  AxisPlan plan;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    std::vector<SupportAxis> axes(layer.in_dim,
                                  SupportAxis{layer.grid.range_lo(), layer.grid.range_hi(), bins});
    for (const auto& trace : traces) {
      if (trace.pre_activations.size() != net.layers.size() ||
          trace.pre_activations[l].cols() != layer.in_dim) {
        throw UsageError("plan_axes: trace does not match the network");
      }
      const Matrix& pre = trace.pre_activations[l];
      for (std::size_t b = 0; b < pre.rows(); ++b) {
        for (std::size_t p = 0; p < layer.in_dim; ++p) {
          axes[p].lo = std::min(axes[p].lo, pre(b, p));
          axes[p].hi = std::max(axes[p].hi, pre(b, p));
        }
      }
    }
    plan.push_back(std::move(axes));
  }
  return plan;
}

SupportProfile measure_supports(const KanNetwork& net, const ForwardTrace& trace, double threshold,
                                const AxisPlan& axes) {
  if (!(threshold > 0.0)) throw UsageError("measure_supports: threshold must be > 0");
  if (trace.pre_activations.size() != net.layers.size() || axes.size() != net.layers.size()) {
    throw UsageError("measure_supports: trace/axes do not match the network depth");
  }
  if (trace.output.rows() == 0) throw UsageError("measure_supports: empty task");
  SupportProfile profile;
  profile.threshold = threshold;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const Matrix& pre = trace.pre_activations[l];
    if (pre.cols() != layer.in_dim || axes[l].size() != layer.in_dim) {
      throw UsageError("measure_supports: layer " + std::to_string(l) + " shape mismatch");
    }
    for (std::size_t p = 0; p < layer.in_dim; ++p) {
      const SupportAxis& axis = axes[l][p];
      if (axis.bins < 10 || !(axis.hi > axis.lo)) throw UsageError("measure_supports: bad axis");
      for (std::size_t q = 0; q < layer.out_dim; ++q) {
        BranchSupport branch{l, p, q, axis, std::vector<std::uint8_t>(axis.bins, 0)};
        for (std::size_t b = 0; b < pre.rows(); ++b) {
          const double z = pre(b, p);
          if (std::abs(branch_eval(layer, p, q, z)) > threshold) branch.mask[axis.bin_of(z)] = 1;
        }
        profile.branches.push_back(std::move(branch));
      }
    }
  }
  return profile;
}

SupportProfile measure_supports(const KanNetwork& net, const TaskDataset& task, double threshold,
                                const AxisPlan& axes) {
  if (task.rows() == 0) throw UsageError("measure_supports: empty task");
  return measure_supports(net, forward(net, task.inputs), threshold, axes);
}

SupportProfile measure_supports(const KanNetwork& net, const TaskDataset& task, double threshold,
                                std::size_t bins) {
  if (task.rows() == 0) throw UsageError("measure_supports: empty task");
  const ForwardTrace trace = forward(net, task.inputs);
  const AxisPlan axes = plan_axes(net, std::span<const ForwardTrace>(&trace, 1), bins);
  return measure_supports(net, trace, threshold, axes);
}

namespace {

void require_compatible(const SupportProfile& a, const SupportProfile& b) {
  if (a.branches.size() != b.branches.size()) {
    throw UsageError("support profiles differ in branch count");
  }
  for (std::size_t k = 0; k < a.branches.size(); ++k) {
    const auto& x = a.branches[k];
    const auto& y = b.branches[k];
    if (x.layer != y.layer || x.p != y.p || x.q != y.q || !(x.axis == y.axis) ||
        x.mask.size() != y.mask.size()) {
      throw UsageError("support profiles do not share a bin axis (branch " + std::to_string(k) + ")");
    }
  }
}

std::size_t and_count(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] & b[i]);
  return n;
}

}  // namespace

PairwiseOverlap pairwise_overlap(const SupportProfile& a, const SupportProfile& b) {
  require_compatible(a, b);
  PairwiseOverlap out;
  out.per_branch.resize(a.branches.size());
  for (std::size_t k = 0; k < a.branches.size(); ++k) {
    const double width = a.branches[k].axis.bin_width();
    out.per_branch[k] = static_cast<double>(and_count(a.branches[k].mask, b.branches[k].mask)) * width;
    out.delta = std::max(out.delta, out.per_branch[k]);
  }
  return out;
}

CumulativeOverlap cumulative_overlap(std::span<const SupportProfile> profiles, std::size_t i) {
  if (i >= profiles.size()) throw UsageError("cumulative_overlap: task index out of range");
  CumulativeOverlap out;
  out.per_branch.assign(profiles[i].branches.size(), 0.0);
  for (std::size_t j = i + 1; j < profiles.size(); ++j) {
    const PairwiseOverlap pair = pairwise_overlap(profiles[i], profiles[j]);
    for (std::size_t k = 0; k < out.per_branch.size(); ++k) out.per_branch[k] += pair.per_branch[k];
  }
  out.total = std::accumulate(out.per_branch.begin(), out.per_branch.end(), 0.0);
  return out;
}

UnionOverlap union_overlap(std::span<const SupportProfile> profiles, std::size_t i) {
  if (i >= profiles.size()) throw UsageError("union_overlap: task index out of range");
  const SupportProfile& base = profiles[i];
  double delta_sum = 0.0;
  for (std::size_t j = i + 1; j < profiles.size(); ++j) delta_sum += pairwise_overlap(base, profiles[j]).delta;

  UnionOverlap out;
  for (std::size_t k = 0; k < base.branches.size(); ++k) {
    const auto& own = base.branches[k];
    std::vector<std::uint8_t> covered(own.mask.size(), 0);
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      const auto& other = profiles[j].branches[k].mask;
      for (std::size_t bin = 0; bin < covered.size(); ++bin) covered[bin] |= (own.mask[bin] & other[bin]);
    }
    const double measure =
        static_cast<double>(std::count(covered.begin(), covered.end(), std::uint8_t{1})) * own.axis.bin_width();
    const double bound = std::min(delta_sum, own.measure());
    // Each side is a sum of exact bin multiples; allow only rounding slack.
    if (measure > bound * (1.0 + 1e-12) + 1e-300) {
      out.all_pass = false;
      throw InternalConsistencyError("union_overlap: mu(U) = " + std::to_string(measure) +
                                     " exceeds its bound " + std::to_string(bound) + " on branch " +
                                     std::to_string(k));
    }
    out.per_branch.push_back(measure);
    out.bound.push_back(bound);
  }
  return out;
}

OverlapMatrix overlap_matrix(std::span<const SupportProfile> profiles) {
  const std::size_t t = profiles.size();
  OverlapMatrix out{Matrix(t, t), {}, {}};
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) {
      const double d = pairwise_overlap(profiles[i], profiles[j]).delta;
      out.delta(i, j) = d;
      out.delta(j, i) = d;
    }
    out.cumulative.push_back(cumulative_overlap(profiles, i));
    out.unions.push_back(union_overlap(profiles, i));
  }
  return out;
}

std::vector<double> compute_forgetting(const ForgettingLedger& ledger) {
  const std::size_t t = ledger.task_count();
  if (t == 0) throw UsageError("compute_forgetting: empty ledger");
  std::vector<double> f(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double last = ledger.loss(t - 1, i);
    const double own = ledger.loss(i, i);
    if (!std::isfinite(last) || !std::isfinite(own)) {
      throw UsageError("compute_forgetting: ledger incomplete for task " + std::to_string(i + 1));
    }
    f[i] = last - own;
  }
  return f;
}

double coefficient_of_variation(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return mean == 0.0 ? std::numeric_limits<double>::infinity() : sd / std::abs(mean);
}

namespace {

void fill_cv(RatioReport& report) {
  std::map<int, std::vector<double>> by_grid;
  for (const auto& row : report.rows) {
    if (row.ratio) by_grid[row.grid].push_back(*row.ratio);
  }
  for (const auto& [grid, ratios] : by_grid) report.cv_by_grid[grid] = coefficient_of_variation(ratios);
}

}  // namespace

PairMeasurement measure_pair(int grid, int task_i, int task_j, const ForgettingLedger& two_task_ledger,
                             const SupportProfile& profile_i, const SupportProfile& profile_j) {
  if (two_task_ledger.task_count() != 2) throw UsageError("measure_pair: expected a 2-task ledger");
  const auto f = compute_forgetting(two_task_ledger);
  return {grid, task_i, task_j, f[0], pairwise_overlap(profile_i, profile_j).delta,
          profile_i.min_bin_width()};
}

RatioReport ratio_report_theorem1(std::span<const PairMeasurement> pairs) {
  RatioReport report;
  report.kind = DenominatorKind::PairwiseOverlap;
  report.note = "ratio = F_i / Delta_ij; null when Delta_ij < bin width";
  for (const auto& m : pairs) {
    RatioRow row;
    row.grid = m.grid;
    row.task_i = m.task_i;
    row.task_js = {m.task_j};
    row.forgetting = m.forgetting;
    row.denominator = m.delta;
    if (m.delta >= m.bin_width && m.delta > 0.0) {
      row.ratio = m.forgetting / m.delta;
    } else {
      row.flagged = m.forgetting > 0.0;
    }
    report.rows.push_back(std::move(row));
  }
  fill_cv(report);
  return report;
}

std::vector<CumulativeMeasurement> measure_cumulative(int grid, const ForgettingLedger& ledger,
                                                      std::span<const SupportProfile> profiles) {
  if (profiles.size() != ledger.task_count()) {
    throw UsageError("measure_cumulative: one profile per task required");
  }
  const auto f = compute_forgetting(ledger);
  std::vector<CumulativeMeasurement> out;
  for (std::size_t i = 0; i + 1 < profiles.size(); ++i) {
    CumulativeMeasurement m;
    m.grid = grid;
    m.task_i = static_cast<int>(i + 1);
    for (std::size_t j = i + 1; j < profiles.size(); ++j) m.task_js.push_back(static_cast<int>(j + 1));
    m.forgetting = f[i];
    m.cumulative = cumulative_overlap(profiles, i).total;
    m.bin_width = profiles[i].min_bin_width();
    out.push_back(std::move(m));
  }
  return out;
}

RatioReport ratio_report_theorem2(std::span<const CumulativeMeasurement> rows) {
  RatioReport report;
  report.kind = DenominatorKind::CumulativeOverlap;
  report.note = "ratio = F_i / sum_{j>i} sum_branches mu(S_i ∩ S_j)";
  for (const auto& m : rows) {
    if (m.task_js.empty()) continue;
    RatioRow row;
    row.grid = m.grid;
    row.task_i = m.task_i;
    row.task_js = m.task_js;
    row.forgetting = m.forgetting;
    row.denominator = m.cumulative;
    if (m.cumulative >= m.bin_width && m.cumulative > 0.0) {
      row.ratio = m.forgetting / m.cumulative;
    } else {
      row.flagged = m.forgetting > 0.0;
    }
    report.rows.push_back(std::move(row));
  }
  fill_cv(report);
  return report;
}

RatioReport ratio_report_theorem3(std::span<const DimensionMeasurement> runs) {
  RatioReport report;
  report.kind = DenominatorKind::IntrinsicDimension;
  report.note = "ratio = log10(F_1) / d, d = log2(Q * S)";
  for (const auto& run : runs) {
    RatioRow row;
    row.task_i = 1;
    row.quantize_levels = run.spec.quantize_levels;
    row.height = run.spec.height;
    row.width = run.spec.width;
    row.forgetting = run.forgetting;
    row.denominator = intrinsic_dimension(run.spec);
    if (run.forgetting > 0.0) {
      row.ratio = std::log10(run.forgetting) / row.denominator;
    } else {
      row.flagged = true;
    }
    report.rows.push_back(std::move(row));
  }
  fill_cv(report);
  return report;
}

void write_ratio_csv(std::ostream& out, const RatioReport& report) {
  out << std::setprecision(17);
  auto ratio_field = [&](const RatioRow& row) {
    if (row.ratio) out << *row.ratio;
  };
  switch (report.kind) {
    case DenominatorKind::PairwiseOverlap:
      out << "task_i,task_j,grid,F_i,delta,ratio\n";
      for (const auto& row : report.rows) {
        out << row.task_i << ',' << row.task_js.front() << ',' << row.grid << ',' << row.forgetting << ','
            << row.denominator << ',';
        ratio_field(row);
        out << '\n';
      }
      break;
    case DenominatorKind::CumulativeOverlap:
      out << "task_i,task_j_set,grid,F_i,sum_mu,ratio\n";
      for (const auto& row : report.rows) {
        out << row.task_i << ',';
        for (std::size_t k = 0; k < row.task_js.size(); ++k) out << (k ? " " : "") << row.task_js[k];
        out << ',' << row.grid << ',' << row.forgetting << ',' << row.denominator << ',';
        ratio_field(row);
        out << '\n';
      }
      break;
    case DenominatorKind::IntrinsicDimension:
      out << "quantize,shape,intrinsic_dim,F_1,log10_F_over_d\n";
      for (const auto& row : report.rows) {
        out << row.quantize_levels << ',' << row.height << 'x' << row.width << ',' << row.denominator << ','
            << row.forgetting << ',';
        ratio_field(row);
        out << '\n';
      }
      break;
  }
}

}  // namespace kanforget
