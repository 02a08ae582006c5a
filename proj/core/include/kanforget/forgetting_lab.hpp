#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kanforget/ledger.hpp"
#include "kanforget/networks.hpp"
#include "kanforget/task_corpus.hpp"

namespace kanforget {

/// B equal-width bins over [lo, hi] on one pre-activation axis.
struct SupportAxis {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t bins = 400;

  [[nodiscard]] double bin_width() const noexcept { return (hi - lo) / static_cast<double>(bins); }
  /// Bin holding z, clamped into [0, bins).
  [[nodiscard]] std::size_t bin_of(double z) const noexcept;
  [[nodiscard]] double length() const noexcept { return hi - lo; }

  friend bool operator==(const SupportAxis&, const SupportAxis&) = default;
};

/// Axis per (layer, input coordinate p); branches (l, p, q) share axis [l][p].
using AxisPlan = std::vector<std::vector<SupportAxis>>;

/// Discretized activation support of one branch phi_{l,p,q} for one task.
struct BranchSupport {
  std::size_t layer = 0;
  std::size_t p = 0;
  std::size_t q = 0;
  SupportAxis axis;
  std::vector<std::uint8_t> mask;  // 1 = bin active

  [[nodiscard]] std::size_t active_bins() const noexcept;
  /// Lebesgue measure: active bins × bin width.
  [[nodiscard]] double measure() const noexcept;
};

struct SupportProfile {
  double threshold = 1e-2;
  std::vector<BranchSupport> branches;  // ordered by (layer, p, q)

  [[nodiscard]] double total_measure() const noexcept;
  [[nodiscard]] double min_bin_width() const noexcept;
};

inline constexpr std::size_t kDefaultSupportBins = 400;
inline constexpr double kDefaultActivationThreshold = 1e-2;

/// Axes spanning every pre-activation observed in `traces`, padded to at
/// least the grid range of each layer.
[[nodiscard]] AxisPlan plan_axes(const KanNetwork& net, std::span<const ForwardTrace> traces,
                                 std::size_t bins);

/// Feeds every task row forward; a bin of branch (l,p,q) is active iff some
/// row's pre-activation at (l,p) lands in it and |phi_{l,p,q}| there exceeds
/// `threshold`. Axes come from this task alone.
[[nodiscard]] SupportProfile measure_supports(const KanNetwork& net, const TaskDataset& task,
                                              double threshold, std::size_t bins);

/// Same, on caller-provided axes (needed when profiles are compared).
[[nodiscard]] SupportProfile measure_supports(const KanNetwork& net, const TaskDataset& task,
                                              double threshold, const AxisPlan& axes);

/// Same, from an existing trace of `net`.
[[nodiscard]] SupportProfile measure_supports(const KanNetwork& net, const ForwardTrace& trace,
                                              double threshold, const AxisPlan& axes);

struct PairwiseOverlap {
  double delta = 0.0;               // max over branches
  std::vector<double> per_branch;   // mu(S_a ∩ S_b) per branch
};

/// Throws UsageError unless both profiles share branch layout and axes.
[[nodiscard]] PairwiseOverlap pairwise_overlap(const SupportProfile& a, const SupportProfile& b);

struct CumulativeOverlap {
  std::vector<double> per_branch;  // sum_{j>i} mu(S_i ∩ S_j)
  double total = 0.0;
};

/// `i` is 0-based; i == T-1 yields zeros. Throws UsageError for i >= T.
[[nodiscard]] CumulativeOverlap cumulative_overlap(std::span<const SupportProfile> profiles, std::size_t i);

struct UnionOverlap {
  std::vector<double> per_branch;  // mu(U_i) = mu(union_{j>i} S_i ∩ S_j)
  std::vector<double> bound;       // min(sum_{j>i} Delta_{i,j}, mu(S_i))
  bool all_pass = true;
};

/// Measures the union of overlaps and checks it against its bound per branch;
/// a violation throws InternalConsistencyError.
[[nodiscard]] UnionOverlap union_overlap(std::span<const SupportProfile> profiles, std::size_t i);

struct OverlapMatrix {
  Matrix delta;                                 // [T × T], zero diagonal
  std::vector<CumulativeOverlap> cumulative;    // per i
  std::vector<UnionOverlap> unions;             // per i
};

[[nodiscard]] OverlapMatrix overlap_matrix(std::span<const SupportProfile> profiles);

/// F_i = loss(T, i) - loss(i, i), 0-based. Throws UsageError when a needed
/// cell is missing.
[[nodiscard]] std::vector<double> compute_forgetting(const ForgettingLedger& ledger);

/// Sample (n-1) standard deviation over |mean|; 0 for fewer than two values.
[[nodiscard]] double coefficient_of_variation(std::span<const double> values);

// --- ratio reports -----------------------------------------------------------

enum class DenominatorKind { PairwiseOverlap, CumulativeOverlap, IntrinsicDimension };

struct RatioRow {
  int grid = 0;
  int task_i = 0;               // 1-based
  std::vector<int> task_js;     // 1-based
  double forgetting = 0.0;
  double denominator = 0.0;
  std::optional<double> ratio;  // null when the denominator is below resolution
  bool flagged = false;         // contradicts the bound's premise
  // Intrinsic-dimension rows only.
  int quantize_levels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct RatioReport {
  DenominatorKind kind = DenominatorKind::PairwiseOverlap;
  std::string note;
  std::vector<RatioRow> rows;
  std::map<int, double> cv_by_grid;  // key 0 when rows carry no grid
};

/// Forgetting and overlap of task i after a two-task run (train i, then j).
struct PairMeasurement {
  int grid = 0;
  int task_i = 0;
  int task_j = 0;
  double forgetting = 0.0;
  double delta = 0.0;
  double bin_width = 0.0;
};

/// F_i from the 2×2 ledger of a two-task run; Delta from the two profiles
/// (each measured on its own checkpoint).
[[nodiscard]] PairMeasurement measure_pair(int grid, int task_i, int task_j,
                                           const ForgettingLedger& two_task_ledger,
                                           const SupportProfile& profile_i,
                                           const SupportProfile& profile_j);

[[nodiscard]] RatioReport ratio_report_theorem1(std::span<const PairMeasurement> pairs);

struct CumulativeMeasurement {
  int grid = 0;
  int task_i = 0;
  std::vector<int> task_js;
  double forgetting = 0.0;
  double cumulative = 0.0;
  double bin_width = 0.0;
};

/// One measurement per task i < T from a full sequence ledger and the
/// per-task profiles.
[[nodiscard]] std::vector<CumulativeMeasurement> measure_cumulative(
    int grid, const ForgettingLedger& ledger, std::span<const SupportProfile> profiles);

[[nodiscard]] RatioReport ratio_report_theorem2(std::span<const CumulativeMeasurement> rows);

struct DimensionMeasurement {
  ImagePreprocessSpec spec;
  double forgetting = 0.0;  // F_1
};

/// Rows (Q, S, d, F_1, log10(F_1)/d); log base 10 is recorded in the note.
[[nodiscard]] RatioReport ratio_report_theorem3(std::span<const DimensionMeasurement> runs);

/// Table-shaped CSV for each report kind.
void write_ratio_csv(std::ostream& out, const RatioReport& report);

}  // namespace kanforget
