#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kanforget {

/// Random support on the unit torus [0, 1). Every kind reduces to one arc per
/// trial whose length is effective_length().
struct SupportModel {
  enum class Kind { TorusInterval, ManifoldProjected, Fragmented };
  enum class Placement { Independent, SameAsReference, DisjointFromReference };

  Kind kind = Kind::TorusInterval;
  double s = 0.0;  // arc length (torus-interval)
  double r = 0.5;  // ball radius (projected / fragmented)
  double d = 1.0;  // intrinsic dimension
  int k = 1;       // fragment count
  Placement placement = Placement::Independent;

  static SupportModel torus(double s);
  static SupportModel projected(double r, double d);
  static SupportModel fragmented(double r, double d, int k);

  /// s, r^d or (r/k)^d.
  [[nodiscard]] double effective_length() const;
  void validate() const;
  [[nodiscard]] std::string describe() const;
};

struct McConfig {
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::vector<double> r_sweep{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
  std::vector<int> k_sweep{1, 2, 4, 8};

  void validate() const;
};

/// Trials are grouped into fixed shards so results do not depend on workers.
inline constexpr std::size_t kMcShardSize = 4096;

struct Arc {
  double start = 0.0;
  double length = 0.0;
};

/// Exact measure of the intersection of two arcs on [0, 1).
double torus_overlap(Arc a, Arc b);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
  double analytic = 0.0;  // L_i * L_j

  [[nodiscard]] double z_score() const noexcept;
};

/// `study` separates the random streams of different points of a sweep.
McEstimate mc_expected_overlap(const SupportModel& model_i, const SupportModel& model_j, const McConfig& cfg,
                               std::uint64_t study = 0);

struct SaturationPoint {
  std::size_t later_tasks = 0;  // T
  double mean_union = 0.0;
  double std_error = 0.0;
  double mean_slack = 0.0;  // min(sum overlaps, mu(S_i)) - mu(U), averaged
  double oracle = 0.0;      // s_i (1 - prod (1 - s_j)) for independent arcs
};

struct SaturationCurve {
  std::vector<SaturationPoint> points;
  std::size_t violations = 0;
  std::optional<std::size_t> plateau_onset;  // first T with mean >= 99% of mu(S_i)
};

/// Throws InternalConsistencyError if any trial breaks mu(U) <= min(sum, mu(S_i)).
SaturationCurve saturation_curve(const SupportModel& model_i, std::span<const SupportModel> later,
                                 const McConfig& cfg);

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  std::vector<double> residuals;
};

/// OLS of log(y) on log(x).
PowerLawFit fit_power_law(std::span<const double> xs, std::span<const double> ys);

struct ScalingPoint {
  double sweep_value = 0.0;
  McEstimate estimate;
};

struct ScalingStudy {
  std::string label;
  std::vector<ScalingPoint> points;
  PowerLawFit fit;
};

ScalingStudy dimension_scaling(double d_i, double d_j, std::span<const double> r_sweep, const McConfig& cfg);

struct FragmentationStudy {
  ScalingStudy sweep_i;  // k_i varies, k_j = 1
  ScalingStudy sweep_j;  // k_j varies, k_i = 1
};

FragmentationStudy fragmentation_scaling(double d_i, double d_j, double r, std::span<const int> k_sweep,
                                         const McConfig& cfg);

struct EstimateRow {
  SupportModel model_i;
  SupportModel model_j;
  McEstimate estimate;
};

void write_estimate_csv(std::ostream& out, std::span<const EstimateRow> rows);
void write_saturation_csv(std::ostream& out, const SaturationCurve& curve);
void write_scaling_csv(std::ostream& out, const ScalingStudy& study);

}  // namespace kanforget
