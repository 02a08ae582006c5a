#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kanforget/overlap_mc.hpp"
#include "kanforget/task_corpus.hpp"
#include "kanforget/training.hpp"

namespace kanforget::runner {

enum class ExperimentKind {
  BinaryAdd,
  DecimalAdd,
  MnistCl,
  Theorem1,
  Theorem2,
  Theorem3,
  Corollary1Mc,
  SaturationMc,
  DimensionMc,
  FragmentationMc,
};

[[nodiscard]] std::string to_string(ExperimentKind kind);
[[nodiscard]] std::optional<ExperimentKind> parse_kind(const std::string& name);
[[nodiscard]] const std::vector<std::string>& kind_names();

enum class ModelKind { Kan, Mlp };

struct NetworkSection {
  ModelKind model = ModelKind::Kan;
  /// For image experiments the first entry is replaced by S = height * width.
  std::vector<std::size_t> dims{3, 2, 2};
  std::vector<int> grid_sizes{5};
  int spline_order = 3;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
  double grid_epsilon = 0.02;
  double base_weight_scale = 1.0;
  double spline_weight_scale = 1.0;
  double spline_noise_scale = 0.1;
};

struct AnalysisSection {
  double activation_threshold = 1e-2;
  std::size_t support_bins = 400;
};

struct ImageSection {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t samples_per_class = 100;
  std::vector<ImagePreprocessSpec> configs{{256, 28, 28}};
};

struct MonteCarloSection {
  McConfig mc;
  std::vector<double> s_values{0.1, 0.2, 0.5};        // corollary1-mc grid
  double s_i = 0.3;                                   // saturation-mc
  double s_j = 0.3;
  std::size_t later_tasks = 50;
  std::string placement = "independent";
  std::vector<std::pair<double, double>> dim_pairs{{1, 1}, {2, 3}, {3, 3}};
  double fragment_radius = 0.5;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::BinaryAdd;
  std::string name;  // defaults to the kind
  std::vector<std::uint64_t> seeds{0, 1, 2};
  NetworkSection network;
  TrainConfig training;
  AnalysisSection analysis;
  ImageSection images;
  MonteCarloSection monte_carlo;
  std::filesystem::path output_directory;  // empty: derived from the output root
  std::filesystem::path source;            // config file, for resolving relative paths

  /// Every field, defaults included.
  [[nodiscard]] nlohmann::json echo() const;
};

struct Diagnostic {
  std::string field;  // dotted path, e.g. training.learning_rate
  std::string message;
  bool is_error = true;
};

struct ParseResult {
  std::optional<ExperimentConfig> config;
  std::vector<Diagnostic> diagnostics;

  [[nodiscard]] bool ok() const;
};

/// Defaults for a kind: the published hyperparameters for that experiment.
[[nodiscard]] ExperimentConfig default_config(ExperimentKind kind);

/// Structural + semantic checks. Never runs anything.
[[nodiscard]] ParseResult parse_config(const nlohmann::json& doc, const std::filesystem::path& source = {});
[[nodiscard]] ParseResult parse_config_text(const std::string& text, const std::filesystem::path& source = {});
[[nodiscard]] ParseResult load_config(const std::filesystem::path& path);

[[nodiscard]] std::string format_diagnostics(const std::vector<Diagnostic>& diagnostics);

}  // namespace kanforget::runner
