#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kanforget/ledger.hpp"
#include "kanforget/runner/config.hpp"
#include "kanforget/runner/experiments.hpp"

namespace kanforget::runner {

inline constexpr const char* kOutputRootEnv = "KANFORGET_OUTPUT_ROOT";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

struct FileRecord {
  std::string path;
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  nlohmann::json config;
  std::string code_version;
  std::string started_utc;
  std::string finished_utc;
  std::vector<std::uint64_t> seeds;
  std::vector<FileRecord> files;
  std::string status = "partial";  // "complete" once every report is written
  nlohmann::json failure;          // null unless a run failed

  [[nodiscard]] nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

[[nodiscard]] std::string sha256_hex(std::string_view data);
[[nodiscard]] std::string code_version();
[[nodiscard]] std::string utc_now();

/// $KANFORGET_OUTPUT_ROOT, else ./runs.
[[nodiscard]] std::filesystem::path default_output_root();

/// Run directory when none is configured: <root>/<name>-<UTC stamp>.
[[nodiscard]] std::filesystem::path default_run_dir(const ExperimentConfig& config);

/// Writes the files, bundle.json and manifest.json into a staging directory
/// next to `run_dir`, then renames it into place. Throws IoError.
RunManifest emit_reports(const std::filesystem::path& run_dir, RunManifest manifest, const ExperimentOutput& output);

struct RunResult {
  RunManifest manifest;
  std::filesystem::path run_dir;
  int exit_code = kExitOk;
  std::string message;
};

/// Validates the target, stages, executes, emits. A numerical failure leaves a
/// run directory whose manifest is marked partial.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options, std::filesystem::path run_dir);

/// Result bundle (bundle.json) I/O. Doubles round-trip exactly.
void save_bundle(const std::filesystem::path& path, const nlohmann::json& bundle);
[[nodiscard]] nlohmann::json load_bundle(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json ledger_to_json(const ForgettingLedger& ledger);
[[nodiscard]] ForgettingLedger ledger_from_json(const nlohmann::json& j);

struct ReportCheck {
  RunManifest manifest;
  std::vector<std::string> problems;  // checksum mismatches, missing files
};

/// Re-reads a run directory, verifies checksums and renders a text summary.
[[nodiscard]] ReportCheck check_run(const std::filesystem::path& run_dir);
[[nodiscard]] std::string render_report(const std::filesystem::path& run_dir, const ReportCheck& check);

}  // namespace kanforget::runner
