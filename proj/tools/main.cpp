#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "kanforget/errors.hpp"
#include "kanforget/runner/artifacts.hpp"
#include "kanforget/runner/config.hpp"
#include "kanforget/runner/fetch.hpp"

namespace fs = std::filesystem;
using namespace kanforget;
using namespace kanforget::runner;

namespace {

int cmd_validate(const fs::path& path) {
  const ParseResult parsed = load_config(path);
  std::cerr << format_diagnostics(parsed.diagnostics);
  if (!parsed.ok()) return kExitConfig;
  std::cout << parsed.config->echo().dump(2) << '\n';
  return kExitOk;
}

int cmd_run(const fs::path& path, const RunOptions& opts, const fs::path& out) {
  const ParseResult parsed = load_config(path);
  std::cerr << format_diagnostics(parsed.diagnostics);
  if (!parsed.ok()) return kExitConfig;
  const RunResult result = run_experiment(*parsed.config, opts, out);
  if (result.exit_code != kExitOk) {
    std::cerr << "error: " << result.message << '\n';
    if (fs::exists(result.run_dir)) std::cerr << "partial results in " << result.run_dir.string() << '\n';
    return result.exit_code;
  }
  std::cout << result.run_dir.string() << '\n';
  return kExitOk;
}

int cmd_report(const fs::path& dir) {
  try {
    const ReportCheck check = check_run(dir);
    std::cout << render_report(dir, check);
    return check.problems.empty() ? kExitOk : kExitIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return kExitIo;
}

int cmd_fetch(const fs::path& dir, const std::string& mirror) {
  try {
    fetch_mnist(dir, mirror, &std::cerr);
    return kExitOk;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KAN continual-learning forgetting lab"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  fs::path config_path;
  fs::path target;
  RunOptions opts;
  opts.log = &std::cerr;
  std::string mirror = kDefaultMnistMirror;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run an experiment and write its reports");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed-offset", opts.seed_offset, "Added to every configured seed");
  run->add_option("--workers", opts.workers, "Parallel (seed, grid) cells / Monte-Carlo shards")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", target,
                  std::string("Run directory (default $") + kOutputRootEnv + "/<name>-<UTC stamp>, root ./runs)");
  run->add_flag("--quiet", quiet, "No progress lines");

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  auto* fetch = app.add_subcommand("fetch-mnist", "Download the MNIST IDX archives and verify MD5 sums");
  fetch->add_option("dir", target, "Destination directory")->required();
  fetch->add_option("--mirror", mirror, "Base URL");

  auto* report = app.add_subcommand("report", "Verify a run directory and print its summary tables");
  report->add_option("run-dir", target, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (quiet) opts.log = nullptr;

  if (*validate) return cmd_validate(config_path);
  if (*run) return cmd_run(config_path, opts, target);
  if (*fetch) return cmd_fetch(target, mirror);
  if (*report) return cmd_report(target);
  return kExitConfig;
}
