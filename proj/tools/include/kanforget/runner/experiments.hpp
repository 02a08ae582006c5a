#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kanforget/runner/config.hpp"

namespace kanforget::runner {

/// One report file, path relative to the run directory.
struct Artifact {
  std::string path;
  std::string content;
};

struct ExperimentOutput {
  std::vector<Artifact> files;
  nlohmann::json bundle = nlohmann::json::object();  // combined machine-readable results
  std::vector<std::uint64_t> seeds_used;
};

struct RunOptions {
  std::uint64_t seed_offset = 0;
  unsigned workers = 1;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

/// Runs every (seed, grid, ...) cell of the experiment. On failure the
/// output holds whatever completed before the exception propagates.
void execute(const ExperimentConfig& config, const RunOptions& options, ExperimentOutput& output);

/// Runs fn(0..count-1) on up to `workers` threads; rethrows the exception of
/// the lowest failing index after all workers join.
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn);

}  // namespace kanforget::runner
