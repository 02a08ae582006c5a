#include "kanforget/runner/artifacts.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <unistd.h>

#include "kanforget/errors.hpp"

namespace kanforget::runner {

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef KANFORGET_VERSION
#define KANFORGET_VERSION "unknown"
#endif

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string code_version() { return KANFORGET_VERSION; }

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

fs::path default_run_dir(const ExperimentConfig& config) {
  std::string stamp = utc_now();
  std::erase(stamp, ':');
  std::erase(stamp, '-');
  return default_output_root() / (config.name + "-" + stamp);
}

json RunManifest::to_json() const {
  json files_j = json::array();
  for (const auto& f : files) files_j.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  return {{"status", status},       {"code_version", code_version},  {"started_utc", started_utc},
          {"finished_utc", finished_utc}, {"seeds", seeds},         {"config", config},
          {"files", files_j},       {"failure", failure}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.status = j.at("status").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.started_utc = j.at("started_utc").get<std::string>();
    m.finished_utc = j.at("finished_utc").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.config = j.at("config");
    m.failure = j.at("failure");
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                         f.at("bytes").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what(), "manifest");
  }
  return m;
}

namespace {

void write_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path staging_dir_for(const fs::path& run_dir) {
  return run_dir.parent_path() / ("." + run_dir.filename().string() + ".staging-" + std::to_string(::getpid()));
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  write_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

// Writes every artifact plus bundle.json into `dir`, recording checksums.
void write_payload(const fs::path& dir, RunManifest& m, const ExperimentOutput& output) {
  m.files.clear();
  for (const auto& a : output.files) {
    write_file(dir / a.path, a.content);
    m.files.push_back({a.path, sha256_hex(a.content), a.content.size()});
  }
  const std::string bundle = output.bundle.dump(1) + "\n";
  write_file(dir / "bundle.json", bundle);
  m.files.push_back({"bundle.json", sha256_hex(bundle), bundle.size()});
}

void prepare_target(const fs::path& run_dir) {
  std::error_code ec;
  if (fs::exists(run_dir, ec)) throw IoError("run directory already exists: " + run_dir.string());
  const fs::path parent = run_dir.parent_path().empty() ? fs::path(".") : run_dir.parent_path();
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create output root " + parent.string() + ": " + ec.message());
}

}  // namespace

RunManifest emit_reports(const fs::path& run_dir, RunManifest manifest, const ExperimentOutput& output) {
  prepare_target(run_dir);
  const fs::path staging = staging_dir_for(run_dir);
  std::error_code ec;
  fs::create_directories(staging, ec);
  if (ec) throw IoError("cannot create staging directory " + staging.string() + ": " + ec.message());
  write_payload(staging, manifest, output);
  if (manifest.finished_utc.empty()) manifest.finished_utc = utc_now();
  write_manifest(staging, manifest);
  fs::rename(staging, run_dir, ec);
  if (ec) throw IoError("cannot move " + staging.string() + " to " + run_dir.string() + ": " + ec.message());
  return manifest;
}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options, fs::path run_dir) {
  RunResult result;
  if (run_dir.empty()) run_dir = config.output_directory.empty() ? default_run_dir(config) : config.output_directory;
  result.run_dir = run_dir;
  RunManifest& m = result.manifest;
  m.config = config.echo();
  m.code_version = code_version();
  m.started_utc = utc_now();

  fs::path staging;
  try {
    prepare_target(run_dir);
    staging = staging_dir_for(run_dir);
    std::error_code ec;
    fs::create_directories(staging, ec);
    if (ec) throw IoError("cannot create staging directory " + staging.string() + ": " + ec.message());
    // A killed run leaves this partial manifest behind, never bare reports.
    write_manifest(staging, m);
  } catch (const IoError& e) {
    result.exit_code = kExitIo;
    result.message = e.what();
    return result;
  }

  ExperimentOutput output;
  auto fail = [&](int code, const std::string& kind, const std::string& what) {
    result.exit_code = code;
    result.message = what;
    m.status = "partial";
    m.failure = {{"kind", kind}, {"message", what}};
  };
  try {
    execute(config, options, output);
    m.status = "complete";
  } catch (const TrainingError& e) {
    fail(kExitNumerical, "numerical", e.what());
    m.failure["task"] = e.where().task;
    m.failure["epoch"] = e.where().epoch;
    m.failure["index"] = e.where().index;
  } catch (const FitError& e) {
    fail(kExitNumerical, "numerical", e.what());
    m.failure["condition_estimate"] = e.condition_estimate();
  } catch (const DomainError& e) {
    fail(kExitNumerical, "numerical", e.what());
  } catch (const InternalConsistencyError& e) {
    fail(kExitNumerical, "consistency", e.what());
  } catch (const ConfigError& e) {
    fail(kExitConfig, "config", e.what());
  } catch (const UsageError& e) {
    fail(kExitConfig, "config", e.what());
  } catch (const FormatError& e) {
    fail(kExitIo, "input-format", std::string(e.what()) + " (field " + e.field() + ")");
  } catch (const DataError& e) {
    fail(kExitIo, "input-data", e.what());
  } catch (const IoError& e) {
    fail(kExitIo, "io", e.what());
  }
  m.seeds = output.seeds_used;
  m.finished_utc = utc_now();
  try {
    write_payload(staging, m, output);
    write_manifest(staging, m);
    std::error_code ec;
    fs::rename(staging, run_dir, ec);
    if (ec) throw IoError("cannot move " + staging.string() + " to " + run_dir.string() + ": " + ec.message());
  } catch (const IoError& e) {
    result.exit_code = kExitIo;
    result.message = e.what();
  }
  return result;
}

void save_bundle(const fs::path& path, const json& bundle) { write_file(path, bundle.dump(1) + "\n"); }

json load_bundle(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("bundle: ") + e.what(), "bundle");
  }
}

json ledger_to_json(const ForgettingLedger& ledger) {
  json loss = json::array();
  json acc = json::array();
  for (std::size_t t = 0; t < ledger.task_count(); ++t) {
    json lr = json::array();
    json ar = json::array();
    for (std::size_t i = 0; i < ledger.task_count(); ++i) {
      lr.push_back(ledger.loss(t, i));
      ar.push_back(ledger.accuracy(t, i));
    }
    loss.push_back(lr);
    acc.push_back(ar);
  }
  return {{"loss", loss}, {"accuracy", acc}};
}

ForgettingLedger ledger_from_json(const json& j) {
  try {
    const auto& loss = j.at("loss");
    const auto& acc = j.at("accuracy");
    ForgettingLedger ledger(loss.size());
    for (std::size_t t = 0; t < loss.size(); ++t) {
      if (loss[t].size() != loss.size() || acc[t].size() != loss.size()) {
        throw FormatError("ledger: ragged matrix", "loss");
      }
      for (std::size_t i = 0; i < loss.size(); ++i) {
        if (!loss[t][i].is_null()) ledger.loss(t, i) = loss[t][i].get<double>();
        if (!acc[t][i].is_null()) ledger.accuracy(t, i) = acc[t][i].get<double>();
      }
    }
    return ledger;
  } catch (const json::exception& e) {
    throw FormatError(std::string("ledger: ") + e.what(), "ledger");
  }
}

ReportCheck check_run(const fs::path& run_dir) {
  ReportCheck check;
  const std::string text = read_file(run_dir / "manifest.json");
  try {
    check.manifest = RunManifest::from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what(), "manifest");
  }
  for (const auto& f : check.manifest.files) {
    std::error_code ec;
    if (!fs::exists(run_dir / f.path, ec)) {
      check.problems.push_back("missing " + f.path);
      continue;
    }
    if (sha256_hex(read_file(run_dir / f.path)) != f.sha256) check.problems.push_back("checksum mismatch " + f.path);
  }
  return check;
}

std::string render_report(const fs::path& run_dir, const ReportCheck& check) {
  std::ostringstream out;
  const auto& m = check.manifest;
  out << "run        " << run_dir.string() << '\n'
      << "experiment " << m.config.value("experiment", "?") << '\n'
      << "status     " << m.status << '\n'
      << "version    " << m.code_version << '\n'
      << "started    " << m.started_utc << "\nfinished   " << m.finished_utc << '\n'
      << "files      " << m.files.size() << (check.problems.empty() ? " (checksums ok)" : "") << '\n';
  for (const auto& p : check.problems) out << "problem    " << p << '\n';
  if (!m.failure.is_null()) out << "failure    " << m.failure.dump() << '\n';
  static const std::vector<std::string> tables{
      "forgetting_summary.csv", "theorem1_summary.csv", "theorem2_summary.csv", "theorem3.csv",
      "corollary1.csv",         "saturation.csv",       "dimension_fits.csv",   "fragmentation_fits.csv"};
  for (const auto& name : tables) {
    std::error_code ec;
    if (!fs::exists(run_dir / name, ec)) continue;
    out << "\n== " << name << '\n' << read_file(run_dir / name);
  }
  return out.str();
}

}  // namespace kanforget::runner
