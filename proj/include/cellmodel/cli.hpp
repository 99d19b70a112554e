// Batch commands behind the command-line tool. Each command reads a resolved
// RunConfig, writes its outputs into the run directory and returns a JSON
// summary of what it did.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellmodel/core.hpp"
#include "cellmodel/plant.hpp"

namespace cellmodel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter file's family or cell does not fit the trace it is applied to.
class FamilyMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Process exit codes. Zero only when every output was written.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitIo = 2,
  kExitConfig = 3,
  kExitRankDeficient = 4,
  kExitCovarianceBlowUp = 5,
  kExitEmptyBin = 6,
  kExitDomain = 7,
  kExitFamilyMismatch = 8,
};

/// Maps the exception currently being handled to an exit code.
int exit_code_for_current_exception();

const std::vector<std::string>& command_names();

/// Sectioned key/value configuration with every key resolved to a value.
class RunConfig {
 public:
  /// Starts from built-in defaults, then applies the config file text (if
  /// any), then `--set` overrides. Keys are "section.key" or a bare key of
  /// the command's own section. Unknown sections and keys are rejected.
  static RunConfig load(const std::string& command, const std::string& config_text,
                        const std::vector<std::string>& overrides, std::uint64_t seed,
                        std::filesystem::path out_dir);

  const std::string& command() const { return command_; }
  std::uint64_t seed() const { return seed_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  std::string text(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key) const;
  long integer(const std::string& section, const std::string& key) const;
  bool flag(const std::string& section, const std::string& key) const;
  std::vector<double> numbers(const std::string& section, const std::string& key) const;
  std::vector<std::string> texts(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Canonical text of the sections this command reads, plus the seed.
  std::string resolved_text() const;
  std::string hash() const;

  CellParams cell() const;
  ProfileSpec profile() const;
  SensorConfig sensor() const;

 private:
  std::string command_;
  std::uint64_t seed_ = 1;
  std::filesystem::path out_dir_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

nlohmann::json cmd_simulate(const RunConfig& cfg);
nlohmann::json cmd_fit(const RunConfig& cfg);
nlohmann::json cmd_validate(const RunConfig& cfg);
nlohmann::json cmd_soc(const RunConfig& cfg);
nlohmann::json cmd_sweep_kernels(const RunConfig& cfg);

/// Runs the named command: creates the run directory, echoes the resolved
/// config, executes, and writes manifest.json listing every output.
nlohmann::json run_command(const RunConfig& cfg);

}  // namespace cellmodel
