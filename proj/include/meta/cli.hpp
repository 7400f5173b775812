#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "meta/backtest.hpp"
#include "meta/data.hpp"
#include "meta/model.hpp"
#include "meta/training.hpp"

namespace meta {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitInput = 2, kExitRuntime = 3 };

// Everything a subcommand may need, after merging defaults, the config file
// and command-line flags (in that order of precedence, lowest first).
struct Settings {
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig train;
  ScheduleConfig schedule;
  std::size_t threads = 0;
  bool warm_start = false;
  bool verbose = false;

  BacktestConfig backtest() const;
};

// Parses a line-based key=value file. Blank lines and lines starting with '#'
// are ignored. Throws InputError for a missing file and ConfigError for a
// malformed line.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Applies one key=value pair; throws ConfigError for an unknown key or a value
// that does not parse.
void apply_setting(Settings& settings, const std::string& key, const std::string& value);

// Keys accepted by apply_setting (and, with '_' replaced by '-', as flags).
const std::vector<std::string>& setting_keys();

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace meta
