#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "isoscope/experiments.hpp"

namespace isoscope {

struct CliCommand {
  std::string subcommand;
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path out_dir;
  std::filesystem::path sigma_s;
  std::filesystem::path config;
  std::filesystem::path data;
  std::string estimator = "unbiased";
  double zeta = 0.0;
  double discard = 0.1;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::int64_t pairs = 100000;
  std::uint64_t seed = 0;
  int classes = 4;
  std::int64_t dim = 16;
  std::int64_t per_class = 1000;
  double spread = 3.0;
  std::string experiment;
  std::vector<std::uint64_t> seeds;
  std::string help_text;  // non-empty when --help was requested
};

inline const std::vector<std::string> kExperimentNames = {"stability",      "stability-full", "zeta",
                                                         "lambda",         "cosreg-mean",    "layer-isotropy",
                                                         "layer-scope",    "id-lambda"};

/// Throws Error with a usage-category code on bad input.
CliCommand parse_cli(int argc, const char* const* argv);

/// Executes a parsed command; returns the process exit code.
int run_command(const CliCommand& cmd, std::ostream& out, std::ostream& err);

/// parse + run with exit-code mapping (0 ok, 2 usage, 3 data, 4 numerical).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Task configuration from JSON; numeric fields may be decimal strings or numbers.
TaskConfig task_config_from_json(const nlohmann::json& j);

}  // namespace isoscope
