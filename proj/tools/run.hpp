#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace cli {

/// Exit codes of the front end.
enum ExitCode : int { kOk = 0, kSolverFailure = 2, kConfigError = 3, kVerifyFailure = 4 };

struct RunOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force_oracle = false;
  bool verify = false;
};

struct Check {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct RunOutcome {
  RunParams params;
  int exit_code = kOk;
  std::string status;  // solver status or error code
  std::string error;
  double c_star = 0.0, p_star = 0.0, objective = 0.0;
  std::vector<Check> checks;
};

/// Solves one parameter point and writes report.json and the CSV files into dir.
RunOutcome run_one(const ExperimentConfig& cfg, const RunParams& params, const RunOptions& opts,
                   const std::filesystem::path& dir);

/// Directory name of a sweep point, e.g. "gamma=0.2_sigma=0.1".
std::string run_label(const ExperimentConfig& cfg, const RunParams& params);

/// Runs every combination in parallel (GAUSS_UDC_THREADS caps the workers),
/// one subdirectory each, and writes summary.csv into dir.
std::vector<RunOutcome> run_sweep(const ExperimentConfig& cfg, const RunOptions& opts, const std::filesystem::path& dir);

/// Worst exit code of a set of runs.
int combined_exit(const std::vector<RunOutcome>& runs);

/// Shortest decimal that parses back to the same double.
std::string format_double(double x);

}  // namespace cli
