#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

#include "dialcot/config.hpp"
#include "dialcot/report.hpp"

namespace dialcot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitMissingGold = 4;
inline constexpr int kExitShape = 5;

int exit_code_for(const std::exception& e);

struct RunOutcome {
  AccuracyReport report;
  std::vector<Transcript> transcripts;  ///< successful runs only, in problem order
};

/// Greedy selection with the configured strategy over every problem. Writes
/// transcripts/<id>.json and report.json under the output directory.
RunOutcome cmd_run(const RunConfig& config, std::ostream& log);

/// Writes policy.ckpt, metrics.jsonl and curve.csv. The synthetic backend
/// trains on generated problems; other backends need dataset.path.
TrainResult cmd_train_ppo(const RunConfig& config, std::ostream& log);

/// Greedy top-1 against the checkpoint's policy on the same problems and
/// candidate sets. Writes report.json.
SelectorComparison cmd_eval(const RunConfig& config, const std::string& checkpoint_path, std::ostream& log);

/// Trains and evaluates one policy per k, writing k_sweep.csv.
std::vector<KSweepRow> cmd_k_sweep(const RunConfig& config, const std::vector<int>& ks, std::ostream& log);

/// Writes `count` generated problems as JSONL to `output_path`.
void cmd_gen_synthetic(const RunConfig& config, std::size_t count, const std::string& output_path);

/// Pretty-prints a report.json, curve.csv or k_sweep.csv after validating it.
void cmd_report(const std::string& path, std::ostream& out);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dialcot
