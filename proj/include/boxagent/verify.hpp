#pragma once

// Executable checks for the library's headline properties. Each returns a
// pass/fail verdict with a one-line detail; `selftest` and the acceptance
// binary both run them.

#include <cstdint>
#include <string>
#include <vector>

namespace boxagent::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// "[PASS] 3 agent geometry (0.1s): detail"
std::string format(const CheckResult& r);

CheckResult check_gradients();
CheckResult check_matching();
CheckResult check_agent_geometry();
CheckResult check_reduction();
CheckResult check_whm_identity();
CheckResult check_positional_argmax();
CheckResult check_parameter_overhead();

struct TrainingCheckOptions {
  std::string out_dir = "acceptance_runs";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t jobs = 1;
  // Per-run wall-clock budget.
  double max_run_seconds = 30.0 * 60.0;
};

// Trains center, agent-unnormalized and agent-noscale on the reference
// config for every seed (writing under out_dir/convergence).
CheckResult check_convergence(const TrainingCheckOptions& opt);
// Two identical short runs must give byte-identical curve CSVs.
CheckResult check_determinism(const TrainingCheckOptions& opt);
// Reads the walker stats written by check_convergence's agent-unnormalized
// runs.
CheckResult check_walker_stats(const TrainingCheckOptions& opt);

// Checks that need no training.
std::vector<CheckResult> run_fast_checks();

}  // namespace boxagent::verify
