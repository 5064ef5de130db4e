#pragma once

#include <string>
#include <vector>

#include "mbplan/models.hpp"
#include "mbplan/replay.hpp"

namespace mbplan::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Named invariant suites: "gradcheck", "dae-oracle", "cem-sanity",
// "env-checks", or "all". Unknown names throw.
std::vector<CheckResult> run_suite(const std::string& suite);
std::vector<std::string> suite_names();

// Building blocks reused by the acceptance tests.

// Worst relative error between reverse-mode and central-difference gradients
// over `count` random MLPs (both parameter and input gradients).
double gradcheck_random_mlps(int count, std::uint64_t seed);
// Same for the full H-step regularized-return graph w.r.t. the actions.
double gradcheck_unrolled_objective(int horizon, std::uint64_t seed);

// Trains a DAE on 1-D standard-normal data and fits the slope of g over
// [-2, 2]; the analytic posterior-mean slope is 1/(1 + sigma^2).
struct DaeOracleResult {
  models::Denoiser denoiser;
  double slope = 0.0;
  double max_miyasawa_rel_err = 0.0;  // vs sigma^2 * score over |x| <= 2
};
DaeOracleResult dae_gaussian_oracle(double sigma_n, std::uint64_t seed);

// Synthetic 1-D buffer of standard-normal observations (no actions).
mbrl::ReplayBuffer gaussian_buffer(int episodes, int steps, std::uint64_t seed);

}  // namespace mbplan::verify
