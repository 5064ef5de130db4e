#pragma once

#include <string>

#include "mbplan/mbrl.hpp"

namespace mbplan::presets {

// Published hyperparameter tables for the benchmark suite this toolkit's
// defaults were taken from. Environments beyond the built-in ones are listed
// for reference and config lookup only.
struct HyperRow {
  int optim_iters = 0;
  int epochs = 0;
  double adam_lr = 0.0;  // 0 for the CEM rows
  double alpha = 0.0;
  double dae_sigma = 0.0;
};

enum class Optimizer { kCem, kAdam };

// Known envs: "cartpole", "reacher", "pusher", "half-cheetah", "ant".
HyperRow benchmark_hyperparams(const std::string& env, Optimizer opt);
int benchmark_horizon(const std::string& env);
// (obs dim, act dim) of the benchmark environments.
std::pair<int, int> benchmark_dims(const std::string& env);
// CEM iterations used to initialize gradient-based planning (0 = none).
int benchmark_cem_init_iters(const std::string& env);

// Tuned defaults for the built-in analytic environments ("cartpole",
// "reacher2d", "reactor"), sized for a 2-core desk budget.
mbrl::RunConfig desk_run_config(const std::string& env_id);

}  // namespace mbplan::presets
