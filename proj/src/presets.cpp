#include "mbplan/presets.hpp"

#include <stdexcept>

namespace mbplan::presets {

HyperRow benchmark_hyperparams(const std::string& env, Optimizer opt) {
  const bool cem = opt == Optimizer::kCem;
  if (env == "cartpole") {
    return cem ? HyperRow{5, 500, 0.0, 0.001, 0.1}
               : HyperRow{10, 500, 0.001, 0.001, 0.2};
  }
  if (env == "reacher") {
    return cem ? HyperRow{5, 500, 0.0, 0.01, 0.1}
               : HyperRow{5, 300, 1.0, 0.01, 0.1};
  }
  if (env == "pusher") {
    return cem ? HyperRow{5, 500, 0.0, 0.01, 0.1}
               : HyperRow{5, 300, 1.0, 0.01, 0.1};
  }
  if (env == "half-cheetah") {
    return cem ? HyperRow{5, 100, 0.0, 2.0, 0.1}
               : HyperRow{10, 200, 0.1, 1.0, 0.2};
  }
  if (env == "ant") {
    return cem ? HyperRow{5, 400, 0.0, 0.045, 0.3}
               : HyperRow{10, 1000, 0.075, 0.03, 0.4};
  }
  throw std::invalid_argument("no benchmark hyperparameters for '" + env + "'");
}

int benchmark_horizon(const std::string& env) {
  if (env == "cartpole" || env == "reacher" || env == "pusher") return 25;
  if (env == "half-cheetah") return 30;
  if (env == "ant") return 35;
  throw std::invalid_argument("no benchmark horizon for '" + env + "'");
}

std::pair<int, int> benchmark_dims(const std::string& env) {
  if (env == "cartpole") return {5, 1};
  if (env == "reacher") return {17, 7};
  if (env == "pusher") return {20, 7};
  if (env == "half-cheetah") return {19, 6};
  if (env == "ant") return {111, 8};
  throw std::invalid_argument("no benchmark dims for '" + env + "'");
}

int benchmark_cem_init_iters(const std::string& env) {
  if (env == "reacher") return 2;
  if (env == "pusher") return 5;
  return 0;
}

mbrl::RunConfig desk_run_config(const std::string& env_id) {
  mbrl::RunConfig cfg;
  cfg.env_id = env_id;
  cfg.regularizer = mbrl::RegularizerKind::kDae;
  cfg.mpc.planner = control::PlannerKind::kCem;
  cfg.mpc.eval.chunk = 64;

  if (env_id == "cartpole") {
    const HyperRow row = benchmark_hyperparams("cartpole", Optimizer::kCem);
    cfg.episodes = 15;
    cfg.random_episodes = 1;
    cfg.model_train = {row.epochs, 64, 1e-3, 0};
    cfg.dae_train = {row.dae_sigma, 1, 150, 64, 1e-3, 0};
    cfg.alpha = row.alpha;
    cfg.mpc.horizon = benchmark_horizon("cartpole");
    cfg.mpc.cem.iterations = row.optim_iters;
    cfg.mpc.cem.population = 160;
    cfg.mpc.cem.elites = 16;
    cfg.mpc.grad = {10, 0.1, 1, planning::WarmStartMode::kShiftPrevious, 2};
    cfg.mpc.exploration_noise = 0.01;
    return cfg;
  }
  if (env_id == "reacher2d") {
    const HyperRow row = benchmark_hyperparams("reacher", Optimizer::kCem);
    cfg.episodes = 10;
    cfg.random_episodes = 1;
    cfg.model_train = {300, 64, 1e-3, 0};
    cfg.dae_train = {row.dae_sigma, 1, 120, 64, 1e-3, 0};
    cfg.alpha = row.alpha;
    cfg.mpc.horizon = benchmark_horizon("reacher");
    cfg.mpc.cem.iterations = row.optim_iters;
    cfg.mpc.cem.population = 128;
    cfg.mpc.cem.elites = 13;
    cfg.mpc.grad = {5, 0.1, 1, planning::WarmStartMode::kCemInit,
                    benchmark_cem_init_iters("reacher")};
    return cfg;
  }
  if (env_id == "reactor") {
    cfg.episodes = 10;
    cfg.random_episodes = 1;
    cfg.model_train = {300, 64, 1e-3, 0};
    cfg.dae_train = {0.1, 1, 120, 64, 1e-3, 0};
    cfg.alpha = 0.01;
    cfg.mpc.horizon = 25;
    cfg.mpc.cem.iterations = 5;
    cfg.mpc.cem.population = 128;
    cfg.mpc.cem.elites = 13;
    cfg.mpc.grad = {10, 0.05, 1, planning::WarmStartMode::kShiftPrevious, 2};
    return cfg;
  }
  throw std::invalid_argument("no desk config for env '" + env_id + "'");
}

}  // namespace mbplan::presets
