#include "mbplan/control.hpp"

#include <cmath>
#include <stdexcept>

namespace mbplan::control {

namespace {

using planning::ObjectiveSpec;
using planning::Plan;

planning::BatchObjective batch_objective(const ObjectiveSpec& objective,
                                         const VectorXd& start,
                                         const planning::EvalConfig& eval) {
  return [&objective, start, eval](const std::vector<Eigen::MatrixXd>& cands) {
    return planning::evaluate_plans(objective, start, cands, eval);
  };
}

Plan run_planner(const ObjectiveSpec& objective, const MpcConfig& cfg,
                 const planning::Bounds& bounds, const VectorXd& start,
                 const Plan* previous, std::uint64_t seed) {
  Plan center = planning::make_plan(cfg.horizon, bounds);
  const bool have_prev = previous != nullptr;

  auto shifted = [&](const Plan& p) {
    return planning::warm_start_shift(p, cfg.shift_fill);
  };

  auto run_cem = [&](const Plan& mean, int iterations) {
    planning::CemConfig cem = cfg.cem;
    cem.iterations = iterations;
    return planning::cem_optimize(batch_objective(objective, start, cfg.eval),
                                  mean, cem, Rng::mix(seed, 0xce));
  };

  switch (cfg.planner) {
    case PlannerKind::kCem: {
      const Plan mean =
          (cfg.warm_start == planning::WarmStartMode::kShiftPrevious &&
           have_prev)
              ? shifted(*previous)
              : center;
      return run_cem(mean, cfg.cem.iterations);
    }
    case PlannerKind::kAdam: {
      Plan init = center;
      switch (cfg.grad.warm_start) {
        case planning::WarmStartMode::kCold:
          break;
        case planning::WarmStartMode::kShiftPrevious:
          if (have_prev) init = shifted(*previous);
          break;
        case planning::WarmStartMode::kCemInit:
          init = run_cem(have_prev ? shifted(*previous) : center,
                         std::max(1, cfg.grad.cem_init_iters));
          break;
      }
      return planning::adam_optimize(objective, start, init, cfg.grad,
                                     Rng::mix(seed, 0xad));
    }
    case PlannerKind::kCemThenAdam: {
      const Plan mean =
          (cfg.warm_start == planning::WarmStartMode::kShiftPrevious &&
           have_prev)
              ? shifted(*previous)
              : center;
      const Plan cem_out = run_cem(mean, cfg.cem.iterations);
      return planning::adam_optimize(objective, start, cem_out, cfg.grad,
                                     Rng::mix(seed, 0xad));
    }
  }
  throw std::logic_error("unreachable planner kind");
}

}  // namespace

planning::Plan plan_step(const ObjectiveSpec& objective, const MpcConfig& cfg,
                         const planning::Bounds& bounds, const VectorXd& start,
                         const Plan* previous, std::uint64_t seed) {
  return run_planner(objective, cfg, bounds, start, previous, seed);
}

MpcResult mpc_episode(const envs::EnvSpec& env, const ObjectiveSpec& objective,
                      const MpcConfig& cfg, std::uint64_t seed) {
  if (cfg.horizon < 1) {
    throw std::invalid_argument("mpc: horizon must be >= 1");
  }
  const int T = env.episode_len;
  const planning::Bounds bounds{env.act_low, env.act_high};

  Rng rng(Rng::mix(seed, 0xe9));
  VectorXd state = env.init_state(rng);

  MpcResult out;
  out.episode.observations.resize(T + 1, env.obs_dim);
  out.episode.actions.resize(T, env.act_dim);
  out.episode.rewards.resize(T);

  Plan prev;
  bool have_prev = false;
  int done_steps = 0;

  for (int t = 0; t < T; ++t) {
    const VectorXd obs = envs::observe(env, state);
    const VectorXd start =
        objective.dynamics->uses_env_state() ? state : obs;

    StepDiagnostics diag;
    Plan plan;
    const std::uint64_t step_seed = Rng::mix(seed, 7919 * t + 1);
    try {
      plan = run_planner(objective, cfg, bounds, start,
                         have_prev ? &prev : nullptr, step_seed);
    } catch (const std::runtime_error&) {
      diag.fallback_cold = true;
      try {
        plan = run_planner(objective, cfg, bounds, start, nullptr,
                           Rng::mix(step_seed, 0xf1));
      } catch (const std::runtime_error&) {
        diag.fallback_zero = true;
        plan = planning::make_plan(cfg.horizon, bounds);
        plan.actions.setZero();
        plan.clip();
      }
    }

    {
      ad::Tape tape;
      const planning::RolloutGraph g =
          planning::build_rollout(tape, objective, start, {plan.actions});
      diag.imagined_return = tape.value(g.ret)(0, 0);
      if (objective.regularized()) {
        const double total =
            (tape.value(g.ret)(0, 0) - tape.value(g.reg_ret)(0, 0)) /
            objective.alpha;
        const int n_windows = plan.steps() - objective.window + 1;
        diag.mean_penalty = n_windows > 0 ? total / n_windows : 0.0;
      }
    }
    out.steps.push_back(diag);

    VectorXd action = plan.actions.row(0).transpose();
    if (cfg.exploration_noise > 0.0) {
      for (int d = 0; d < env.act_dim; ++d) {
        action(d) += cfg.exploration_noise * rng.gaussian();
      }
      action = action.cwiseMax(env.act_low).cwiseMin(env.act_high);
    }

    const double r = envs::reward(env, obs, action);
    out.episode.observations.row(t) = obs.transpose();
    out.episode.actions.row(t) = action.transpose();
    out.episode.rewards(t) = r;
    done_steps = t + 1;

    const VectorXd next = envs::step(env, state, action);
    if (!envs::state_finite(next)) {
      out.episode.diverged = true;
      out.episode.truncated = true;
      break;
    }
    state = next;
    prev = plan;
    have_prev = true;
  }

  out.episode.observations.row(done_steps) = envs::observe(env, state).transpose();
  if (done_steps < T) {
    out.episode.observations.conservativeResize(done_steps + 1, Eigen::NoChange);
    out.episode.actions.conservativeResize(done_steps, Eigen::NoChange);
    out.episode.rewards.conservativeResize(done_steps);
    out.episode.truncated = true;
  }
  return out;
}

GapReport open_loop_eval(const envs::EnvSpec& env,
                         const ObjectiveSpec& objective,
                         const planning::Plan& plan, const VectorXd& s0) {
  const int steps = plan.steps();
  GapReport rep;
  rep.imagined.resize(steps);
  rep.realized.resize(steps);
  rep.penalties = VectorXd::Zero(steps);

  // Imagined side: rewards along the model rollout, plus regularizer
  // penalties per window when a regularizer is configured.
  {
    ad::Tape tape;
    const VectorXd start =
        objective.dynamics->uses_env_state() ? s0 : envs::observe(env, s0);
    auto ctx = objective.dynamics->begin(tape);
    models::DenoiserAttached dae_at;
    if (objective.dae != nullptr) {
      dae_at = models::attach_denoiser(tape, *objective.dae);
    }
    ad::NodeId carrier = objective.dynamics->init(tape, *ctx, start, 1);
    std::vector<ad::NodeId> obs_nodes, act_nodes;
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) {
      const ad::NodeId a = tape.leaf(plan.actions.row(k));
      const ad::NodeId obs = objective.dynamics->to_obs(tape, *ctx, carrier);
      obs_nodes.push_back(obs);
      act_nodes.push_back(a);
      acc += tape.value(objective.reward(tape, obs, a))(0, 0);
      rep.imagined(k) = acc;
      if (k + 1 < steps) {
        carrier = objective.dynamics->advance(tape, *ctx, carrier, a);
      }
    }
    const int w = objective.window;
    for (int tau = 0; tau + w <= steps; ++tau) {
      std::vector<ad::NodeId> parts;
      for (int k = 0; k < w; ++k) {
        parts.push_back(obs_nodes[tau + k]);
        parts.push_back(act_nodes[tau + k]);
      }
      const ad::NodeId window = tape.concat_cols(parts);
      if (objective.dae != nullptr) {
        rep.penalties(tau) =
            tape.value(models::dae_penalty(tape, dae_at, window, false))(0, 0);
      } else if (objective.gaussian != nullptr) {
        rep.penalties(tau) = tape.value(
            models::gaussian_penalty(tape, *objective.gaussian, window))(0, 0);
      }
    }
  }

  // Realized side: the same actions stepped through the true environment.
  {
    VectorXd state = s0;
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) {
      const VectorXd obs = envs::observe(env, state);
      const VectorXd action = plan.actions.row(k).transpose();
      acc += envs::reward(env, obs, action);
      rep.realized(k) = acc;
      if (k + 1 < steps) {
        const VectorXd next = envs::step(env, state, action);
        if (!envs::state_finite(next)) {
          rep.env_diverged = true;
          for (int j = k + 1; j < steps; ++j) rep.realized(j) = acc;
          break;
        }
        state = next;
      }
    }
  }

  rep.gap = rep.imagined(steps - 1) - rep.realized(steps - 1);
  return rep;
}

}  // namespace mbplan::control
