#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "mbplan/envs.hpp"
#include "mbplan/planning.hpp"
#include "mbplan/replay.hpp"

namespace mbplan::control {

using Eigen::VectorXd;

enum class PlannerKind { kCem, kAdam, kCemThenAdam };

struct MpcConfig {
  PlannerKind planner = PlannerKind::kCem;
  int horizon = 25;
  planning::CemConfig cem;
  planning::GradPlanConfig grad;
  planning::EvalConfig eval;
  // Warm start of the CEM sampling mean; the gradient planner follows
  // grad.warm_start.
  planning::WarmStartMode warm_start = planning::WarmStartMode::kShiftPrevious;
  planning::ShiftFill shift_fill = planning::ShiftFill::kRepeatLast;
  // Zero-mean Gaussian noise added to the executed first action, then clipped.
  double exploration_noise = 0.0;
};

// Per-step planner bookkeeping for learning-curve and gap metrics.
struct StepDiagnostics {
  double imagined_return = 0.0;  // plain G of the executed plan
  double mean_penalty = 0.0;     // mean regularizer penalty over plan windows
  bool fallback_cold = false;
  bool fallback_zero = false;
};

struct MpcResult {
  mbrl::Episode episode;
  std::vector<StepDiagnostics> steps;
};

// Closed-loop MPC: optimize, execute the first action, re-plan. A planner
// rejection falls back to one fresh cold-start attempt and then to a zero
// action; environment divergence truncates the episode with a flag.
MpcResult mpc_episode(const envs::EnvSpec& env,
                      const planning::ObjectiveSpec& objective,
                      const MpcConfig& cfg, std::uint64_t seed);

// Open-loop comparison of imagined and realized returns for one plan
// executed from state s0. Sequences are cumulative and share length H+1.
struct GapReport {
  VectorXd imagined;
  VectorXd realized;
  VectorXd penalties;  // regularizer penalty of the window starting per step
  double gap = 0.0;    // imagined minus realized at the horizon end
  bool env_diverged = false;
};

GapReport open_loop_eval(const envs::EnvSpec& env,
                         const planning::ObjectiveSpec& objective,
                         const planning::Plan& plan, const VectorXd& s0);

// Shared by the MPC loop and standalone studies: one planning call with the
// configured warm start; `previous` may be null.
planning::Plan plan_step(const planning::ObjectiveSpec& objective,
                         const MpcConfig& cfg, const planning::Bounds& bounds,
                         const VectorXd& start,
                         const planning::Plan* previous, std::uint64_t seed);

}  // namespace mbplan::control
