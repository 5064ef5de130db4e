#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "mbplan/autodiff.hpp"
#include "mbplan/rng.hpp"

namespace mbplan::envs {

using Eigen::VectorXd;

// Analytic, deterministic, fully observable environment. Dynamics, the
// observation map and the reward are defined once as tape builders (batched,
// rows = candidates); the plain-number entry points below evaluate those same
// builders on a scratch tape, so a rollout imagined with the true dynamics
// reproduces reality bit for bit.
struct EnvSpec {
  std::string id;
  int state_dim = 0;
  int obs_dim = 0;
  int act_dim = 0;
  VectorXd act_low;
  VectorXd act_high;
  int episode_len = 0;

  // [B,state] x [B,act] -> [B,state]
  std::function<ad::NodeId(ad::Tape&, ad::NodeId, ad::NodeId)> step_node;
  // [B,state] -> [B,obs]
  std::function<ad::NodeId(ad::Tape&, ad::NodeId)> observe_node;
  // [B,obs] x [B,act] -> [B,1]
  std::function<ad::NodeId(ad::Tape&, ad::NodeId, ad::NodeId)> reward_node;
  std::function<VectorXd(Rng&)> init_state;
};

// Single-state wrappers over the tape builders.
VectorXd step(const EnvSpec& spec, const VectorXd& state, const VectorXd& action);
VectorXd observe(const EnvSpec& spec, const VectorXd& state);
double reward(const EnvSpec& spec, const VectorXd& obs, const VectorXd& action);

bool state_finite(const VectorXd& state);

// Pole on a cart, swing-up from hanging. State (x, xdot, phi, phidot) with
// phi measured from upright; obs (x, xdot, sin phi, cos phi, phidot).
// Reward peaks with the pole tip at the target above the track center.
EnvSpec cartpole_swingup();

// 2-D double integrator. State/obs (px, py, vx, vy, gx, gy); the goal part is
// constant within an episode and resampled by the initial-state sampler.
// Reward -|p - goal|^2, action = acceleration.
EnvSpec point_reacher();

// Qualitative nonlinear tank/reactor surrogate. State (level, pressure,
// composition), two valve actions in [0,1]; setpoint tracking with a smooth
// barrier above the pressure limit.
EnvSpec reactor_surrogate();

// Lookup by id: "cartpole", "reacher2d", "reactor".
EnvSpec make_env(const std::string& id);
std::vector<std::string> env_ids();

// Cartpole helpers used by tests and threshold calibration.
namespace cartpole {
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kPoleLength = 0.6;
constexpr double kGravity = 9.8;
constexpr double kDt = 0.05;
constexpr double kForceScale = 10.0;
constexpr double kCartDamping = 0.1;
constexpr double kPoleDamping = 0.02;

// Distance from pole tip to the upright target.
double tip_distance(const VectorXd& state);
// Total mechanical energy (cart + uniform rod of half-length kPoleLength).
double energy(const VectorXd& state);
}  // namespace cartpole

namespace reactor {
// Equilibrium of the surrogate dynamics under valves (0.5, 0.5); also the
// tracking setpoint of the reward.
extern const double kSetpoint[3];
constexpr double kPressureLimit = 1.5;
constexpr double kEquilibriumValve = 0.5;
}  // namespace reactor

}  // namespace mbplan::envs
