#include "mbplan/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace mbplan::envs {

namespace {

using ad::NodeId;
using ad::Tape;

VectorXd eval_row(const std::function<NodeId(Tape&)>& build) {
  Tape tape;
  const NodeId out = build(tape);
  return tape.value(out).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Cartpole swing-up

namespace cp = cartpole;

NodeId cartpole_step_node(Tape& t, NodeId s, NodeId a) {
  const double total = cp::kCartMass + cp::kPoleMass;
  const double ml = cp::kPoleMass * cp::kPoleLength;
  const NodeId x = t.slice_cols(s, 0, 1);
  const NodeId xd = t.slice_cols(s, 1, 1);
  const NodeId phi = t.slice_cols(s, 2, 1);
  const NodeId phid = t.slice_cols(s, 3, 1);
  const NodeId force = t.scale(a, cp::kForceScale);
  const NodeId sinp = t.sin(phi);
  const NodeId cosp = t.cos(phi);
  const NodeId temp = t.scale(
      t.add(force, t.scale(t.mul(t.square(phid), sinp), ml)), 1.0 / total);
  const NodeId num =
      t.sub(t.sub(t.scale(sinp, cp::kGravity), t.mul(cosp, temp)),
            t.scale(phid, cp::kPoleDamping));
  const NodeId den = t.scale(
      t.shift(t.scale(t.square(cosp), -cp::kPoleMass / total), 4.0 / 3.0),
      cp::kPoleLength);
  const NodeId phiacc = t.div(num, den);
  const NodeId xacc =
      t.sub(t.sub(temp, t.scale(t.mul(phiacc, cosp), ml / total)),
            t.scale(xd, cp::kCartDamping));
  // Semi-implicit Euler: velocities first, then positions with the new
  // velocities. Keeps the unactuated swing from gaining energy.
  const NodeId xd1 = t.add(xd, t.scale(xacc, cp::kDt));
  const NodeId phid1 = t.add(phid, t.scale(phiacc, cp::kDt));
  const NodeId x1 = t.add(x, t.scale(xd1, cp::kDt));
  const NodeId phi1 = t.add(phi, t.scale(phid1, cp::kDt));
  const NodeId parts[] = {x1, xd1, phi1, phid1};
  return t.concat_cols(parts);
}

NodeId cartpole_observe_node(Tape& t, NodeId s) {
  const NodeId phi = t.slice_cols(s, 2, 1);
  const NodeId parts[] = {t.slice_cols(s, 0, 1), t.slice_cols(s, 1, 1),
                          t.sin(phi), t.cos(phi), t.slice_cols(s, 3, 1)};
  return t.concat_cols(parts);
}

constexpr double kCpRewardScale = cp::kPoleLength * cp::kPoleLength;
constexpr double kCpActionCost = 0.01;

NodeId cartpole_reward_node(Tape& t, NodeId obs, NodeId act) {
  const NodeId x = t.slice_cols(obs, 0, 1);
  const NodeId sinp = t.slice_cols(obs, 2, 1);
  const NodeId cosp = t.slice_cols(obs, 3, 1);
  const NodeId tip_x = t.add(x, t.scale(sinp, cp::kPoleLength));
  const NodeId tip_dy = t.scale(t.shift(cosp, -1.0), cp::kPoleLength);
  const NodeId d2 = t.add(t.square(tip_x), t.square(tip_dy));
  const NodeId shaped = t.exp(t.scale(d2, -1.0 / kCpRewardScale));
  return t.sub(shaped, t.scale(t.rowsum(t.square(act)), kCpActionCost));
}

// ---------------------------------------------------------------------------
// Point reacher (2-D double integrator, goal carried in the state)

constexpr double kReacherDt = 0.1;

NodeId reacher_step_node(Tape& t, NodeId s, NodeId a) {
  const NodeId p = t.slice_cols(s, 0, 2);
  const NodeId v = t.slice_cols(s, 2, 2);
  const NodeId goal = t.slice_cols(s, 4, 2);
  // Position integrates the old velocity, so coasting follows the exact
  // closed form p_n = p_0 + n dt v_0.
  const NodeId p1 = t.add(p, t.scale(v, kReacherDt));
  const NodeId v1 = t.add(v, t.scale(a, kReacherDt));
  const NodeId parts[] = {p1, v1, goal};
  return t.concat_cols(parts);
}

NodeId reacher_reward_node(Tape& t, NodeId obs, NodeId /*act*/) {
  const NodeId dp = t.sub(t.slice_cols(obs, 0, 2), t.slice_cols(obs, 4, 2));
  return t.neg(t.rowsum(t.square(dp)));
}

// ---------------------------------------------------------------------------
// Reactor surrogate

namespace rx {
constexpr double kDt = 0.1;
constexpr double kFeedIn = 1.0;
constexpr double kFeedOut = 0.7;
constexpr double kLevelLeak = 0.05;
constexpr double kLevelEps = 0.01;
constexpr double kPressIn = 0.8;
constexpr double kPressGamma = 0.5;
constexpr double kPressOut = 0.8;
constexpr double kPressLeak = 0.05;
constexpr double kCompRate = 0.6;
constexpr double kCompFeed = 1.0;
constexpr double kReactRate = 0.3;
constexpr double kBarrierGain = 2.0;
constexpr double kBarrierWidth = 0.02;

struct Equilibrium {
  double level, pressure, comp;
  Equilibrium() {
    const double u = reactor::kEquilibriumValve;
    const double root = kFeedIn * u / (kFeedOut * (u + kLevelLeak));
    level = root * root - kLevelEps;
    const double a = kPressIn * u;
    const double b = kPressIn * u * kPressGamma;
    const double d = kPressOut * (u + kPressLeak);
    const double beta = kReactRate * a + kCompRate * u * d;
    const double qa = kReactRate * b;
    const double qc = -kCompRate * u * kCompFeed * d;
    comp = (-beta + std::sqrt(beta * beta - 4.0 * qa * qc)) / (2.0 * qa);
    pressure = (a + b * comp) / d;
  }
};
const Equilibrium kEq;
}  // namespace rx

NodeId reactor_step_node(Tape& t, NodeId s, NodeId a) {
  const NodeId level = t.slice_cols(s, 0, 1);
  const NodeId press = t.slice_cols(s, 1, 1);
  const NodeId comp = t.slice_cols(s, 2, 1);
  const NodeId u1 = t.slice_cols(a, 0, 1);
  const NodeId u2 = t.slice_cols(a, 1, 1);
  const NodeId outflow = t.mul(t.shift(u2, rx::kLevelLeak),
                               t.sqrt(t.shift(level, rx::kLevelEps)));
  const NodeId level_dot =
      t.sub(t.scale(u1, rx::kFeedIn), t.scale(outflow, rx::kFeedOut));
  const NodeId press_dot =
      t.sub(t.scale(t.mul(u1, t.shift(t.scale(comp, rx::kPressGamma), 1.0)),
                    rx::kPressIn),
            t.scale(t.mul(t.shift(u2, rx::kPressLeak), press), rx::kPressOut));
  const NodeId comp_dot =
      t.sub(t.scale(t.mul(u1, t.shift(t.neg(comp), rx::kCompFeed)),
                    rx::kCompRate),
            t.scale(t.mul(comp, press), rx::kReactRate));
  const NodeId dots[] = {level_dot, press_dot, comp_dot};
  return t.add(s, t.scale(t.concat_cols(dots), rx::kDt));
}

NodeId reactor_reward_node(Tape& t, NodeId obs, NodeId /*act*/) {
  const NodeId dl = t.shift(t.slice_cols(obs, 0, 1), -rx::kEq.level);
  const NodeId dp = t.shift(t.slice_cols(obs, 1, 1), -rx::kEq.pressure);
  const NodeId dc = t.shift(t.slice_cols(obs, 2, 1), -rx::kEq.comp);
  const NodeId dist = t.add(t.add(t.square(dl), t.square(dp)), t.square(dc));
  const NodeId over = t.scale(
      t.shift(t.slice_cols(obs, 1, 1), -reactor::kPressureLimit),
      1.0 / rx::kBarrierWidth);
  const NodeId barrier = t.scale(t.softplus(over), rx::kBarrierGain);
  return t.neg(t.add(dist, barrier));
}

}  // namespace

VectorXd step(const EnvSpec& spec, const VectorXd& state,
              const VectorXd& action) {
  return eval_row([&](Tape& t) {
    return spec.step_node(t, t.leaf(state.transpose()),
                          t.leaf(action.transpose()));
  });
}

VectorXd observe(const EnvSpec& spec, const VectorXd& state) {
  return eval_row(
      [&](Tape& t) { return spec.observe_node(t, t.leaf(state.transpose())); });
}

double reward(const EnvSpec& spec, const VectorXd& obs,
              const VectorXd& action) {
  return eval_row([&](Tape& t) {
           return spec.reward_node(t, t.leaf(obs.transpose()),
                                   t.leaf(action.transpose()));
         })(0);
}

bool state_finite(const VectorXd& state) { return state.allFinite(); }

EnvSpec cartpole_swingup() {
  EnvSpec e;
  e.id = "cartpole";
  e.state_dim = 4;
  e.obs_dim = 5;
  e.act_dim = 1;
  e.act_low = VectorXd::Constant(1, -1.0);
  e.act_high = VectorXd::Constant(1, 1.0);
  e.episode_len = 200;
  e.step_node = cartpole_step_node;
  e.observe_node = cartpole_observe_node;
  e.reward_node = cartpole_reward_node;
  e.init_state = [](Rng& rng) {
    VectorXd s(4);
    s(0) = rng.uniform(-0.05, 0.05);
    s(1) = rng.uniform(-0.05, 0.05);
    s(2) = M_PI + rng.uniform(-0.05, 0.05);
    s(3) = rng.uniform(-0.05, 0.05);
    return s;
  };
  return e;
}

EnvSpec point_reacher() {
  EnvSpec e;
  e.id = "reacher2d";
  e.state_dim = 6;
  e.obs_dim = 6;
  e.act_dim = 2;
  e.act_low = VectorXd::Constant(2, -1.0);
  e.act_high = VectorXd::Constant(2, 1.0);
  e.episode_len = 150;
  e.step_node = reacher_step_node;
  e.observe_node = [](Tape& t, NodeId s) { return s; };
  e.reward_node = reacher_reward_node;
  e.init_state = [](Rng& rng) {
    VectorXd s(6);
    s(0) = rng.uniform(-0.5, 0.5);
    s(1) = rng.uniform(-0.5, 0.5);
    s(2) = 0.0;
    s(3) = 0.0;
    s(4) = rng.uniform(-0.8, 0.8);
    s(5) = rng.uniform(-0.8, 0.8);
    return s;
  };
  return e;
}

EnvSpec reactor_surrogate() {
  EnvSpec e;
  e.id = "reactor";
  e.state_dim = 3;
  e.obs_dim = 3;
  e.act_dim = 2;
  e.act_low = VectorXd::Zero(2);
  e.act_high = VectorXd::Constant(2, 1.0);
  e.episode_len = 300;
  e.step_node = reactor_step_node;
  e.observe_node = [](Tape& t, NodeId s) { return s; };
  e.reward_node = reactor_reward_node;
  e.init_state = [](Rng& rng) {
    VectorXd s(3);
    s(0) = rng.uniform(1.0, 1.4);
    s(1) = rng.uniform(0.7, 0.9);
    s(2) = rng.uniform(0.3, 0.4);
    return s;
  };
  return e;
}

EnvSpec make_env(const std::string& id) {
  if (id == "cartpole") return cartpole_swingup();
  if (id == "reacher2d") return point_reacher();
  if (id == "reactor") return reactor_surrogate();
  throw std::invalid_argument("unknown env id: " + id);
}

std::vector<std::string> env_ids() { return {"cartpole", "reacher2d", "reactor"}; }

namespace cartpole {

double tip_distance(const VectorXd& state) {
  const double tip_x = state(0) + kPoleLength * std::sin(state(2));
  const double tip_y = kPoleLength * std::cos(state(2));
  return std::sqrt(tip_x * tip_x + (tip_y - kPoleLength) * (tip_y - kPoleLength));
}

double energy(const VectorXd& state) {
  const double xd = state(1);
  const double phi = state(2);
  const double phid = state(3);
  const double l = kPoleLength;
  const double m = kPoleMass;
  const double vcm2 = xd * xd + 2.0 * l * phid * xd * std::cos(phi) +
                      l * l * phid * phid;
  const double inertia = m * l * l / 3.0;
  return 0.5 * kCartMass * xd * xd + 0.5 * m * vcm2 +
         0.5 * inertia * phid * phid + m * kGravity * l * std::cos(phi);
}

}  // namespace cartpole

namespace reactor {
const double kSetpoint[3] = {rx::kEq.level, rx::kEq.pressure, rx::kEq.comp};
}  // namespace reactor

}  // namespace mbplan::envs
