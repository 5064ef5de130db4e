#include "mbplan/verify.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mbplan/control.hpp"
#include "mbplan/envs.hpp"
#include "mbplan/planning.hpp"

namespace mbplan::verify {

namespace {

using ad::NodeId;
using ad::Tape;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << std::scientific << v;
  return ss.str();
}

CheckResult check(const std::string& name, bool pass, const std::string& detail) {
  return {name, pass, detail};
}

// --------------------------------------------------------------------------
// gradcheck

VectorXd flatten_params(const ad::MlpParams& p, const VectorXd& input) {
  long n = input.size();
  for (const auto& l : p.layers) n += l.w.size() + l.b.size();
  VectorXd flat(n);
  long at = 0;
  for (const auto& l : p.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) flat(at++) = l.w(r, c);
    }
    for (Eigen::Index c = 0; c < l.b.cols(); ++c) flat(at++) = l.b(0, c);
  }
  flat.tail(input.size()) = input;
  return flat;
}

void unflatten_params(const VectorXd& flat, ad::MlpParams& p, VectorXd& input) {
  long at = 0;
  for (auto& l : p.layers) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = flat(at++);
    }
    for (Eigen::Index c = 0; c < l.b.cols(); ++c) l.b(0, c) = flat(at++);
  }
  input = flat.tail(input.size());
}

}  // namespace

double gradcheck_random_mlps(int count, std::uint64_t seed) {
  double worst = 0.0;
  for (int trial = 0; trial < count; ++trial) {
    Rng rng(Rng::mix(seed, trial));
    const int in_dim = 2 + static_cast<int>(rng.below(4));
    const int h = 5 + static_cast<int>(rng.below(8));
    const int out_dim = 1 + static_cast<int>(rng.below(3));
    const ad::Activation act =
        rng.below(2) == 0 ? ad::Activation::kSwish : ad::Activation::kTanh;
    ad::MlpParams params =
        ad::make_mlp(in_dim, {h, h}, out_dim, act, ad::Activation::kIdentity, rng);
    VectorXd input(in_dim);
    for (int i = 0; i < in_dim; ++i) input(i) = rng.gaussian();

    // Reverse mode: d(sum of outputs) / d(params, input).
    Tape tape;
    const ad::MlpAttached at = ad::attach_mlp(tape, params);
    const NodeId x = tape.leaf(input.transpose());
    const NodeId out = ad::mlp_apply(tape, at, x);
    tape.backward(tape.sum(out));

    VectorXd grad(flatten_params(params, input).size());
    long pos = 0;
    for (std::size_t l = 0; l < at.w.size(); ++l) {
      const ad::Mat& gw = tape.adjoint(at.w[l]);
      for (Eigen::Index r = 0; r < gw.rows(); ++r) {
        for (Eigen::Index c = 0; c < gw.cols(); ++c) grad(pos++) = gw(r, c);
      }
      const ad::Mat& gb = tape.adjoint(at.b[l]);
      for (Eigen::Index c = 0; c < gb.cols(); ++c) grad(pos++) = gb(0, c);
    }
    grad.tail(in_dim) = tape.adjoint(x).row(0).transpose();

    ad::MlpParams scratch = params;
    VectorXd scratch_in = input;
    const auto f = [&](const VectorXd& flat) {
      unflatten_params(flat, scratch, scratch_in);
      return ad::mlp_eval(scratch, scratch_in).sum();
    };
    const VectorXd fd = ad::finite_diff_grad(f, flatten_params(params, input));
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, rel_err(grad(i), fd(i)));
    }
  }
  return worst;
}

double gradcheck_unrolled_objective(int horizon, std::uint64_t seed) {
  Rng rng(seed);
  const int obs_dim = 3, act_dim = 2;

  models::DynamicsModel model;
  model.obs_dim = obs_dim;
  model.act_dim = act_dim;
  model.trunk = ad::make_mlp(obs_dim + act_dim, {16}, 16, ad::Activation::kSwish,
                             ad::Activation::kSwish, rng);
  model.mean_head = ad::make_mlp(16, {}, obs_dim, ad::Activation::kIdentity,
                                 ad::Activation::kIdentity, rng, 0.5);
  model.logvar_head = ad::make_mlp(16, {}, obs_dim, ad::Activation::kIdentity,
                                   ad::Activation::kIdentity, rng, 0.5);
  model.in_stats.mean = VectorXd::Zero(obs_dim + act_dim);
  model.in_stats.std = VectorXd::Ones(obs_dim + act_dim);
  model.delta_stats.mean = VectorXd::Zero(obs_dim);
  model.delta_stats.std = VectorXd::Ones(obs_dim);

  models::Denoiser dae;
  dae.obs_dim = obs_dim;
  dae.act_dim = act_dim;
  dae.window = 2;
  dae.sigma_n = 0.3;
  const int wdim = dae.window * (obs_dim + act_dim);
  dae.net = ad::make_mlp(wdim, {16}, wdim, ad::Activation::kSwish,
                         ad::Activation::kIdentity, rng, 0.5);
  dae.stats.mean = VectorXd::Zero(wdim);
  dae.stats.std = VectorXd::Ones(wdim);

  const planning::ModelDynamics dyn(model);
  planning::ObjectiveSpec spec;
  spec.dynamics = &dyn;
  spec.reward = [](Tape& t, NodeId obs, NodeId act) {
    return t.neg(t.add(t.rowsum(t.square(obs)),
                       t.scale(t.rowsum(t.square(act)), 0.1)));
  };
  spec.regularizer = planning::Regularizer::kDae;
  spec.dae = &dae;
  spec.alpha = 0.5;
  spec.window = dae.window;

  VectorXd s0(obs_dim);
  for (int i = 0; i < obs_dim; ++i) s0(i) = rng.gaussian();
  MatrixXd actions(horizon + 1, act_dim);
  for (Eigen::Index r = 0; r < actions.rows(); ++r) {
    for (int c = 0; c < act_dim; ++c) actions(r, c) = 0.5 * rng.gaussian();
  }

  Tape tape;
  const planning::RolloutGraph g =
      planning::build_rollout(tape, spec, s0, {actions});
  tape.backward(g.reg_ret);
  VectorXd grad(actions.size());
  for (int k = 0; k <= horizon; ++k) {
    grad.segment(k * act_dim, act_dim) =
        tape.adjoint(g.actions[k]).row(0).transpose();
  }

  const auto f = [&](const VectorXd& flat) {
    MatrixXd a(horizon + 1, act_dim);
    for (int k = 0; k <= horizon; ++k) {
      a.row(k) = flat.segment(k * act_dim, act_dim).transpose();
    }
    Tape t2;
    return t2.value(planning::build_rollout(t2, spec, s0, {a}).reg_ret)(0, 0);
  };
  VectorXd flat(actions.size());
  for (int k = 0; k <= horizon; ++k) {
    flat.segment(k * act_dim, act_dim) = actions.row(k).transpose();
  }
  const VectorXd fd = ad::finite_diff_grad(f, flat);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    worst = std::max(worst, rel_err(grad(i), fd(i)));
  }
  return worst;
}

mbrl::ReplayBuffer gaussian_buffer(int episodes, int steps, std::uint64_t seed) {
  mbrl::ReplayBuffer buffer(1, 0);
  for (int e = 0; e < episodes; ++e) {
    Rng rng(Rng::mix(seed, e));
    mbrl::Episode ep;
    ep.observations.resize(steps + 1, 1);
    for (int t = 0; t <= steps; ++t) ep.observations(t, 0) = rng.gaussian();
    ep.actions.resize(steps, 0);
    ep.rewards = VectorXd::Zero(steps);
    buffer.add(std::move(ep));
  }
  return buffer;
}

DaeOracleResult dae_gaussian_oracle(double sigma_n, std::uint64_t seed) {
  const mbrl::ReplayBuffer buffer = gaussian_buffer(8, 500, Rng::mix(seed, 1));
  models::DaeTrainConfig cfg;
  cfg.sigma_n = sigma_n;
  cfg.window = 1;
  cfg.epochs = 150;
  cfg.batch_size = 64;
  cfg.lr = 1e-3;
  cfg.seed = Rng::mix(seed, 2);

  DaeOracleResult res;
  res.denoiser = models::train_dae(buffer, cfg);

  const int n = 41;
  VectorXd xs(n), gs(n);
  for (int i = 0; i < n; ++i) {
    xs(i) = -2.0 + 4.0 * i / (n - 1);
    gs(i) = models::denoise(res.denoiser, VectorXd::Constant(1, xs(i)))(0);
  }
  const double xm = xs.mean();
  const double gm = gs.mean();
  res.slope = ((xs.array() - xm) * (gs.array() - gm)).sum() /
              (xs.array() - xm).square().sum();

  // Miyasawa direction: g(x) - x should match sigma^2 * d/dx log p~(x) with
  // p~ = N(0, 1 + sigma^2); skip the neighborhood of zero where the score
  // crosses zero.
  const double s2 = sigma_n * sigma_n;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    if (std::abs(xs(i)) < 0.25) continue;
    const double target = s2 * (-xs(i) / (1.0 + s2));
    const double got = gs(i) - xs(i);
    worst = std::max(worst, std::abs(got - target) / std::abs(target));
  }
  res.max_miyasawa_rel_err = worst;
  return res;
}

namespace {

// --------------------------------------------------------------------------
// suites

std::vector<CheckResult> suite_gradcheck() {
  std::vector<CheckResult> out;
  const double mlp_err = gradcheck_random_mlps(20, 0x6ead);
  out.push_back(check("gradcheck.random_mlps", mlp_err <= 1e-5,
                      "worst rel err " + fmt(mlp_err) + " (tol 1e-5)"));
  const double unroll_err = gradcheck_unrolled_objective(5, 0x6ead + 1);
  out.push_back(check("gradcheck.unrolled_objective", unroll_err <= 1e-4,
                      "worst rel err " + fmt(unroll_err) + " (tol 1e-4)"));
  return out;
}

std::vector<CheckResult> suite_dae_oracle() {
  std::vector<CheckResult> out;
  const DaeOracleResult res = dae_gaussian_oracle(0.5, 0xdae);
  out.push_back(check(
      "dae.posterior_slope", std::abs(res.slope - 0.8) <= 0.05,
      "slope " + fmt(res.slope) + " vs 0.8 +- 0.05"));
  out.push_back(check("dae.miyasawa_direction", res.max_miyasawa_rel_err <= 0.10,
                      "max rel err " + fmt(res.max_miyasawa_rel_err) +
                          " (tol 0.10)"));
  return out;
}

std::vector<CheckResult> suite_cem_sanity() {
  std::vector<CheckResult> out;
  Rng rng(0xce3);
  const int steps = 10, act_dim = 2;
  planning::Bounds bounds{VectorXd::Constant(act_dim, -1.0),
                          VectorXd::Constant(act_dim, 1.0)};
  MatrixXd target(steps, act_dim);
  for (int r = 0; r < steps; ++r) {
    for (int c = 0; c < act_dim; ++c) target(r, c) = rng.uniform(-0.5, 0.5);
  }
  const auto quad = [&target](const std::vector<MatrixXd>& cands) {
    std::vector<double> v(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      v[i] = -(cands[i] - target).squaredNorm();
    }
    return v;
  };

  planning::Plan init;
  init.bounds = bounds;
  init.actions = MatrixXd::Zero(steps, act_dim);
  planning::CemConfig cfg;
  cfg.population = 400;
  cfg.elites = 40;
  cfg.iterations = 25;
  const planning::Plan sol = planning::cem_optimize(quad, init, cfg, 7);
  const double err = (sol.actions - target).cwiseAbs().maxCoeff();
  out.push_back(check("cem.quadratic_optimum", err <= 1e-2,
                      "max |err| " + fmt(err) + " (tol 1e-2)"));

  // Strictly increasing transform: same seed must give the same elites every
  // iteration and bit-identical final plans.
  std::vector<std::vector<double>> vals_f, vals_g;
  const auto log_f = [&](const std::vector<MatrixXd>& c) {
    auto v = quad(c);
    vals_f.push_back(v);
    return v;
  };
  const auto log_g = [&](const std::vector<MatrixXd>& c) {
    auto v = quad(c);
    for (double& x : v) x = 2.0 * x + 7.0;
    vals_g.push_back(v);
    return v;
  };
  cfg.iterations = 6;
  const planning::Plan a = planning::cem_optimize(log_f, init, cfg, 11);
  const planning::Plan b = planning::cem_optimize(log_g, init, cfg, 11);
  bool same_elites = vals_f.size() == vals_g.size();
  for (std::size_t it = 0; same_elites && it < vals_f.size(); ++it) {
    std::vector<int> order_f(vals_f[it].size()), order_g(vals_g[it].size());
    for (std::size_t i = 0; i < order_f.size(); ++i) {
      order_f[i] = static_cast<int>(i);
      order_g[i] = static_cast<int>(i);
    }
    auto by = [](const std::vector<double>& v) {
      return [&v](int x, int y) { return v[x] > v[y]; };
    };
    std::stable_sort(order_f.begin(), order_f.end(), by(vals_f[it]));
    std::stable_sort(order_g.begin(), order_g.end(), by(vals_g[it]));
    for (int e = 0; e < cfg.elites; ++e) {
      if (order_f[e] != order_g[e]) same_elites = false;
    }
  }
  const bool identical = a.actions == b.actions;
  out.push_back(check("cem.monotone_invariance", same_elites && identical,
                      identical ? "elite sets and final plans identical"
                                : "final plans differ"));
  return out;
}

std::vector<CheckResult> suite_env_checks() {
  std::vector<CheckResult> out;

  for (const auto& id : envs::env_ids()) {
    const envs::EnvSpec env = envs::make_env(id);
    Rng r2(std::hash<std::string>{}(id));
    VectorXd s = env.init_state(r2);
    VectorXd a(env.act_dim);
    for (int d = 0; d < env.act_dim; ++d) {
      a(d) = r2.uniform(env.act_low(d), env.act_high(d));
    }
    const VectorXd n1 = envs::step(env, s, a);
    const VectorXd n2 = envs::step(env, s, a);
    out.push_back(check("env." + id + ".step_deterministic", n1 == n2, ""));

    // Reward gradient w.r.t. the action against finite differences.
    const VectorXd obs = envs::observe(env, s);
    Tape tape;
    const NodeId obs_n = tape.leaf(obs.transpose());
    const NodeId act_n = tape.leaf(a.transpose());
    tape.backward(env.reward_node(tape, obs_n, act_n));
    const VectorXd grad = tape.adjoint(act_n).row(0).transpose();
    const VectorXd fd = ad::finite_diff_grad(
        [&](const VectorXd& act) { return envs::reward(env, obs, act); }, a);
    double worst = 0.0;
    for (int d = 0; d < env.act_dim; ++d) {
      worst = std::max(worst, rel_err(grad(d), fd(d)));
    }
    out.push_back(check("env." + id + ".reward_gradient", worst <= 1e-6,
                        "worst rel err " + fmt(worst)));
  }

  {
    const envs::EnvSpec env = envs::make_env("cartpole");
    out.push_back(check("env.cartpole.dims",
                        env.obs_dim == 5 && env.act_dim == 1 &&
                            env.episode_len == 200,
                        "obs 5, act 1, T 200"));
    VectorXd hanging(4);
    hanging << 0, 0, M_PI, 0;
    const VectorXd next = envs::step(env, hanging, VectorXd::Zero(1));
    out.push_back(check("env.cartpole.hanging_fixed_point",
                        (next - hanging).cwiseAbs().maxCoeff() <= 1e-9,
                        "drift " + fmt((next - hanging).cwiseAbs().maxCoeff())));

    VectorXd upright_obs(5);
    upright_obs << 0, 0, 0, 1, 0;
    const double top = envs::reward(env, upright_obs, VectorXd::Zero(1));
    Rng rr(0xca1);
    bool is_max = true;
    for (int i = 0; i < 200; ++i) {
      VectorXd st(4);
      st << rr.uniform(-2, 2), rr.uniform(-2, 2), rr.uniform(-M_PI, M_PI),
          rr.uniform(-4, 4);
      VectorXd act(1);
      act << rr.uniform(-1, 1);
      if (envs::reward(env, envs::observe(env, st), act) > top) is_max = false;
    }
    out.push_back(check("env.cartpole.upright_reward_max", is_max,
                        "top reward " + fmt(top)));

    bool energy_ok = true;
    double worst_gain = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      Rng er(0xe6 + trial);
      VectorXd st(4);
      st << er.uniform(-0.5, 0.5), er.uniform(-0.5, 0.5),
          M_PI + er.uniform(-1.5, 1.5), er.uniform(-1, 1);
      double e = envs::cartpole::energy(st);
      for (int t = 0; t < 1000; ++t) {
        st = envs::step(env, st, VectorXd::Zero(1));
        const double e2 = envs::cartpole::energy(st);
        worst_gain = std::max(worst_gain, e2 - e);
        if (e2 > e + 1e-9) energy_ok = false;
        e = e2;
      }
    }
    out.push_back(check("env.cartpole.energy_non_increasing", energy_ok,
                        "worst per-step gain " + fmt(worst_gain)));
  }

  {
    const envs::EnvSpec env = envs::make_env("reacher2d");
    out.push_back(check("env.reacher2d.dims",
                        env.obs_dim == 6 && env.act_dim == 2 &&
                            env.episode_len == 150,
                        "obs 6, act 2, T 150"));
    VectorXd s(6);
    s << 0.3, -0.2, 0.07, -0.04, 0.5, 0.5;
    VectorXd expect = s;
    VectorXd cur = s;
    for (int t = 0; t < 50; ++t) {
      cur = envs::step(env, cur, VectorXd::Zero(2));
    }
    expect(0) = s(0) + 50 * 0.1 * s(2);
    expect(1) = s(1) + 50 * 0.1 * s(3);
    out.push_back(check("env.reacher2d.coasting_closed_form",
                        (cur - expect).cwiseAbs().maxCoeff() <= 1e-12,
                        "err " + fmt((cur - expect).cwiseAbs().maxCoeff())));
  }

  {
    const envs::EnvSpec env = envs::make_env("reactor");
    out.push_back(check("env.reactor.dims",
                        env.obs_dim == 3 && env.act_dim == 2 &&
                            env.episode_len == 300,
                        "obs 3, act 2, T 300"));
    VectorXd sp(3);
    sp << envs::reactor::kSetpoint[0], envs::reactor::kSetpoint[1],
        envs::reactor::kSetpoint[2];
    const VectorXd u =
        VectorXd::Constant(2, envs::reactor::kEquilibriumValve);
    const VectorXd next = envs::step(env, sp, u);
    const double drift = (next - sp).cwiseAbs().maxCoeff();
    const double r_sp = envs::reward(env, sp, u);
    out.push_back(check("env.reactor.setpoint_equilibrium",
                        drift <= 1e-9 && std::abs(r_sp) <= 1e-3,
                        "drift " + fmt(drift) + ", reward " + fmt(r_sp)));

    VectorXd st(3);
    st << 1.2, 0.9, 0.4;
    bool monotone = true;
    for (int t = 0; t < 200; ++t) {
      const VectorXd nxt = envs::step(env, st, VectorXd::Zero(2));
      if (nxt(0) > st(0) + 1e-12 || nxt(1) > st(1) + 1e-12) monotone = false;
      st = nxt;
    }
    out.push_back(check("env.reactor.closed_valves_decay", monotone, ""));

    bool barrier_ok = true;
    double prev = envs::reward(
        env, (VectorXd(3) << sp(0), envs::reactor::kPressureLimit, sp(2)).finished(),
        u);
    for (double p = envs::reactor::kPressureLimit + 0.05;
         p < envs::reactor::kPressureLimit + 0.5; p += 0.05) {
      const double r =
          envs::reward(env, (VectorXd(3) << sp(0), p, sp(2)).finished(), u);
      if (r >= prev) barrier_ok = false;
      prev = r;
    }
    out.push_back(check("env.reactor.barrier_decreases_reward", barrier_ok, ""));
  }

  return out;
}

}  // namespace

std::vector<std::string> suite_names() {
  return {"gradcheck", "dae-oracle", "cem-sanity", "env-checks", "all"};
}

std::vector<CheckResult> run_suite(const std::string& suite) {
  if (suite == "gradcheck") return suite_gradcheck();
  if (suite == "dae-oracle") return suite_dae_oracle();
  if (suite == "cem-sanity") return suite_cem_sanity();
  if (suite == "env-checks") return suite_env_checks();
  if (suite == "all") {
    std::vector<CheckResult> out;
    for (const auto& name :
         {"gradcheck", "dae-oracle", "cem-sanity", "env-checks"}) {
      auto part = run_suite(name);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  throw std::invalid_argument("unknown verify suite '" + suite + "'");
}

}  // namespace mbplan::verify
