#include "mbplan/planning.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "mbplan/envs.hpp"

namespace mbplan::planning {

namespace {

using ad::NodeId;
using ad::Tape;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

VectorXd flatten(const MatrixXd& actions) {
  VectorXd flat(actions.size());
  for (Eigen::Index k = 0; k < actions.rows(); ++k) {
    flat.segment(k * actions.cols(), actions.cols()) = actions.row(k);
  }
  return flat;
}

MatrixXd unflatten(const VectorXd& flat, int steps, int act_dim) {
  MatrixXd actions(steps, act_dim);
  for (int k = 0; k < steps; ++k) {
    actions.row(k) = flat.segment(k * act_dim, act_dim);
  }
  return actions;
}

struct ModelCtx : RolloutDynamics::Ctx {
  models::DynamicsAttached at;
};

}  // namespace

void Plan::clip() {
  for (Eigen::Index k = 0; k < actions.rows(); ++k) {
    actions.row(k) = actions.row(k)
                         .cwiseMax(bounds.low.transpose())
                         .cwiseMin(bounds.high.transpose());
  }
}

bool Plan::within_bounds() const {
  for (Eigen::Index k = 0; k < actions.rows(); ++k) {
    if ((actions.row(k).transpose().array() < bounds.low.array()).any() ||
        (actions.row(k).transpose().array() > bounds.high.array()).any()) {
      return false;
    }
  }
  return true;
}

Plan make_plan(int horizon, const Bounds& bounds) {
  Plan p;
  p.bounds = bounds;
  p.actions = (0.5 * (bounds.low + bounds.high))
                  .transpose()
                  .replicate(horizon + 1, 1);
  return p;
}

Plan warm_start_shift(const Plan& previous, ShiftFill fill, Rng* rng) {
  Plan out = previous;
  const int n = previous.steps();
  if (n > 1) {
    out.actions.topRows(n - 1) = previous.actions.bottomRows(n - 1);
  }
  switch (fill) {
    case ShiftFill::kZeros:
      out.actions.row(n - 1).setZero();
      break;
    case ShiftFill::kRepeatLast:
      out.actions.row(n - 1) = previous.actions.row(n - 1);
      break;
    case ShiftFill::kResample: {
      if (rng == nullptr) {
        throw std::invalid_argument("warm_start_shift: resample needs an rng");
      }
      for (int d = 0; d < previous.bounds.dim(); ++d) {
        out.actions(n - 1, d) =
            rng->uniform(previous.bounds.low(d), previous.bounds.high(d));
      }
      break;
    }
  }
  out.clip();
  return out;
}

std::unique_ptr<RolloutDynamics::Ctx> ModelDynamics::begin(Tape& tape) const {
  auto ctx = std::make_unique<ModelCtx>();
  ctx->at = models::attach_dynamics(tape, *model_);
  return ctx;
}

NodeId ModelDynamics::init(Tape& tape, Ctx&, const VectorXd& start,
                           int batch) const {
  if (start.size() != model_->obs_dim) {
    throw std::invalid_argument("plan start obs has wrong dimension");
  }
  return tape.leaf(start.transpose().replicate(batch, 1));
}

NodeId ModelDynamics::advance(Tape& tape, Ctx& ctx, NodeId carrier,
                              NodeId act) const {
  auto& at = static_cast<ModelCtx&>(ctx).at;
  return models::predict_mean(tape, at, carrier, act);
}

NodeId ModelDynamics::to_obs(Tape&, Ctx&, NodeId carrier) const {
  return carrier;
}

OracleDynamics::OracleDynamics(const envs::EnvSpec& env) : env_(&env) {}

int OracleDynamics::obs_dim() const { return env_->obs_dim; }
int OracleDynamics::act_dim() const { return env_->act_dim; }

std::unique_ptr<RolloutDynamics::Ctx> OracleDynamics::begin(Tape&) const {
  return std::make_unique<Ctx>();
}

NodeId OracleDynamics::init(Tape& tape, Ctx&, const VectorXd& start,
                            int batch) const {
  if (start.size() != env_->state_dim) {
    throw std::invalid_argument("oracle start must be a full env state");
  }
  return tape.leaf(start.transpose().replicate(batch, 1));
}

NodeId OracleDynamics::advance(Tape& tape, Ctx&, NodeId carrier,
                               NodeId act) const {
  return env_->step_node(tape, carrier, act);
}

NodeId OracleDynamics::to_obs(Tape& tape, Ctx&, NodeId carrier) const {
  return env_->observe_node(tape, carrier);
}

RolloutGraph build_rollout(Tape& tape, const ObjectiveSpec& spec,
                           const VectorXd& start,
                           const std::vector<MatrixXd>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("build_rollout: no candidates");
  }
  const int batch = static_cast<int>(candidates.size());
  const int steps = static_cast<int>(candidates.front().rows());
  const int act_dim = static_cast<int>(candidates.front().cols());

  auto ctx = spec.dynamics->begin(tape);
  models::DenoiserAttached dae_at;
  if (spec.regularized() && spec.regularizer == Regularizer::kDae) {
    dae_at = models::attach_denoiser(tape, *spec.dae);
  }

  RolloutGraph g;
  NodeId carrier = spec.dynamics->init(tape, *ctx, start, batch);
  NodeId ret = -1;
  for (int k = 0; k < steps; ++k) {
    MatrixXd step_act(batch, act_dim);
    for (int i = 0; i < batch; ++i) step_act.row(i) = candidates[i].row(k);
    const NodeId a = tape.leaf(std::move(step_act));
    g.actions.push_back(a);
    const NodeId obs = spec.dynamics->to_obs(tape, *ctx, carrier);
    g.obs.push_back(obs);
    const NodeId r = spec.reward(tape, obs, a);
    ret = (k == 0) ? r : tape.add(ret, r);
    if (k + 1 < steps) {
      carrier = spec.dynamics->advance(tape, *ctx, carrier, a);
    }
  }
  g.ret = ret;
  g.reg_ret = ret;

  if (spec.regularized()) {
    const int w = spec.window;
    NodeId total = -1;
    for (int tau = 0; tau + w <= steps; ++tau) {
      std::vector<NodeId> parts;
      for (int k = 0; k < w; ++k) {
        parts.push_back(g.obs[tau + k]);
        parts.push_back(g.actions[tau + k]);
      }
      const NodeId window = tape.concat_cols(parts);
      NodeId pen;
      if (spec.regularizer == Regularizer::kDae) {
        pen = models::dae_penalty(tape, dae_at, window, spec.stop_grad);
      } else {
        pen = models::gaussian_penalty(tape, *spec.gaussian, window);
      }
      total = (tau == 0) ? pen : tape.add(total, pen);
    }
    if (total >= 0) {
      g.reg_ret = tape.sub(g.ret, tape.scale(total, spec.alpha));
    }
  }
  return g;
}

double expected_return(const ObjectiveSpec& spec, const VectorXd& start,
                       const Plan& plan) {
  Tape tape;
  const RolloutGraph g = build_rollout(tape, spec, start, {plan.actions});
  return tape.value(g.ret)(0, 0);
}

double regularized_return(const ObjectiveSpec& spec, const VectorXd& start,
                          const Plan& plan) {
  Tape tape;
  const RolloutGraph g = build_rollout(tape, spec, start, {plan.actions});
  return tape.value(g.reg_ret)(0, 0);
}

std::vector<double> evaluate_plans(const ObjectiveSpec& spec,
                                   const VectorXd& start,
                                   const std::vector<MatrixXd>& candidates,
                                   const EvalConfig& eval) {
  const int n = static_cast<int>(candidates.size());
  const int chunk = std::max(1, eval.chunk);
  const int n_chunks = (n + chunk - 1) / chunk;
  std::vector<double> values(n, kNegInf);

  auto run_chunk = [&](int c) {
    const int first = c * chunk;
    const int count = std::min(chunk, n - first);
    const std::vector<MatrixXd> group(candidates.begin() + first,
                                      candidates.begin() + first + count);
    Tape tape;
    const RolloutGraph g = build_rollout(tape, spec, start, group);
    const ad::Mat& v = tape.value(g.reg_ret);
    for (int i = 0; i < count; ++i) {
      values[first + i] = std::isfinite(v(i, 0)) ? v(i, 0) : kNegInf;
    }
  };

  const int workers = std::max(1, eval.workers);
  if (workers == 1 || n_chunks == 1) {
    for (int c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min(workers, n_chunks);
    pool.reserve(n_threads);
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
          run_chunk(c);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return values;
}

Plan cem_optimize(const BatchObjective& objective, const Plan& init_mean,
                  const CemConfig& cfg, std::uint64_t seed) {
  if (cfg.elites < 1 || cfg.elites > cfg.population) {
    throw std::invalid_argument("cem: need 1 <= elites <= population");
  }
  if (cfg.iterations < 1) {
    throw std::invalid_argument("cem: iterations must be >= 1");
  }
  const int steps = init_mean.steps();
  const int act_dim = init_mean.bounds.dim();
  const int dim = steps * act_dim;

  VectorXd low(dim), high(dim);
  for (int k = 0; k < steps; ++k) {
    low.segment(k * act_dim, act_dim) = init_mean.bounds.low;
    high.segment(k * act_dim, act_dim) = init_mean.bounds.high;
  }

  VectorXd mu = flatten(init_mean.actions);
  VectorXd sigma(dim);
  for (int k = 0; k < steps; ++k) {
    for (int d = 0; d < act_dim; ++d) {
      sigma(k * act_dim + d) =
          cfg.init_std.size() > 0
              ? cfg.init_std(d)
              : 0.25 * (init_mean.bounds.high(d) - init_mean.bounds.low(d));
    }
  }

  Rng rng(seed);
  std::vector<MatrixXd> candidates(cfg.population);
  std::vector<VectorXd> flats(cfg.population, VectorXd(dim));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    for (int i = 0; i < cfg.population; ++i) {
      VectorXd& f = flats[i];
      for (int d = 0; d < dim; ++d) {
        f(d) = mu(d) + sigma(d) * rng.gaussian();
      }
      f = f.cwiseMax(low).cwiseMin(high);
      candidates[i] = unflatten(f, steps, act_dim);
    }
    std::vector<double> values = objective(candidates);
    if (static_cast<int>(values.size()) != cfg.population) {
      throw std::logic_error("cem: objective returned wrong count");
    }
    for (double& v : values) {
      if (!std::isfinite(v)) v = kNegInf;
    }

    std::vector<int> order(cfg.population);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return values[a] > values[b];
    });
    if (!std::isfinite(values[order[0]])) {
      throw std::runtime_error("cem: no finite objective in population");
    }
    int n_elite = cfg.elites;
    while (n_elite > 1 && !std::isfinite(values[order[n_elite - 1]])) {
      --n_elite;
    }

    VectorXd elite_mean = VectorXd::Zero(dim);
    for (int e = 0; e < n_elite; ++e) elite_mean += flats[order[e]];
    elite_mean /= n_elite;
    VectorXd elite_var = VectorXd::Zero(dim);
    for (int e = 0; e < n_elite; ++e) {
      elite_var += (flats[order[e]] - elite_mean).cwiseAbs2();
    }
    elite_var /= n_elite;

    mu = cfg.smoothing * mu + (1.0 - cfg.smoothing) * elite_mean;
    sigma = (cfg.smoothing * sigma +
             (1.0 - cfg.smoothing) * elite_var.cwiseSqrt())
                .cwiseMax(cfg.std_floor);
  }

  Plan out;
  out.bounds = init_mean.bounds;
  out.actions = unflatten(mu.cwiseMax(low).cwiseMin(high), steps, act_dim);
  return out;
}

Plan adam_optimize(const ObjectiveSpec& spec, const VectorXd& start,
                   const Plan& init, const GradPlanConfig& cfg,
                   std::uint64_t seed) {
  if (cfg.iterations < 1) {
    throw std::invalid_argument("adam_optimize: iterations must be >= 1");
  }
  if (!init.within_bounds()) {
    throw std::invalid_argument("adam_optimize: init violates bounds");
  }

  Plan best;
  double best_value = kNegInf;
  int completed = 0;

  for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
    Plan plan = init;
    if (r > 0) {
      Rng rng(Rng::mix(seed, r));
      for (Eigen::Index k = 0; k < plan.actions.rows(); ++k) {
        for (int d = 0; d < plan.bounds.dim(); ++d) {
          plan.actions(k, d) =
              rng.uniform(plan.bounds.low(d), plan.bounds.high(d));
        }
      }
    }

    std::vector<ad::Mat*> params = {&plan.actions};
    ad::AdamState adam = ad::make_adam(params, cfg.lr);
    bool aborted = false;
    for (int it = 0; it < cfg.iterations; ++it) {
      Tape tape;
      const RolloutGraph g = build_rollout(tape, spec, start, {plan.actions});
      tape.backward(tape.neg(g.reg_ret));
      ad::Mat grad(plan.actions.rows(), plan.actions.cols());
      for (int k = 0; k < plan.steps(); ++k) {
        grad.row(k) = tape.adjoint(g.actions[k]).row(0);
      }
      try {
        const std::vector<const ad::Mat*> grads = {&grad};
        ad::adam_step(params, grads, adam);
      } catch (const std::runtime_error&) {
        aborted = true;
        break;
      }
      plan.clip();
    }
    if (aborted) continue;

    const double value = regularized_return(spec, start, plan);
    if (std::isfinite(value) && value > best_value) {
      best_value = value;
      best = plan;
    }
    ++completed;
  }

  if (completed == 0 || !std::isfinite(best_value)) {
    throw std::runtime_error(
        "adam_optimize: all restarts diverged (non-finite gradients)");
  }
  return best;
}

}  // namespace mbplan::planning
