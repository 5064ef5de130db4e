#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mbplan/autodiff.hpp"
#include "mbplan/models.hpp"

namespace mbplan::planning {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Bounds {
  VectorXd low;
  VectorXd high;
  int dim() const { return static_cast<int>(low.size()); }
};

// Horizon-H action sequence: H+1 rows, one per reward step; the model is
// stepped with the first H of them. Optimizers project onto the bounds after
// every update, so a returned plan always satisfies them exactly.
struct Plan {
  MatrixXd actions;
  Bounds bounds;

  int horizon() const { return static_cast<int>(actions.rows()) - 1; }
  int steps() const { return static_cast<int>(actions.rows()); }
  void clip();
  bool within_bounds() const;
};

Plan make_plan(int horizon, const Bounds& bounds);  // actions at bound center

// Shifts actions one step left; the freed last slot is filled per policy.
enum class ShiftFill { kZeros, kRepeatLast, kResample };
Plan warm_start_shift(const Plan& previous, ShiftFill fill, Rng* rng = nullptr);

// What imagination steps through: the learned model, or the true environment
// dynamics when calibrating with an oracle planner. A carrier node is the
// model's obs for the learned case and the full env state for the oracle.
class RolloutDynamics {
 public:
  struct Ctx {
    virtual ~Ctx() = default;
  };

  virtual ~RolloutDynamics() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  // True when rollouts start from the full env state rather than an
  // observation (oracle planning).
  virtual bool uses_env_state() const { return false; }
  virtual std::unique_ptr<Ctx> begin(ad::Tape& tape) const = 0;
  virtual ad::NodeId init(ad::Tape& tape, Ctx& ctx, const VectorXd& start,
                          int batch) const = 0;
  virtual ad::NodeId advance(ad::Tape& tape, Ctx& ctx, ad::NodeId carrier,
                             ad::NodeId act) const = 0;
  virtual ad::NodeId to_obs(ad::Tape& tape, Ctx& ctx,
                            ad::NodeId carrier) const = 0;
};

class ModelDynamics final : public RolloutDynamics {
 public:
  explicit ModelDynamics(const models::DynamicsModel& model) : model_(&model) {}
  int obs_dim() const override { return model_->obs_dim; }
  int act_dim() const override { return model_->act_dim; }
  std::unique_ptr<Ctx> begin(ad::Tape& tape) const override;
  ad::NodeId init(ad::Tape& tape, Ctx& ctx, const VectorXd& start,
                  int batch) const override;
  ad::NodeId advance(ad::Tape& tape, Ctx& ctx, ad::NodeId carrier,
                     ad::NodeId act) const override;
  ad::NodeId to_obs(ad::Tape& tape, Ctx& ctx, ad::NodeId carrier) const override;

 private:
  const models::DynamicsModel* model_;
};

// Forward declared here to avoid an include cycle; defined in envs.hpp.
}  // namespace mbplan::planning

namespace mbplan::envs {
struct EnvSpec;
}

namespace mbplan::planning {

class OracleDynamics final : public RolloutDynamics {
 public:
  explicit OracleDynamics(const envs::EnvSpec& env);
  int obs_dim() const override;
  int act_dim() const override;
  bool uses_env_state() const override { return true; }
  std::unique_ptr<Ctx> begin(ad::Tape& tape) const override;
  ad::NodeId init(ad::Tape& tape, Ctx& ctx, const VectorXd& start,
                  int batch) const override;
  ad::NodeId advance(ad::Tape& tape, Ctx& ctx, ad::NodeId carrier,
                     ad::NodeId act) const override;
  ad::NodeId to_obs(ad::Tape& tape, Ctx& ctx, ad::NodeId carrier) const override;

 private:
  const envs::EnvSpec* env_;
};

using RewardFn =
    std::function<ad::NodeId(ad::Tape&, ad::NodeId obs, ad::NodeId act)>;

enum class Regularizer { kNone, kDae, kGaussian };

struct ObjectiveSpec {
  const RolloutDynamics* dynamics = nullptr;
  RewardFn reward;
  Regularizer regularizer = Regularizer::kNone;
  const models::Denoiser* dae = nullptr;
  const models::GaussianRegularizer* gaussian = nullptr;
  double alpha = 0.0;
  int window = 1;
  bool stop_grad = false;

  bool regularized() const {
    return alpha > 0.0 && regularizer != Regularizer::kNone;
  }
};

// One imagined rollout recorded on a tape, batched over candidates.
struct RolloutGraph {
  std::vector<ad::NodeId> actions;  // H+1 leaves, [B, act]
  std::vector<ad::NodeId> obs;      // H+1 nodes, [B, obs]
  ad::NodeId ret;                   // [B, 1] plain return G
  ad::NodeId reg_ret;               // [B, 1]; same node as ret when alpha = 0
};

RolloutGraph build_rollout(ad::Tape& tape, const ObjectiveSpec& spec,
                           const VectorXd& start,
                           const std::vector<MatrixXd>& candidates);

double expected_return(const ObjectiveSpec& spec, const VectorXd& start,
                       const Plan& plan);
double regularized_return(const ObjectiveSpec& spec, const VectorXd& start,
                          const Plan& plan);

// Batched candidate evaluation in fixed-size chunks. Values of diverged
// candidates come back as -inf. The chunking is independent of the worker
// count, so parallel evaluation returns bit-identical values.
struct EvalConfig {
  int chunk = 64;
  int workers = 1;
};
std::vector<double> evaluate_plans(const ObjectiveSpec& spec,
                                   const VectorXd& start,
                                   const std::vector<MatrixXd>& candidates,
                                   const EvalConfig& eval = {});

using BatchObjective =
    std::function<std::vector<double>(const std::vector<MatrixXd>&)>;

struct CemConfig {
  int population = 400;
  int elites = 40;
  int iterations = 10;
  // Initial std per action dimension; empty means a quarter of each bound
  // range.
  VectorXd init_std;
  double std_floor = 1e-3;
  double smoothing = 0.1;  // weight kept on the previous mean/std
};

// Maximizes the objective, sampling around the given mean plan. Deterministic
// given the seed; elite selection breaks value ties by candidate index.
Plan cem_optimize(const BatchObjective& objective, const Plan& init_mean,
                  const CemConfig& cfg, std::uint64_t seed);

enum class WarmStartMode { kCold, kShiftPrevious, kCemInit };

struct GradPlanConfig {
  int iterations = 10;
  double lr = 0.1;
  int restarts = 1;
  WarmStartMode warm_start = WarmStartMode::kShiftPrevious;
  int cem_init_iters = 2;  // used by kCemInit
};

// Adam ascent on the regularized return via backprop through the unrolled
// model, projecting onto bounds after each step. Restarts beyond the given
// init start from random in-bounds plans; a restart whose gradient goes
// non-finite is aborted, and if every restart aborts the planner rejects.
Plan adam_optimize(const ObjectiveSpec& spec, const VectorXd& start,
                   const Plan& init, const GradPlanConfig& cfg,
                   std::uint64_t seed);

}  // namespace mbplan::planning
