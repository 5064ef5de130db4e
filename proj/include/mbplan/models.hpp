#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mbplan/autodiff.hpp"
#include "mbplan/replay.hpp"

namespace mbplan::models {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Probabilistic forward model: a swish trunk with mean and log-variance heads
// over the normalized next-state delta. Only the mean is used for planning;
// the variance is trained because it stabilizes the NLL fit.
struct DynamicsModel {
  ad::MlpParams trunk;
  ad::MlpParams mean_head;
  ad::MlpParams logvar_head;
  mbrl::NormStats in_stats;
  mbrl::NormStats delta_stats;
  int obs_dim = 0;
  int act_dim = 0;
  double logvar_min = -10.0;
  double logvar_max = 4.0;
};

struct Prediction {
  ad::NodeId mean;      // [B, obs]
  ad::NodeId variance;  // [B, obs], denormalized units
};

// Batched, differentiable w.r.t. both obs and act. Rejects non-finite inputs.
Prediction predict(ad::Tape& tape, const DynamicsModel& model, ad::NodeId obs,
                   ad::NodeId act);
// Planning path: mean only, log-variance head skipped.
ad::NodeId predict_mean(ad::Tape& tape, const DynamicsModel& model,
                        ad::NodeId obs, ad::NodeId act);

// Parameters and statistics attached to a tape once, for rollout loops that
// step the same model many times on one tape.
struct DynamicsAttached {
  const DynamicsModel* model = nullptr;
  ad::MlpAttached trunk, mean_head;
  ad::NodeId neg_in_mean, inv_in_std, delta_std, delta_mean;
};
DynamicsAttached attach_dynamics(ad::Tape& tape, const DynamicsModel& model);
ad::NodeId predict_mean(ad::Tape& tape, const DynamicsAttached& at,
                        ad::NodeId obs, ad::NodeId act);
// Single transition, values only.
std::pair<VectorXd, VectorXd> predict(const DynamicsModel& model,
                                      const VectorXd& obs, const VectorXd& act);

// Mean rollout of an action sequence, fully on-tape for backprop through
// time. Returns H+1 nodes, the first being s0. Rejects a non-finite state
// with the step index that produced it.
std::vector<ad::NodeId> unroll(ad::Tape& tape, const DynamicsModel& model,
                               const VectorXd& s0, const MatrixXd& actions);

// Trains on every transition in the buffer; normalization statistics are
// frozen from the buffer at call time. Architecture is three hidden layers
// of 200 swish units unless warm_start supplies previous parameters.
DynamicsModel train_dynamics(const mbrl::ReplayBuffer& buffer,
                             const TrainConfig& cfg,
                             const DynamicsModel* warm_start = nullptr);

// Mean per-transition Gaussian NLL (normalized units, constants included)
// over the last 10% of the buffer.
double validation_nll(const DynamicsModel& model,
                      const mbrl::ReplayBuffer& buffer);

// Denoising autoencoder over windows of w consecutive (obs, act) pairs,
// operating on normalized coordinates.
struct Denoiser {
  ad::MlpParams net;
  mbrl::NormStats stats;  // dim = w * (obs + act)
  double sigma_n = 0.1;
  int window = 1;
  int obs_dim = 0;
  int act_dim = 0;
};

struct DaeTrainConfig {
  double sigma_n = 0.1;
  int window = 1;
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Minimizes mean ||g(x + n) - x||^2 with fresh corruption noise every batch.
Denoiser train_dae(const mbrl::ReplayBuffer& buffer, const DaeTrainConfig& cfg);

// g(x) in original coordinates, differentiable w.r.t. x.
ad::NodeId denoise(ad::Tape& tape, const Denoiser& den, ad::NodeId x);
VectorXd denoise(const Denoiser& den, const VectorXd& x);

// ||g(x) - x||^2 per row, computed in normalized coordinates. By default the
// gradient flows through g; stop_grad cuts it, leaving the score direction.
ad::NodeId dae_penalty(ad::Tape& tape, const Denoiser& den, ad::NodeId x,
                       bool stop_grad = false);
double dae_penalty(const Denoiser& den, const VectorXd& x);

struct DenoiserAttached {
  const Denoiser* den = nullptr;
  ad::MlpAttached net;
  ad::NodeId neg_mean, inv_std;
};
DenoiserAttached attach_denoiser(ad::Tape& tape, const Denoiser& den);
ad::NodeId dae_penalty(ad::Tape& tape, const DenoiserAttached& at, ad::NodeId x,
                       bool stop_grad = false);

// Appendix-style baseline: diagonal Gaussian over raw windows.
struct GaussianRegularizer {
  VectorXd mean;
  VectorXd var;  // >= floor
  double floor = 1e-6;
  int window = 1;
};

GaussianRegularizer fit_gaussian(const mbrl::ReplayBuffer& buffer, int w = 1);
// Negative log density, -sum_i log N(x_i; mu_i, var_i).
double gaussian_penalty(const GaussianRegularizer& reg, const VectorXd& x);
ad::NodeId gaussian_penalty(ad::Tape& tape, const GaussianRegularizer& reg,
                            ad::NodeId x);

}  // namespace mbplan::models
