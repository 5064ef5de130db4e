#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbplan/control.hpp"
#include "mbplan/envs.hpp"
#include "mbplan/models.hpp"
#include "mbplan/replay.hpp"

namespace mbplan::mbrl {

// Uniform-random actions within bounds for one full episode. Divergence
// truncates the episode, which is flagged and still stored.
Episode collect_random_episode(const envs::EnvSpec& env, std::uint64_t seed);

enum class RegularizerKind { kNone, kDae, kGaussian };

struct RunConfig {
  std::string env_id = "cartpole";
  int episodes = 15;         // planned episodes after seeding
  int random_episodes = 1;   // random-policy seeding rollouts
  models::TrainConfig model_train{100, 32, 1e-3, 0};
  bool model_from_scratch = false;  // default: warm-start from previous episode
  models::DaeTrainConfig dae_train;
  RegularizerKind regularizer = RegularizerKind::kDae;
  double alpha = 0.0;
  bool stop_grad = false;
  control::MpcConfig mpc;

  void validate() const;  // throws with the offending field name
};

struct EpisodeMetrics {
  int episode = 0;
  double ret = 0.0;
  double imagined_return = 0.0;  // mean plan return G over planning steps
  double gap = 0.0;              // mean G_t minus realized horizon return
  double mean_dae_penalty = 0.0;
  double model_val_nll = 0.0;
  double wall_time_s = 0.0;
};

struct RunResult {
  std::vector<EpisodeMetrics> metrics;  // one row per episode, seeding included
  std::vector<double> returns;          // learning curve
  ReplayBuffer buffer{0, 0};
  std::optional<models::DynamicsModel> model;
  std::optional<models::Denoiser> dae;
};

// Algorithm: seed the buffer with random episodes, then loop
// {train dynamics, train DAE, run one MPC episode, append}. Deterministic
// given (config, seed). With out_dir non-empty, persists run.json,
// metrics.jsonl, buffer.jsonl, dynamics.bin and dae.bin as it goes, so an
// aborted run leaves partial artifacts behind.
RunResult run_training(const RunConfig& cfg, std::uint64_t seed,
                       const std::string& out_dir = "");

// Checkpoint format: little-endian binary, header then per-tensor row-major
// doubles. Field order: dims, normalization stats, layer shapes, weights.
void save_dynamics(const std::string& path, const models::DynamicsModel& m);
models::DynamicsModel load_dynamics(const std::string& path);
void save_denoiser(const std::string& path, const models::Denoiser& d);
models::Denoiser load_denoiser(const std::string& path);

void save_buffer_jsonl(const std::string& path, const ReplayBuffer& buffer);
ReplayBuffer load_buffer_jsonl(const std::string& path);

std::string metrics_to_json(const EpisodeMetrics& m);
EpisodeMetrics metrics_from_json(const std::string& line);

}  // namespace mbplan::mbrl
