#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace mbplan::mbrl {

// Per-dimension normalization statistics. Degenerate dimensions keep a
// floored std so normalization never divides by zero.
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::MatrixXd normalize(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& rows) const;
  int dim() const { return static_cast<int>(mean.size()); }
};

constexpr double kStdFloor = 1e-6;

NormStats fit_stats(const Eigen::MatrixXd& rows);
// Repeats per-dimension stats across a window of w (obs, act) pairs.
NormStats tile_stats(const NormStats& s, int w);

struct Episode {
  Eigen::MatrixXd observations;  // (T+1) x obs_dim
  Eigen::MatrixXd actions;       // T x act_dim
  Eigen::VectorXd rewards;       // T
  bool truncated = false;
  bool diverged = false;

  int length() const { return static_cast<int>(actions.rows()); }
  double total_reward() const { return rewards.sum(); }
  void validate() const;
};

// Ordered store of episodes with derived training views. Windows never
// straddle episode boundaries; statistics are a pure function of contents.
class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int act_dim)
      : obs_dim_(obs_dim), act_dim_(act_dim) {}

  void add(Episode ep);

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  int num_episodes() const { return static_cast<int>(episodes_.size()); }
  const Episode& episode(int i) const { return episodes_.at(i); }
  long num_transitions() const;
  bool empty() const { return num_transitions() == 0; }

  struct Transitions {
    Eigen::MatrixXd obs;       // N x obs_dim
    Eigen::MatrixXd act;       // N x act_dim
    Eigen::MatrixXd next_obs;  // N x obs_dim
  };
  Transitions transitions() const;

  long num_windows(int w) const;
  // Rows are concat(o_t, a_t, ..., o_{t+w-1}, a_{t+w-1}).
  Eigen::MatrixXd windows(int w) const;

  NormStats input_stats() const;  // over concat(obs, act)
  NormStats delta_stats() const;  // over next_obs - obs
  NormStats pair_stats() const { return input_stats(); }

 private:
  int obs_dim_;
  int act_dim_;
  std::vector<Episode> episodes_;
};

// Epoch-shuffled full-coverage index batches; deterministic given the seed
// and carrying its stream across epochs so consecutive epochs differ.
class BatchSampler {
 public:
  BatchSampler(long n, int batch_size, std::uint64_t seed);
  // One epoch of batches covering every index exactly once.
  std::vector<std::vector<long>> epoch();

 private:
  long n_;
  int batch_size_;
  std::uint64_t state_;
};

}  // namespace mbplan::mbrl
