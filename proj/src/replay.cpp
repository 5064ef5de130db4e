#include "mbplan/replay.hpp"

#include <stdexcept>

#include "mbplan/rng.hpp"

namespace mbplan::mbrl {

Eigen::MatrixXd NormStats::normalize(const Eigen::MatrixXd& rows) const {
  return ((rows.rowwise() - mean.transpose()).array().rowwise() /
          std.transpose().array())
      .matrix();
}

Eigen::MatrixXd NormStats::denormalize(const Eigen::MatrixXd& rows) const {
  return ((rows.array().rowwise() * std.transpose().array()).matrix().rowwise() +
          mean.transpose());
}

NormStats fit_stats(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("fit_stats: no rows");
  NormStats s;
  s.mean = rows.colwise().mean();
  const Eigen::ArrayXd var =
      (rows.rowwise() - s.mean.transpose()).array().square().colwise().mean();
  s.std = var.sqrt().max(kStdFloor).matrix();
  return s;
}

NormStats tile_stats(const NormStats& s, int w) {
  NormStats out;
  out.mean.resize(s.dim() * w);
  out.std.resize(s.dim() * w);
  for (int i = 0; i < w; ++i) {
    out.mean.segment(i * s.dim(), s.dim()) = s.mean;
    out.std.segment(i * s.dim(), s.dim()) = s.std;
  }
  return out;
}

void Episode::validate() const {
  if (observations.rows() != actions.rows() + 1) {
    throw std::invalid_argument("episode: need one more observation than actions");
  }
  if (rewards.size() != actions.rows()) {
    throw std::invalid_argument("episode: rewards/actions length mismatch");
  }
  if (!rewards.allFinite()) {
    throw std::invalid_argument("episode: non-finite reward");
  }
}

void ReplayBuffer::add(Episode ep) {
  ep.validate();
  if (ep.observations.cols() != obs_dim_ || ep.actions.cols() != act_dim_) {
    throw std::invalid_argument("episode dims do not match buffer");
  }
  episodes_.push_back(std::move(ep));
}

long ReplayBuffer::num_transitions() const {
  long n = 0;
  for (const auto& ep : episodes_) n += ep.length();
  return n;
}

ReplayBuffer::Transitions ReplayBuffer::transitions() const {
  const long n = num_transitions();
  Transitions t;
  t.obs.resize(n, obs_dim_);
  t.act.resize(n, act_dim_);
  t.next_obs.resize(n, obs_dim_);
  long at = 0;
  for (const auto& ep : episodes_) {
    const int len = ep.length();
    t.obs.middleRows(at, len) = ep.observations.topRows(len);
    t.act.middleRows(at, len) = ep.actions;
    t.next_obs.middleRows(at, len) = ep.observations.bottomRows(len);
    at += len;
  }
  return t;
}

long ReplayBuffer::num_windows(int w) const {
  if (w < 1) throw std::invalid_argument("window size must be >= 1");
  long n = 0;
  for (const auto& ep : episodes_) {
    if (ep.length() >= w) n += ep.length() - w + 1;
  }
  return n;
}

Eigen::MatrixXd ReplayBuffer::windows(int w) const {
  const int pair = obs_dim_ + act_dim_;
  Eigen::MatrixXd out(num_windows(w), pair * w);
  long at = 0;
  for (const auto& ep : episodes_) {
    for (int t = 0; t + w <= ep.length(); ++t) {
      for (int k = 0; k < w; ++k) {
        out.block(at, k * pair, 1, obs_dim_) = ep.observations.row(t + k);
        out.block(at, k * pair + obs_dim_, 1, act_dim_) = ep.actions.row(t + k);
      }
      ++at;
    }
  }
  return out;
}

NormStats ReplayBuffer::input_stats() const {
  if (empty()) throw std::invalid_argument("replay buffer is empty");
  const Transitions t = transitions();
  Eigen::MatrixXd joined(t.obs.rows(), obs_dim_ + act_dim_);
  joined << t.obs, t.act;
  return fit_stats(joined);
}

NormStats ReplayBuffer::delta_stats() const {
  if (empty()) throw std::invalid_argument("replay buffer is empty");
  const Transitions t = transitions();
  return fit_stats(t.next_obs - t.obs);
}

BatchSampler::BatchSampler(long n, int batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), state_(seed) {
  if (n <= 0) throw std::invalid_argument("sampler: empty dataset");
  if (batch_size <= 0) throw std::invalid_argument("sampler: batch size");
}

std::vector<std::vector<long>> BatchSampler::epoch() {
  std::vector<long> idx(n_);
  for (long i = 0; i < n_; ++i) idx[i] = i;
  Rng rng(state_);
  state_ = Rng::mix(state_, 0x5e7u);
  rng.shuffle(idx);
  std::vector<std::vector<long>> batches;
  for (long at = 0; at < n_; at += batch_size_) {
    const long take = std::min<long>(batch_size_, n_ - at);
    batches.emplace_back(idx.begin() + at, idx.begin() + at + take);
  }
  return batches;
}

}  // namespace mbplan::mbrl
