#include "mbplan/models.hpp"

#include <cmath>
#include <stdexcept>

#include "mbplan/rng.hpp"

namespace mbplan::models {

namespace {

using ad::NodeId;
using ad::Tape;

constexpr double kLog2Pi = 1.8378770664093454836;

NodeId stats_normalize(Tape& t, const mbrl::NormStats& s, NodeId x) {
  const NodeId centered = t.add_rowvec(x, t.leaf((-s.mean).transpose()));
  return t.mul_rowvec(centered, t.leaf(s.std.transpose().cwiseInverse()));
}

NodeId stats_denormalize(Tape& t, const mbrl::NormStats& s, NodeId x) {
  return t.add_rowvec(t.mul_rowvec(x, t.leaf(s.std.transpose())),
                      t.leaf(s.mean.transpose()));
}

// hi - softplus(hi - x), then lo + softplus(x - lo): a smooth clamp that
// keeps gradients alive near the boundaries.
NodeId soft_clamp(Tape& t, NodeId x, double lo, double hi) {
  const NodeId upper = t.shift(t.neg(t.softplus(t.shift(t.neg(x), hi))), hi);
  return t.shift(t.softplus(t.shift(upper, -lo)), lo);
}

void require_finite(const Tape& t, NodeId x, const char* what) {
  if (!t.value(x).allFinite()) {
    throw std::runtime_error(std::string(what) + ": non-finite input");
  }
}

struct DynNodes {
  ad::MlpAttached trunk, mean_head, logvar_head;
};

DynNodes attach(Tape& t, const DynamicsModel& m) {
  return {ad::attach_mlp(t, m.trunk), ad::attach_mlp(t, m.mean_head),
          ad::attach_mlp(t, m.logvar_head)};
}

NodeId normalized_input(Tape& t, const DynamicsModel& m, NodeId obs,
                        NodeId act) {
  std::vector<NodeId> parts;
  parts.push_back(obs);
  if (t.value(act).cols() > 0) parts.push_back(act);
  const NodeId joined = t.concat_cols(parts);
  return stats_normalize(t, m.in_stats, joined);
}

std::vector<ad::Mat*> model_tensors(DynamicsModel& m) {
  std::vector<ad::Mat*> out;
  for (auto* t : ad::mlp_tensors(m.trunk)) out.push_back(t);
  for (auto* t : ad::mlp_tensors(m.mean_head)) out.push_back(t);
  for (auto* t : ad::mlp_tensors(m.logvar_head)) out.push_back(t);
  return out;
}

std::vector<NodeId> attached_ids(const DynNodes& n) {
  std::vector<NodeId> ids;
  auto grab = [&ids](const ad::MlpAttached& a) {
    for (std::size_t i = 0; i < a.w.size(); ++i) {
      ids.push_back(a.w[i]);
      ids.push_back(a.b[i]);
    }
  };
  grab(n.trunk);
  grab(n.mean_head);
  grab(n.logvar_head);
  return ids;
}

DynamicsModel fresh_model(int obs_dim, int act_dim, std::uint64_t seed) {
  Rng rng(seed);
  DynamicsModel m;
  m.obs_dim = obs_dim;
  m.act_dim = act_dim;
  m.trunk = ad::make_mlp(obs_dim + act_dim, {200, 200}, 200,
                         ad::Activation::kSwish, ad::Activation::kSwish, rng);
  m.mean_head = ad::make_mlp(200, {}, obs_dim, ad::Activation::kIdentity,
                             ad::Activation::kIdentity, rng, 0.5);
  m.logvar_head = ad::make_mlp(200, {}, obs_dim, ad::Activation::kIdentity,
                               ad::Activation::kIdentity, rng, 0.5);
  return m;
}

}  // namespace

Prediction predict(Tape& t, const DynamicsModel& m, NodeId obs, NodeId act) {
  require_finite(t, obs, "predict");
  require_finite(t, act, "predict");
  const NodeId z = normalized_input(t, m, obs, act);
  const NodeId h = ad::mlp_forward(t, m.trunk, z);
  const NodeId mean_n = ad::mlp_forward(t, m.mean_head, h);
  const NodeId logvar = soft_clamp(t, ad::mlp_forward(t, m.logvar_head, h),
                                   m.logvar_min, m.logvar_max);
  const NodeId delta = stats_denormalize(t, m.delta_stats, mean_n);
  Prediction p;
  p.mean = t.add(obs, delta);
  p.variance = t.mul_rowvec(
      t.exp(logvar),
      t.leaf(m.delta_stats.std.transpose().array().square().matrix()));
  return p;
}

NodeId predict_mean(Tape& t, const DynamicsModel& m, NodeId obs, NodeId act) {
  return predict_mean(t, attach_dynamics(t, m), obs, act);
}

DynamicsAttached attach_dynamics(Tape& t, const DynamicsModel& m) {
  DynamicsAttached at;
  at.model = &m;
  at.trunk = ad::attach_mlp(t, m.trunk);
  at.mean_head = ad::attach_mlp(t, m.mean_head);
  at.neg_in_mean = t.leaf((-m.in_stats.mean).transpose());
  at.inv_in_std = t.leaf(m.in_stats.std.transpose().cwiseInverse());
  at.delta_std = t.leaf(m.delta_stats.std.transpose());
  at.delta_mean = t.leaf(m.delta_stats.mean.transpose());
  return at;
}

NodeId predict_mean(Tape& t, const DynamicsAttached& at, NodeId obs,
                    NodeId act) {
  std::vector<NodeId> parts;
  parts.push_back(obs);
  if (t.value(act).cols() > 0) parts.push_back(act);
  const NodeId z = t.mul_rowvec(
      t.add_rowvec(t.concat_cols(parts), at.neg_in_mean), at.inv_in_std);
  const NodeId h = ad::mlp_apply(t, at.trunk, z);
  const NodeId mean_n = ad::mlp_apply(t, at.mean_head, h);
  const NodeId delta =
      t.add_rowvec(t.mul_rowvec(mean_n, at.delta_std), at.delta_mean);
  return t.add(obs, delta);
}

std::pair<VectorXd, VectorXd> predict(const DynamicsModel& m,
                                      const VectorXd& obs, const VectorXd& act) {
  Tape t;
  const Prediction p =
      predict(t, m, t.leaf(obs.transpose()), t.leaf(act.transpose()));
  return {t.value(p.mean).row(0).transpose(),
          t.value(p.variance).row(0).transpose()};
}

std::vector<NodeId> unroll(Tape& t, const DynamicsModel& m, const VectorXd& s0,
                           const MatrixXd& actions) {
  std::vector<NodeId> states;
  states.push_back(t.leaf(s0.transpose()));
  for (Eigen::Index k = 0; k < actions.rows(); ++k) {
    const NodeId a = t.leaf(actions.row(k));
    const NodeId next = predict_mean(t, m, states.back(), a);
    if (!t.value(next).allFinite()) {
      throw std::runtime_error("unroll: non-finite state at step " +
                               std::to_string(k + 1));
    }
    states.push_back(next);
  }
  return states;
}

DynamicsModel train_dynamics(const mbrl::ReplayBuffer& buffer,
                             const TrainConfig& cfg,
                             const DynamicsModel* warm_start) {
  if (buffer.empty()) {
    throw std::invalid_argument("train_dynamics: empty buffer");
  }
  DynamicsModel model = warm_start
                            ? *warm_start
                            : fresh_model(buffer.obs_dim(), buffer.act_dim(),
                                          Rng::mix(cfg.seed, 0xd1));
  model.in_stats = buffer.input_stats();
  model.delta_stats = buffer.delta_stats();

  const auto tr = buffer.transitions();
  const MatrixXd inputs = [&] {
    MatrixXd joined(tr.obs.rows(), buffer.obs_dim() + buffer.act_dim());
    joined << tr.obs, tr.act;
    return model.in_stats.normalize(joined);
  }();
  const MatrixXd targets = model.delta_stats.normalize(tr.next_obs - tr.obs);

  auto params = model_tensors(model);
  ad::AdamState adam = ad::make_adam(params, cfg.lr);
  mbrl::BatchSampler sampler(inputs.rows(), cfg.batch_size,
                             Rng::mix(cfg.seed, 0xd2));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : sampler.epoch()) {
      Tape t;
      const DynNodes nodes = attach(t, model);
      MatrixXd bx(batch.size(), inputs.cols());
      MatrixXd by(batch.size(), targets.cols());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        bx.row(i) = inputs.row(batch[i]);
        by.row(i) = targets.row(batch[i]);
      }
      const NodeId x = t.leaf(std::move(bx));
      const NodeId h = ad::mlp_apply(t, nodes.trunk, x);
      const NodeId mean_n = ad::mlp_apply(t, nodes.mean_head, h);
      const NodeId logvar =
          soft_clamp(t, ad::mlp_apply(t, nodes.logvar_head, h), model.logvar_min,
                     model.logvar_max);
      const NodeId diff = t.sub(mean_n, t.leaf(std::move(by)));
      const NodeId nll = t.scale(
          t.sum(t.add(logvar, t.mul(t.square(diff), t.exp(t.neg(logvar))))),
          0.5 / static_cast<double>(batch.size()));
      t.backward(nll);
      std::vector<const ad::Mat*> grads;
      for (NodeId id : attached_ids(nodes)) grads.push_back(&t.adjoint(id));
      ad::adam_step(params, grads, adam);
    }
  }
  return model;
}

double validation_nll(const DynamicsModel& model,
                      const mbrl::ReplayBuffer& buffer) {
  const auto tr = buffer.transitions();
  const long n = tr.obs.rows();
  const long n_val = std::max<long>(1, n / 10);
  MatrixXd joined(n_val, model.obs_dim + model.act_dim);
  joined << tr.obs.bottomRows(n_val), tr.act.bottomRows(n_val);
  const MatrixXd x = model.in_stats.normalize(joined);
  const MatrixXd y = model.delta_stats.normalize(
      tr.next_obs.bottomRows(n_val) - tr.obs.bottomRows(n_val));

  Tape t;
  const NodeId xn = t.leaf(x);
  const NodeId h = ad::mlp_forward(t, model.trunk, xn);
  const NodeId mean_n = ad::mlp_forward(t, model.mean_head, h);
  const NodeId logvar =
      soft_clamp(t, ad::mlp_forward(t, model.logvar_head, h), model.logvar_min,
                 model.logvar_max);
  const NodeId diff = t.sub(mean_n, t.leaf(y));
  const NodeId nll = t.scale(
      t.sum(t.shift(t.add(logvar, t.mul(t.square(diff), t.exp(t.neg(logvar)))),
                    kLog2Pi)),
      0.5 / static_cast<double>(n_val));
  return t.scalar(nll);
}

Denoiser train_dae(const mbrl::ReplayBuffer& buffer, const DaeTrainConfig& cfg) {
  if (buffer.empty()) throw std::invalid_argument("train_dae: empty buffer");
  if (buffer.num_windows(cfg.window) == 0) {
    throw std::invalid_argument(
        "train_dae: no episode long enough for window " +
        std::to_string(cfg.window));
  }
  const int dim = cfg.window * (buffer.obs_dim() + buffer.act_dim());
  Rng rng(Rng::mix(cfg.seed, 0xae1));

  Denoiser den;
  den.sigma_n = cfg.sigma_n;
  den.window = cfg.window;
  den.obs_dim = buffer.obs_dim();
  den.act_dim = buffer.act_dim();
  den.stats = mbrl::tile_stats(buffer.pair_stats(), cfg.window);
  den.net = ad::make_mlp(dim, {200, 200, 200}, dim, ad::Activation::kSwish,
                         ad::Activation::kIdentity, rng, 0.5);

  const MatrixXd data = den.stats.normalize(buffer.windows(cfg.window));
  auto params = ad::mlp_tensors(den.net);
  ad::AdamState adam = ad::make_adam(params, cfg.lr);
  mbrl::BatchSampler sampler(data.rows(), cfg.batch_size,
                             Rng::mix(cfg.seed, 0xae2));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : sampler.epoch()) {
      MatrixXd clean(batch.size(), dim);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        clean.row(i) = data.row(batch[i]);
      }
      MatrixXd noisy = clean;
      for (Eigen::Index c = 0; c < noisy.cols(); ++c) {
        for (Eigen::Index r = 0; r < noisy.rows(); ++r) {
          noisy(r, c) += cfg.sigma_n * rng.gaussian();
        }
      }
      Tape t;
      const ad::MlpAttached net = ad::attach_mlp(t, den.net);
      const NodeId g = ad::mlp_apply(t, net, t.leaf(std::move(noisy)));
      const NodeId loss =
          t.scale(t.sum(t.square(t.sub(g, t.leaf(std::move(clean))))),
                  1.0 / static_cast<double>(batch.size()));
      t.backward(loss);
      std::vector<const ad::Mat*> grads;
      for (std::size_t i = 0; i < net.w.size(); ++i) {
        grads.push_back(&t.adjoint(net.w[i]));
        grads.push_back(&t.adjoint(net.b[i]));
      }
      ad::adam_step(params, grads, adam);
    }
  }
  return den;
}

NodeId denoise(Tape& t, const Denoiser& den, NodeId x) {
  if (t.value(x).cols() != den.stats.dim()) {
    throw std::invalid_argument(
        "denoise: input has " + std::to_string(t.value(x).cols()) +
        " columns, expected " + std::to_string(den.stats.dim()));
  }
  const NodeId xn = stats_normalize(t, den.stats, x);
  return stats_denormalize(t, den.stats, ad::mlp_forward(t, den.net, xn));
}

VectorXd denoise(const Denoiser& den, const VectorXd& x) {
  Tape t;
  const NodeId out = denoise(t, den, t.leaf(x.transpose()));
  return t.value(out).row(0).transpose();
}

NodeId dae_penalty(Tape& t, const Denoiser& den, NodeId x, bool stop_grad) {
  return dae_penalty(t, attach_denoiser(t, den), x, stop_grad);
}

DenoiserAttached attach_denoiser(Tape& t, const Denoiser& den) {
  DenoiserAttached at;
  at.den = &den;
  at.net = ad::attach_mlp(t, den.net);
  at.neg_mean = t.leaf((-den.stats.mean).transpose());
  at.inv_std = t.leaf(den.stats.std.transpose().cwiseInverse());
  return at;
}

NodeId dae_penalty(Tape& t, const DenoiserAttached& at, NodeId x,
                   bool stop_grad) {
  if (t.value(x).cols() != at.den->stats.dim()) {
    throw std::invalid_argument(
        "dae_penalty: input has " + std::to_string(t.value(x).cols()) +
        " columns, expected " + std::to_string(at.den->stats.dim()));
  }
  const NodeId xn = t.mul_rowvec(t.add_rowvec(x, at.neg_mean), at.inv_std);
  NodeId g = ad::mlp_apply(t, at.net, xn);
  if (stop_grad) g = t.stop_gradient(g);
  return t.rowsum(t.square(t.sub(g, xn)));
}

double dae_penalty(const Denoiser& den, const VectorXd& x) {
  Tape t;
  const NodeId p = dae_penalty(t, den, t.leaf(x.transpose()), false);
  return t.scalar(p);
}

GaussianRegularizer fit_gaussian(const mbrl::ReplayBuffer& buffer, int w) {
  if (buffer.empty()) throw std::invalid_argument("fit_gaussian: empty buffer");
  const MatrixXd rows = buffer.windows(w);
  if (rows.rows() == 0) {
    throw std::invalid_argument("fit_gaussian: no windows of size " +
                                std::to_string(w));
  }
  GaussianRegularizer reg;
  reg.window = w;
  reg.mean = rows.colwise().mean();
  reg.var = (rows.rowwise() - reg.mean.transpose())
                .array()
                .square()
                .colwise()
                .mean()
                .max(reg.floor)
                .matrix();
  return reg;
}

double gaussian_penalty(const GaussianRegularizer& reg, const VectorXd& x) {
  if (x.size() != reg.mean.size()) {
    throw std::invalid_argument("gaussian_penalty: dim mismatch");
  }
  const Eigen::ArrayXd d = (x - reg.mean).array();
  return 0.5 * ((reg.var.array() * 2.0 * M_PI).log() +
                d.square() / reg.var.array())
                   .sum();
}

NodeId gaussian_penalty(Tape& t, const GaussianRegularizer& reg, NodeId x) {
  const double log_det = 0.5 * (reg.var.array() * 2.0 * M_PI).log().sum();
  const NodeId diff = t.add_rowvec(x, t.leaf((-reg.mean).transpose()));
  const NodeId maha = t.rowsum(t.mul_rowvec(
      t.square(diff), t.leaf(reg.var.transpose().cwiseInverse())));
  return t.shift(t.scale(maha, 0.5), log_det);
}

}  // namespace mbplan::models
