#include "mbplan/mbrl.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mbplan::mbrl {

namespace {

using Eigen::VectorXd;
using json = nlohmann::json;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

planning::ObjectiveSpec make_objective(const RunConfig& cfg,
                                       const envs::EnvSpec& env,
                                       const planning::RolloutDynamics& dyn,
                                       const models::Denoiser* dae,
                                       const models::GaussianRegularizer* gauss) {
  planning::ObjectiveSpec spec;
  spec.dynamics = &dyn;
  spec.reward = env.reward_node;
  spec.alpha = cfg.alpha;
  spec.window = cfg.dae_train.window;
  spec.stop_grad = cfg.stop_grad;
  switch (cfg.regularizer) {
    case RegularizerKind::kNone:
      spec.regularizer = planning::Regularizer::kNone;
      break;
    case RegularizerKind::kDae:
      spec.regularizer = planning::Regularizer::kDae;
      spec.dae = dae;
      break;
    case RegularizerKind::kGaussian:
      spec.regularizer = planning::Regularizer::kGaussian;
      spec.gaussian = gauss;
      break;
  }
  return spec;
}

// Mean over planning steps of (imagined plan return minus the realized
// return over the same horizon window); steps whose horizon runs past the
// episode end are skipped.
std::pair<double, double> episode_gap(const Episode& ep,
                                      const std::vector<control::StepDiagnostics>& steps,
                                      int horizon) {
  const int T = ep.length();
  double imagined_sum = 0.0;
  int n_im = 0;
  for (const auto& d : steps) {
    imagined_sum += d.imagined_return;
    ++n_im;
  }
  double gap_sum = 0.0;
  int n_gap = 0;
  for (int t = 0; t + horizon < T; ++t) {
    double realized = 0.0;
    for (int k = 0; k <= horizon; ++k) realized += ep.rewards(t + k);
    gap_sum += steps[t].imagined_return - realized;
    ++n_gap;
  }
  return {n_im > 0 ? imagined_sum / n_im : 0.0,
          n_gap > 0 ? gap_sum / n_gap : 0.0};
}

json episode_to_json(const Episode& ep) {
  json j;
  j["v"] = 1;
  j["obs"] = std::vector<std::vector<double>>();
  for (Eigen::Index r = 0; r < ep.observations.rows(); ++r) {
    std::vector<double> row(ep.observations.cols());
    for (Eigen::Index c = 0; c < ep.observations.cols(); ++c) {
      row[c] = ep.observations(r, c);
    }
    j["obs"].push_back(row);
  }
  j["act"] = std::vector<std::vector<double>>();
  for (Eigen::Index r = 0; r < ep.actions.rows(); ++r) {
    std::vector<double> row(ep.actions.cols());
    for (Eigen::Index c = 0; c < ep.actions.cols(); ++c) {
      row[c] = ep.actions(r, c);
    }
    j["act"].push_back(row);
  }
  j["rew"] = std::vector<double>(ep.rewards.data(),
                                 ep.rewards.data() + ep.rewards.size());
  j["truncated"] = ep.truncated;
  j["diverged"] = ep.diverged;
  return j;
}

void write_binary(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void write_i32(std::ofstream& out, std::int32_t v) { write_binary(out, &v, 4); }
void write_f64(std::ofstream& out, double v) { write_binary(out, &v, 8); }

std::int32_t read_i32(std::ifstream& in) {
  std::int32_t v;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

double read_f64(std::ifstream& in) {
  double v;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_vector(std::ofstream& out, const Eigen::VectorXd& v) {
  write_i32(out, static_cast<std::int32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(out, v(i));
}

Eigen::VectorXd read_vector(std::ifstream& in) {
  const std::int32_t n = read_i32(in);
  Eigen::VectorXd v(n);
  for (std::int32_t i = 0; i < n; ++i) v(i) = read_f64(in);
  return v;
}

void write_stats(std::ofstream& out, const NormStats& s) {
  write_vector(out, s.mean);
  write_vector(out, s.std);
}

NormStats read_stats(std::ifstream& in) {
  NormStats s;
  s.mean = read_vector(in);
  s.std = read_vector(in);
  return s;
}

void write_mlp(std::ofstream& out, const ad::MlpParams& p) {
  write_i32(out, static_cast<std::int32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    write_i32(out, static_cast<std::int32_t>(l.w.rows()));
    write_i32(out, static_cast<std::int32_t>(l.w.cols()));
    write_i32(out, static_cast<std::int32_t>(l.act));
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) write_f64(out, l.w(r, c));
    }
    for (Eigen::Index c = 0; c < l.b.cols(); ++c) write_f64(out, l.b(0, c));
  }
}

ad::MlpParams read_mlp(std::ifstream& in) {
  ad::MlpParams p;
  const std::int32_t n = read_i32(in);
  for (std::int32_t i = 0; i < n; ++i) {
    ad::MlpParams::Layer l;
    const std::int32_t rows = read_i32(in);
    const std::int32_t cols = read_i32(in);
    l.act = static_cast<ad::Activation>(read_i32(in));
    l.w.resize(rows, cols);
    for (std::int32_t r = 0; r < rows; ++r) {
      for (std::int32_t c = 0; c < cols; ++c) l.w(r, c) = read_f64(in);
    }
    l.b.resize(1, cols);
    for (std::int32_t c = 0; c < cols; ++c) l.b(0, c) = read_f64(in);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

constexpr std::int32_t kMagic = 0x4d42504d;  // "MBPM"
constexpr std::int32_t kVersion = 1;
constexpr std::int32_t kKindDynamics = 1;
constexpr std::int32_t kKindDenoiser = 2;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

}  // namespace

Episode collect_random_episode(const envs::EnvSpec& env, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd state = env.init_state(rng);
  const int T = env.episode_len;

  Episode ep;
  ep.observations.resize(T + 1, env.obs_dim);
  ep.actions.resize(T, env.act_dim);
  ep.rewards.resize(T);

  int done = 0;
  for (int t = 0; t < T; ++t) {
    VectorXd a(env.act_dim);
    for (int d = 0; d < env.act_dim; ++d) {
      a(d) = rng.uniform(env.act_low(d), env.act_high(d));
    }
    const VectorXd obs = envs::observe(env, state);
    ep.observations.row(t) = obs.transpose();
    ep.actions.row(t) = a.transpose();
    ep.rewards(t) = envs::reward(env, obs, a);
    done = t + 1;
    const VectorXd next = envs::step(env, state, a);
    if (!envs::state_finite(next)) {
      ep.diverged = true;
      break;
    }
    state = next;
  }
  ep.observations.row(done) = envs::observe(env, state).transpose();
  if (done < T) {
    ep.observations.conservativeResize(done + 1, Eigen::NoChange);
    ep.actions.conservativeResize(done, Eigen::NoChange);
    ep.rewards.conservativeResize(done);
    ep.truncated = true;
  }
  return ep;
}

void RunConfig::validate() const {
  const auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field '" + field + "': " + why);
  };
  try {
    envs::make_env(env_id);
  } catch (const std::exception&) {
    fail("env.id", "unknown environment '" + env_id + "'");
  }
  if (episodes < 0) fail("run.episodes", "must be >= 0");
  if (random_episodes < 1) fail("run.random_episodes", "must be >= 1");
  if (model_train.epochs < 1) fail("model.epochs", "must be >= 1");
  if (model_train.batch_size < 1) fail("model.batch", "must be >= 1");
  if (!(model_train.lr > 0)) fail("model.lr", "must be > 0");
  if (dae_train.epochs < 1) fail("dae.epochs", "must be >= 1");
  if (dae_train.batch_size < 1) fail("dae.batch", "must be >= 1");
  if (!(dae_train.lr > 0)) fail("dae.lr", "must be > 0");
  if (!(dae_train.sigma_n > 0)) fail("dae.sigma", "must be > 0");
  if (dae_train.window < 1) fail("dae.w", "must be >= 1");
  if (alpha < 0) fail("planner.alpha", "must be >= 0");
  if (mpc.horizon < 1) fail("mpc.horizon", "must be >= 1");
  if (mpc.cem.population < 1) fail("cem.population", "must be >= 1");
  if (mpc.cem.elites < 1 || mpc.cem.elites > mpc.cem.population) {
    fail("cem.elites", "need 1 <= elites <= population");
  }
  if (mpc.cem.iterations < 1) fail("cem.iterations", "must be >= 1");
  if (mpc.grad.iterations < 1) fail("adam.iterations", "must be >= 1");
  if (!(mpc.grad.lr > 0)) fail("adam.lr", "must be > 0");
  if (mpc.grad.restarts < 1) fail("adam.restarts", "must be >= 1");
  if (mpc.exploration_noise < 0) fail("mpc.exploration_noise", "must be >= 0");
}

RunResult run_training(const RunConfig& cfg, std::uint64_t seed,
                       const std::string& out_dir) {
  cfg.validate();
  const envs::EnvSpec env = envs::make_env(cfg.env_id);

  const bool persist = !out_dir.empty();
  std::ofstream metrics_out, buffer_out;
  if (persist) {
    std::filesystem::create_directories(out_dir);
    metrics_out.open(out_dir + "/metrics.jsonl", std::ios::trunc);
    buffer_out.open(out_dir + "/buffer.jsonl", std::ios::trunc);
  }

  RunResult res;
  res.buffer = ReplayBuffer(env.obs_dim, env.act_dim);

  auto emit = [&](const EpisodeMetrics& m, const Episode& ep) {
    res.metrics.push_back(m);
    res.returns.push_back(m.ret);
    if (persist) {
      metrics_out << metrics_to_json(m) << "\n";
      metrics_out.flush();
      buffer_out << episode_to_json(ep).dump() << "\n";
      buffer_out.flush();
    }
  };

  int episode_index = 0;
  for (int i = 0; i < cfg.random_episodes; ++i) {
    const double t0 = now_seconds();
    Episode ep = collect_random_episode(env, Rng::mix(seed, 1000 + i));
    EpisodeMetrics m;
    m.episode = episode_index++;
    m.ret = ep.total_reward();
    m.wall_time_s = now_seconds() - t0;
    emit(m, ep);
    res.buffer.add(std::move(ep));
  }

  for (int ep_idx = 0; ep_idx < cfg.episodes; ++ep_idx) {
    const double t0 = now_seconds();

    models::TrainConfig mt = cfg.model_train;
    mt.seed = Rng::mix(seed, 2000 + ep_idx);
    const models::DynamicsModel* warm =
        (!cfg.model_from_scratch && res.model.has_value()) ? &*res.model
                                                           : nullptr;
    try {
      res.model = models::train_dynamics(res.buffer, mt, warm);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage train_dynamics: ") + e.what());
    }
    const double val_nll = models::validation_nll(*res.model, res.buffer);

    models::GaussianRegularizer gauss;
    if (cfg.regularizer == RegularizerKind::kDae) {
      models::DaeTrainConfig dt = cfg.dae_train;
      dt.seed = Rng::mix(seed, 3000 + ep_idx);
      try {
        res.dae = models::train_dae(res.buffer, dt);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage train_dae: ") + e.what());
      }
    } else if (cfg.regularizer == RegularizerKind::kGaussian) {
      gauss = models::fit_gaussian(res.buffer, cfg.dae_train.window);
    }

    const planning::ModelDynamics dyn(*res.model);
    const planning::ObjectiveSpec objective = make_objective(
        cfg, env, dyn, res.dae.has_value() ? &*res.dae : nullptr, &gauss);

    control::MpcResult mpc;
    try {
      mpc = control::mpc_episode(env, objective, cfg.mpc,
                                 Rng::mix(seed, 4000 + ep_idx));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage mpc_episode: ") + e.what());
    }

    EpisodeMetrics m;
    m.episode = episode_index++;
    m.ret = mpc.episode.total_reward();
    const auto [imagined, gap] =
        episode_gap(mpc.episode, mpc.steps, cfg.mpc.horizon);
    m.imagined_return = imagined;
    m.gap = gap;
    double pen = 0.0;
    for (const auto& d : mpc.steps) pen += d.mean_penalty;
    m.mean_dae_penalty = mpc.steps.empty() ? 0.0 : pen / mpc.steps.size();
    m.model_val_nll = val_nll;
    m.wall_time_s = now_seconds() - t0;
    emit(m, mpc.episode);
    res.buffer.add(std::move(mpc.episode));

    if (persist) {
      save_dynamics(out_dir + "/dynamics.bin", *res.model);
      if (res.dae.has_value()) {
        save_denoiser(out_dir + "/dae.bin", *res.dae);
      }
    }
  }
  return res;
}

void save_dynamics(const std::string& path, const models::DynamicsModel& m) {
  auto out = open_out(path);
  write_i32(out, kMagic);
  write_i32(out, kVersion);
  write_i32(out, kKindDynamics);
  write_i32(out, m.obs_dim);
  write_i32(out, m.act_dim);
  write_f64(out, m.logvar_min);
  write_f64(out, m.logvar_max);
  write_stats(out, m.in_stats);
  write_stats(out, m.delta_stats);
  write_mlp(out, m.trunk);
  write_mlp(out, m.mean_head);
  write_mlp(out, m.logvar_head);
}

models::DynamicsModel load_dynamics(const std::string& path) {
  auto in = open_in(path);
  if (read_i32(in) != kMagic || read_i32(in) != kVersion ||
      read_i32(in) != kKindDynamics) {
    throw std::runtime_error(path + ": not a dynamics checkpoint");
  }
  models::DynamicsModel m;
  m.obs_dim = read_i32(in);
  m.act_dim = read_i32(in);
  m.logvar_min = read_f64(in);
  m.logvar_max = read_f64(in);
  m.in_stats = read_stats(in);
  m.delta_stats = read_stats(in);
  m.trunk = read_mlp(in);
  m.mean_head = read_mlp(in);
  m.logvar_head = read_mlp(in);
  return m;
}

void save_denoiser(const std::string& path, const models::Denoiser& d) {
  auto out = open_out(path);
  write_i32(out, kMagic);
  write_i32(out, kVersion);
  write_i32(out, kKindDenoiser);
  write_i32(out, d.obs_dim);
  write_i32(out, d.act_dim);
  write_i32(out, d.window);
  write_f64(out, d.sigma_n);
  write_stats(out, d.stats);
  write_mlp(out, d.net);
}

models::Denoiser load_denoiser(const std::string& path) {
  auto in = open_in(path);
  if (read_i32(in) != kMagic || read_i32(in) != kVersion ||
      read_i32(in) != kKindDenoiser) {
    throw std::runtime_error(path + ": not a denoiser checkpoint");
  }
  models::Denoiser d;
  d.obs_dim = read_i32(in);
  d.act_dim = read_i32(in);
  d.window = read_i32(in);
  d.sigma_n = read_f64(in);
  d.stats = read_stats(in);
  d.net = read_mlp(in);
  return d;
}

void save_buffer_jsonl(const std::string& path, const ReplayBuffer& buffer) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (int i = 0; i < buffer.num_episodes(); ++i) {
    out << episode_to_json(buffer.episode(i)).dump() << "\n";
  }
}

ReplayBuffer load_buffer_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Episode> eps;
  int obs_dim = 0, act_dim = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Episode ep;
    const auto& obs = j.at("obs");
    const auto& act = j.at("act");
    const auto& rew = j.at("rew");
    obs_dim = obs.empty() ? obs_dim : static_cast<int>(obs[0].size());
    act_dim = act.empty() ? act_dim : static_cast<int>(act[0].size());
    ep.observations.resize(obs.size(), obs_dim);
    for (std::size_t r = 0; r < obs.size(); ++r) {
      for (int c = 0; c < obs_dim; ++c) ep.observations(r, c) = obs[r][c];
    }
    ep.actions.resize(act.size(), act_dim);
    for (std::size_t r = 0; r < act.size(); ++r) {
      for (int c = 0; c < act_dim; ++c) ep.actions(r, c) = act[r][c];
    }
    ep.rewards.resize(rew.size());
    for (std::size_t r = 0; r < rew.size(); ++r) ep.rewards(r) = rew[r];
    ep.truncated = j.value("truncated", false);
    ep.diverged = j.value("diverged", false);
    eps.push_back(std::move(ep));
  }
  ReplayBuffer buffer(obs_dim, act_dim);
  for (auto& ep : eps) buffer.add(std::move(ep));
  return buffer;
}

std::string metrics_to_json(const EpisodeMetrics& m) {
  json j;
  j["episode"] = m.episode;
  j["return"] = m.ret;
  j["imagined_return"] = m.imagined_return;
  j["gap"] = m.gap;
  j["mean_dae_penalty"] = m.mean_dae_penalty;
  j["model_val_nll"] = m.model_val_nll;
  j["wall_time_s"] = m.wall_time_s;
  return j.dump();
}

EpisodeMetrics metrics_from_json(const std::string& line) {
  const json j = json::parse(line);
  EpisodeMetrics m;
  m.episode = j.at("episode");
  m.ret = j.at("return");
  m.imagined_return = j.at("imagined_return");
  m.gap = j.at("gap");
  m.mean_dae_penalty = j.at("mean_dae_penalty");
  m.model_val_nll = j.at("model_val_nll");
  m.wall_time_s = j.at("wall_time_s");
  return m;
}

}  // namespace mbplan::mbrl
