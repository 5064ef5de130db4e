#include "mbplan/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mbplan/presets.hpp"

namespace mbplan::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_num(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) {
    throw std::invalid_argument("config field '" + key + "': '" + value +
                                "' is not a number");
  }
  return v;
}

}  // namespace

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    }
    if (cfg.items_.count(key)) {
      throw std::invalid_argument("config field '" + key + "': duplicated");
    }
    cfg.items_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

bool Config::has(const std::string& key) const { return items_.count(key) > 0; }

std::string Config::get_str(const std::string& key) const {
  const auto it = items_.find(key);
  if (it == items_.end()) {
    throw std::invalid_argument("config field '" + key + "': missing");
  }
  return it->second;
}

std::string Config::get_str(const std::string& key,
                            const std::string& dflt) const {
  const auto it = items_.find(key);
  return it == items_.end() ? dflt : it->second;
}

double Config::get_num(const std::string& key, double dflt) const {
  const auto it = items_.find(key);
  return it == items_.end() ? dflt : parse_num(key, it->second);
}

int Config::get_int(const std::string& key, int dflt) const {
  const double v = get_num(key, dflt);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) {
    throw std::invalid_argument("config field '" + key + "': expected integer");
  }
  return i;
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  const auto it = items_.find(key);
  if (it == items_.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::invalid_argument("config field '" + key + "': expected bool");
}

ParsedRun to_run_config(const Config& cfg) {
  static const std::set<std::string> kKnown = {
      "env.id",          "run.episodes",       "run.random_episodes",
      "run.seed",        "model.epochs",       "model.batch",
      "model.lr",        "model.from_scratch", "dae.sigma",
      "dae.w",           "dae.epochs",         "dae.batch",
      "dae.lr",          "planner.kind",       "planner.regularizer",
      "planner.alpha",   "planner.stop_grad",  "mpc.horizon",
      "mpc.exploration_noise",                 "mpc.warm_start",
      "mpc.shift_fill",  "cem.population",     "cem.elites",
      "cem.iterations",  "cem.init_std",       "cem.std_floor",
      "cem.smoothing",   "adam.iterations",    "adam.lr",
      "adam.restarts",   "adam.warm_start",    "adam.cem_init_iters",
      "eval.chunk",
  };
  for (const auto& [key, value] : cfg.items()) {
    if (!kKnown.count(key)) {
      throw std::invalid_argument("config field '" + key + "': unknown");
    }
  }
  if (!cfg.has("env.id")) {
    throw std::invalid_argument("config field 'env.id': missing");
  }

  ParsedRun out;
  mbrl::RunConfig& run = out.run;
  run = presets::desk_run_config(cfg.get_str("env.id"));

  run.episodes = cfg.get_int("run.episodes", run.episodes);
  run.random_episodes = cfg.get_int("run.random_episodes", run.random_episodes);
  out.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 0));

  run.model_train.epochs = cfg.get_int("model.epochs", run.model_train.epochs);
  run.model_train.batch_size = cfg.get_int("model.batch", run.model_train.batch_size);
  run.model_train.lr = cfg.get_num("model.lr", run.model_train.lr);
  run.model_from_scratch = cfg.get_bool("model.from_scratch", run.model_from_scratch);

  run.dae_train.sigma_n = cfg.get_num("dae.sigma", run.dae_train.sigma_n);
  run.dae_train.window = cfg.get_int("dae.w", run.dae_train.window);
  run.dae_train.epochs = cfg.get_int("dae.epochs", run.dae_train.epochs);
  run.dae_train.batch_size = cfg.get_int("dae.batch", run.dae_train.batch_size);
  run.dae_train.lr = cfg.get_num("dae.lr", run.dae_train.lr);

  const std::string kind = cfg.get_str("planner.kind", "cem");
  if (kind == "cem") {
    run.mpc.planner = control::PlannerKind::kCem;
  } else if (kind == "adam") {
    run.mpc.planner = control::PlannerKind::kAdam;
  } else if (kind == "cem-then-adam") {
    run.mpc.planner = control::PlannerKind::kCemThenAdam;
  } else {
    throw std::invalid_argument(
        "config field 'planner.kind': expected cem|adam|cem-then-adam");
  }

  const std::string reg = cfg.get_str("planner.regularizer", "dae");
  if (reg == "dae") {
    run.regularizer = mbrl::RegularizerKind::kDae;
  } else if (reg == "gaussian") {
    run.regularizer = mbrl::RegularizerKind::kGaussian;
  } else if (reg == "none") {
    run.regularizer = mbrl::RegularizerKind::kNone;
  } else {
    throw std::invalid_argument(
        "config field 'planner.regularizer': expected dae|gaussian|none");
  }

  run.alpha = cfg.get_num("planner.alpha", run.alpha);
  run.stop_grad = cfg.get_bool("planner.stop_grad", run.stop_grad);

  run.mpc.horizon = cfg.get_int("mpc.horizon", run.mpc.horizon);
  run.mpc.exploration_noise =
      cfg.get_num("mpc.exploration_noise", run.mpc.exploration_noise);

  const std::string warm = cfg.get_str("mpc.warm_start", "shift");
  if (warm == "shift") {
    run.mpc.warm_start = planning::WarmStartMode::kShiftPrevious;
  } else if (warm == "cold") {
    run.mpc.warm_start = planning::WarmStartMode::kCold;
  } else {
    throw std::invalid_argument(
        "config field 'mpc.warm_start': expected shift|cold");
  }

  const std::string fill = cfg.get_str("mpc.shift_fill", "repeat");
  if (fill == "repeat") {
    run.mpc.shift_fill = planning::ShiftFill::kRepeatLast;
  } else if (fill == "zeros") {
    run.mpc.shift_fill = planning::ShiftFill::kZeros;
  } else {
    throw std::invalid_argument(
        "config field 'mpc.shift_fill': expected repeat|zeros");
  }

  run.mpc.cem.population = cfg.get_int("cem.population", run.mpc.cem.population);
  run.mpc.cem.elites = cfg.get_int("cem.elites", run.mpc.cem.elites);
  run.mpc.cem.iterations = cfg.get_int("cem.iterations", run.mpc.cem.iterations);
  if (cfg.has("cem.init_std")) {
    const double std = cfg.get_num("cem.init_std", 0.0);
    const auto env = envs::make_env(run.env_id);
    run.mpc.cem.init_std = Eigen::VectorXd::Constant(env.act_dim, std);
  }
  run.mpc.cem.std_floor = cfg.get_num("cem.std_floor", run.mpc.cem.std_floor);
  run.mpc.cem.smoothing = cfg.get_num("cem.smoothing", run.mpc.cem.smoothing);

  run.mpc.grad.iterations = cfg.get_int("adam.iterations", run.mpc.grad.iterations);
  run.mpc.grad.lr = cfg.get_num("adam.lr", run.mpc.grad.lr);
  run.mpc.grad.restarts = cfg.get_int("adam.restarts", run.mpc.grad.restarts);
  const std::string gws = cfg.get_str("adam.warm_start", "");
  if (gws == "cold") {
    run.mpc.grad.warm_start = planning::WarmStartMode::kCold;
  } else if (gws == "shift") {
    run.mpc.grad.warm_start = planning::WarmStartMode::kShiftPrevious;
  } else if (gws == "cem-init") {
    run.mpc.grad.warm_start = planning::WarmStartMode::kCemInit;
  } else if (!gws.empty()) {
    throw std::invalid_argument(
        "config field 'adam.warm_start': expected cold|shift|cem-init");
  }
  run.mpc.grad.cem_init_iters =
      cfg.get_int("adam.cem_init_iters", run.mpc.grad.cem_init_iters);
  run.mpc.eval.chunk = cfg.get_int("eval.chunk", run.mpc.eval.chunk);

  run.validate();
  return out;
}

std::map<std::string, std::string> run_config_items(const mbrl::RunConfig& cfg) {
  std::map<std::string, std::string> m;
  const auto num = [](double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  };
  m["env.id"] = cfg.env_id;
  m["run.episodes"] = std::to_string(cfg.episodes);
  m["run.random_episodes"] = std::to_string(cfg.random_episodes);
  m["model.epochs"] = std::to_string(cfg.model_train.epochs);
  m["model.batch"] = std::to_string(cfg.model_train.batch_size);
  m["model.lr"] = num(cfg.model_train.lr);
  m["model.from_scratch"] = cfg.model_from_scratch ? "true" : "false";
  m["dae.sigma"] = num(cfg.dae_train.sigma_n);
  m["dae.w"] = std::to_string(cfg.dae_train.window);
  m["dae.epochs"] = std::to_string(cfg.dae_train.epochs);
  m["dae.batch"] = std::to_string(cfg.dae_train.batch_size);
  m["dae.lr"] = num(cfg.dae_train.lr);
  switch (cfg.mpc.planner) {
    case control::PlannerKind::kCem: m["planner.kind"] = "cem"; break;
    case control::PlannerKind::kAdam: m["planner.kind"] = "adam"; break;
    case control::PlannerKind::kCemThenAdam:
      m["planner.kind"] = "cem-then-adam";
      break;
  }
  switch (cfg.regularizer) {
    case mbrl::RegularizerKind::kDae: m["planner.regularizer"] = "dae"; break;
    case mbrl::RegularizerKind::kGaussian:
      m["planner.regularizer"] = "gaussian";
      break;
    case mbrl::RegularizerKind::kNone: m["planner.regularizer"] = "none"; break;
  }
  m["planner.alpha"] = num(cfg.alpha);
  m["planner.stop_grad"] = cfg.stop_grad ? "true" : "false";
  m["mpc.horizon"] = std::to_string(cfg.mpc.horizon);
  m["mpc.exploration_noise"] = num(cfg.mpc.exploration_noise);
  m["cem.population"] = std::to_string(cfg.mpc.cem.population);
  m["cem.elites"] = std::to_string(cfg.mpc.cem.elites);
  m["cem.iterations"] = std::to_string(cfg.mpc.cem.iterations);
  m["cem.std_floor"] = num(cfg.mpc.cem.std_floor);
  m["cem.smoothing"] = num(cfg.mpc.cem.smoothing);
  m["adam.iterations"] = std::to_string(cfg.mpc.grad.iterations);
  m["adam.lr"] = num(cfg.mpc.grad.lr);
  m["adam.restarts"] = std::to_string(cfg.mpc.grad.restarts);
  switch (cfg.mpc.grad.warm_start) {
    case planning::WarmStartMode::kCold: m["adam.warm_start"] = "cold"; break;
    case planning::WarmStartMode::kShiftPrevious:
      m["adam.warm_start"] = "shift";
      break;
    case planning::WarmStartMode::kCemInit:
      m["adam.warm_start"] = "cem-init";
      break;
  }
  m["adam.cem_init_iters"] = std::to_string(cfg.mpc.grad.cem_init_iters);
  m["eval.chunk"] = std::to_string(cfg.mpc.eval.chunk);
  return m;
}

}  // namespace mbplan::config
