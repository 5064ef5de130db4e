#pragma once

#include <map>
#include <string>

#include "mbplan/mbrl.hpp"

namespace mbplan::config {

// Flat key-value configuration with dotted sections:
//
//   env.id = cartpole
//   planner.alpha = 0.001
//   # comment
//
// Parsing and mapping reject unknown or malformed fields by name.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_num(const std::string& key, double dflt) const;
  int get_int(const std::string& key, int dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  const std::map<std::string, std::string>& items() const { return items_; }

 private:
  std::map<std::string, std::string> items_;
};

// Maps a config onto a run, starting from the desk defaults for its env.id
// and rejecting unknown keys. seed_override, when >= 0, wins over run.seed.
struct ParsedRun {
  mbrl::RunConfig run;
  std::uint64_t seed = 0;
};
ParsedRun to_run_config(const Config& cfg);

// Serializes the effective run configuration for the run manifest.
std::map<std::string, std::string> run_config_items(const mbrl::RunConfig& cfg);

}  // namespace mbplan::config
