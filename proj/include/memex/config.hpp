#pragma once

// Experiment configuration: one JSON object per run. Flags override file values,
// file values override built-in defaults.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "memex/core.hpp"
#include "memex/error.hpp"
#include "memex/numeric.hpp"
#include "memex/samplers.hpp"

namespace memex::cli {

namespace fs = std::filesystem;

/// Keys that change where or how fast a command runs but never what it computes.
inline const std::set<std::string>& execution_keys() {
  static const std::set<std::string> keys{"threads", "out_dir"};
  return keys;
}

class Config {
 public:
  Config() : values_(nlohmann::json::object()) {}
  explicit Config(nlohmann::json values, fs::path base_dir = fs::current_path())
      : values_(std::move(values)), base_dir_(std::move(base_dir)) {
    require(values_.is_object(), ErrorCode::config, "configuration must be a JSON object");
  }

  static Config load(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::io, "cannot open config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, path.string() + ": " + e.what());
    }
    return Config(std::move(j), fs::absolute(path).parent_path());
  }

  bool has(const std::string& key) const { return values_.contains(key) && !values_[key].is_null(); }
  void set(const std::string& key, nlohmann::json v) { values_[key] = std::move(v); }

  template <class T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    try {
      return values_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, "key '" + key + "': " + e.what());
    }
  }

  template <class T>
  T required(const std::string& key) const {
    require(has(key), ErrorCode::config, "missing required key '" + key + "'");
    return get<T>(key, T{});
  }

  double get_in(const std::string& key, double fallback, double lo, double hi, bool open_lo = false) const {
    const double v = get<double>(key, fallback);
    require(open_lo ? v > lo : v >= lo, ErrorCode::config, "key '" + key + "' is below its range");
    require(v <= hi, ErrorCode::config, "key '" + key + "' is above its range");
    return v;
  }

  std::size_t get_count(const std::string& key, std::size_t fallback, std::size_t min = 1) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    require(v.is_number_integer() && v.get<long long>() >= static_cast<long long>(min), ErrorCode::config,
            "key '" + key + "' must be an integer >= " + std::to_string(min));
    return v.get<std::size_t>();
  }

  /// Relative paths resolve against the directory of the config file.
  fs::path path(const std::string& key) const {
    fs::path p = required<std::string>(key);
    return p.is_absolute() ? p : base_dir_ / p;
  }

  /// Like path(), but URLs pass through unchanged.
  std::string location(const std::string& key) const {
    const auto s = required<std::string>(key);
    if (s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0) return s;
    return path(key).string();
  }

  /// Rejects keys outside `allowed` (plus the common ones).
  void check_keys(const std::set<std::string>& allowed) const {
    static const std::set<std::string> common{"command", "seed", "threads", "out_dir", "model"};
    for (const auto& [k, v] : values_.items())
      require(common.count(k) || allowed.count(k), ErrorCode::config, "unknown configuration key '" + k + "'");
  }

  /// Hash of the canonical JSON without execution-only keys. Paths are hashed as written.
  std::string hash() const {
    nlohmann::json j = values_;
    for (const auto& k : execution_keys()) j.erase(k);
    return hex64(fnv1a64(j.dump()));
  }

  const nlohmann::json& values() const { return values_; }
  const fs::path& base_dir() const { return base_dir_; }

  std::uint64_t seed() const { return get<std::uint64_t>("seed", 0); }
  std::size_t threads() const { return get_count("threads", 1); }
  fs::path out_dir() const {
    fs::path p = get<std::string>("out_dir", ".");
    return p.is_absolute() ? p : fs::current_path() / p;
  }

  std::vector<Resolution> step_set(const std::vector<std::string>& fallback) const {
    std::vector<std::string> labels = fallback;
    if (has("step_set")) {
      const auto& v = values_.at("step_set");
      labels.clear();
      if (v.is_string()) {
        std::stringstream ss(v.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ',')) labels.push_back(item);
      } else {
        for (const auto& x : v) labels.push_back(x.is_string() ? x.get<std::string>() : std::to_string(x.get<long>()));
      }
    }
    require(!labels.empty(), ErrorCode::config, "step_set is empty");
    std::vector<Resolution> out;
    for (const auto& l : labels) out.push_back(Resolution::parse(l));
    return out;
  }

  /// position_rule, token_rule, temperature, top_k, gumbel_temperature.
  SamplerConfig sampler(PositionRule fallback = PositionRule::random_uniform) const {
    SamplerConfig s;
    s.seed = seed();
    s.position_rule = has("position_rule") ? parse_position_rule(get<std::string>("position_rule", "")) : fallback;
    const auto rule = get<std::string>("token_rule", "plain");
    if (rule == "plain")
      s.token_rule = TokenRule::plain();
    else if (rule == "argmax")
      s.token_rule = TokenRule::argmax();
    else if (rule == "temperature")
      s.token_rule = TokenRule::with_temperature(get<double>("temperature", 1.0));
    else if (rule == "top_k")
      s.token_rule = TokenRule::with_top_k(get_count("top_k", 1));
    else if (rule == "gumbel")
      s.token_rule = TokenRule::with_gumbel(get<double>("gumbel_temperature", 1.0));
    else
      fail(ErrorCode::config, "unknown token rule '" + rule + "'");
    return s;
  }

  StepRule step_rule() const {
    const auto s = get<std::string>("step_rule", "floor");
    if (s == "floor") return StepRule::literal_floor;
    if (s == "at_least_one") return StepRule::at_least_one;
    fail(ErrorCode::config, "unknown step rule '" + s + "'");
  }

 private:
  nlohmann::json values_;
  fs::path base_dir_ = fs::current_path();
};

inline const std::set<std::string> kSamplerKeys{"position_rule", "token_rule", "temperature", "top_k",
                                                 "gumbel_temperature", "step_rule"};

}  // namespace memex::cli
