#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace revcurl {

enum class TrainMode { vanilla, staged, mixed };

enum class RewardVariant { none, linear, square, sqrt, discount };

inline TrainMode parse_mode(const std::string& s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "staged") return TrainMode::staged;
  if (s == "mixed") return TrainMode::mixed;
  throw std::invalid_argument("train.mode: unknown mode '" + s +
                              "' (expected vanilla|staged|mixed)");
}

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::staged: return "staged";
    case TrainMode::mixed: return "mixed";
  }
  return "?";
}

inline RewardVariant parse_variant(const std::string& s) {
  if (s == "none") return RewardVariant::none;
  if (s == "linear") return RewardVariant::linear;
  if (s == "square") return RewardVariant::square;
  if (s == "sqrt") return RewardVariant::sqrt;
  if (s == "discount") return RewardVariant::discount;
  throw std::invalid_argument("reward.variant: unknown variant '" + s +
                              "' (expected none|linear|square|sqrt|discount)");
}

inline const char* variant_name(RewardVariant v) {
  switch (v) {
    case RewardVariant::none: return "none";
    case RewardVariant::linear: return "linear";
    case RewardVariant::square: return "square";
    case RewardVariant::sqrt: return "sqrt";
    case RewardVariant::discount: return "discount";
  }
  return "?";
}

/// Every knob of a run. Parsed from a flat key=value file; every run writes
/// its resolved copy back out so records are self-describing.
struct RunConfig {
  // environment
  int steps_min = 5;
  int steps_max = 5;
  int operand_min = 0;
  int operand_max = 9;
  std::string ops = "+-*";
  int modulus = 10;  // 0 disables reduction (then only '+' is allowed)

  // data
  std::uint64_t data_seed = 9000;
  int train_size = 1000;
  int test_size = 500;

  // curriculum
  int stages = 5;  // M
  TrainMode mode = TrainMode::mixed;

  // rewards
  double epsilon = 0.2;
  double beta = 0.01;
  RewardVariant variant = RewardVariant::none;
  double gamma_d = 0.9;

  // ppo
  double gamma = 1.0;
  double lambda = 0.95;
  double clip = 0.2;
  int ppo_epochs = 2;
  double value_lr = 0.01;  // the value head is a probe and trains on its own rate
  int value_warmup = 10;   // value-head-only updates before policy steps begin
  double kl_stop = 0.02;
  double rl_lr = 2e-4;
  int minibatch_size = 16;

  // rollouts
  int rl_updates = 240;
  int batch_size = 64;
  int max_rollout_len = 64;

  // sft
  double sft_lr = 0.4;
  int sft_epochs = 6;

  // policy
  int embed_dim = 12;
  int hidden_dim = 96;
  int window = 12;

  // evaluation
  int eval_every = 10;
  int eval_difficulty_subset = 200;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
    if (steps_min < 2) fail("env.steps_min: must be >= 2");
    if (steps_max < steps_min) fail("env.steps_max: must be >= env.steps_min");
    if (operand_max < operand_min) fail("env.operand_max: must be >= env.operand_min");
    if (operand_min < 0) fail("env.operand_min: must be >= 0");
    if (ops.empty()) fail("env.ops: must name at least one operation");
    for (char c : ops) {
      if (c != '+' && c != '-' && c != '*') fail(std::string("env.ops: unknown op '") + c + "'");
    }
    if (modulus != 0 && modulus < 2) fail("env.modulus: must be 0 (off) or >= 2");
    if (modulus == 0 && ops != "+") {
      fail("env.modulus: unbounded values are only supported with ops = +");
    }
    if (train_size < 1) fail("data.train_size: must be >= 1");
    if (test_size < 1) fail("data.test_size: must be >= 1");
    if (stages < 1) fail("curriculum.M: must be >= 1");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) fail("reward.epsilon: must satisfy 0 <= eps < 1");
    if (!(beta >= 0.0)) fail("reward.beta: must be >= 0");
    if (!(gamma_d > 0.0 && gamma_d <= 1.0)) fail("reward.gamma_d: must be in (0, 1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("ppo.gamma: must be in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("ppo.lambda: must be in [0, 1]");
    if (!(clip > 0.0)) fail("ppo.clip: must be > 0");
    if (ppo_epochs < 1) fail("ppo.epochs: must be >= 1");
    if (!(value_lr >= 0.0)) fail("ppo.value_lr: must be >= 0");
    if (value_warmup < 0) fail("ppo.value_warmup: must be >= 0");
    if (!(kl_stop > 0.0)) fail("ppo.kl_stop: must be > 0");
    if (!(rl_lr >= 0.0)) fail("ppo.lr: must be >= 0");
    if (minibatch_size < 1) fail("ppo.minibatch_size: must be >= 1");
    if (rl_updates < 0) fail("rl.updates: must be >= 0");
    if (batch_size < 1) fail("rollout.batch_size: must be >= 1");
    if (max_rollout_len < 1) fail("rollout.max_len: must be >= 1");
    if (!(sft_lr >= 0.0)) fail("sft.lr: must be >= 0");
    if (sft_epochs < 0) fail("sft.epochs: must be >= 0");
    if (embed_dim < 1) fail("policy.embed_dim: must be >= 1");
    if (hidden_dim < 1) fail("policy.hidden: must be >= 1");
    if (window < 1) fail("policy.window: must be >= 1");
    if (eval_every < 1) fail("eval.every: must be >= 1");
    if (eval_difficulty_subset < 1) fail("eval.difficulty_subset: must be >= 1");
    if (seeds.empty()) fail("run.seeds: must name at least one seed");
  }
};

namespace detail {

inline long long parse_ll(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add_int = [&k](const std::string& name, int RunConfig::* field) {
      k.push_back({name,
                   [name, field](RunConfig& c, const std::string& v) {
                     c.*field = static_cast<int>(parse_ll(name, v));
                   },
                   [field](const RunConfig& c) { return std::to_string(c.*field); }});
    };
    auto add_double = [&k](const std::string& name, double RunConfig::* field) {
      k.push_back({name,
                   [name, field](RunConfig& c, const std::string& v) {
                     c.*field = parse_double(name, v);
                   },
                   [field](const RunConfig& c) { return format_double(c.*field); }});
    };
    add_int("env.steps_min", &RunConfig::steps_min);
    add_int("env.steps_max", &RunConfig::steps_max);
    add_int("env.operand_min", &RunConfig::operand_min);
    add_int("env.operand_max", &RunConfig::operand_max);
    k.push_back({"env.ops",
                 [](RunConfig& c, const std::string& v) { c.ops = v; },
                 [](const RunConfig& c) { return c.ops; }});
    add_int("env.modulus", &RunConfig::modulus);
    k.push_back({"data.seed",
                 [](RunConfig& c, const std::string& v) {
                   c.data_seed = static_cast<std::uint64_t>(parse_ll("data.seed", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.data_seed); }});
    add_int("data.train_size", &RunConfig::train_size);
    add_int("data.test_size", &RunConfig::test_size);
    add_int("curriculum.M", &RunConfig::stages);
    k.push_back({"train.mode",
                 [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); },
                 [](const RunConfig& c) { return mode_name(c.mode); }});
    add_double("reward.epsilon", &RunConfig::epsilon);
    add_double("reward.beta", &RunConfig::beta);
    k.push_back({"reward.variant",
                 [](RunConfig& c, const std::string& v) { c.variant = parse_variant(v); },
                 [](const RunConfig& c) { return variant_name(c.variant); }});
    add_double("reward.gamma_d", &RunConfig::gamma_d);
    add_double("ppo.gamma", &RunConfig::gamma);
    add_double("ppo.lambda", &RunConfig::lambda);
    add_double("ppo.clip", &RunConfig::clip);
    add_int("ppo.epochs", &RunConfig::ppo_epochs);
    add_double("ppo.value_lr", &RunConfig::value_lr);
    add_int("ppo.value_warmup", &RunConfig::value_warmup);
    add_double("ppo.kl_stop", &RunConfig::kl_stop);
    add_double("ppo.lr", &RunConfig::rl_lr);
    add_int("ppo.minibatch_size", &RunConfig::minibatch_size);
    add_int("rl.updates", &RunConfig::rl_updates);
    add_int("rollout.batch_size", &RunConfig::batch_size);
    add_int("rollout.max_len", &RunConfig::max_rollout_len);
    add_double("sft.lr", &RunConfig::sft_lr);
    add_int("sft.epochs", &RunConfig::sft_epochs);
    add_int("policy.embed_dim", &RunConfig::embed_dim);
    add_int("policy.hidden", &RunConfig::hidden_dim);
    add_int("policy.window", &RunConfig::window);
    add_int("eval.every", &RunConfig::eval_every);
    add_int("eval.difficulty_subset", &RunConfig::eval_difficulty_subset);
    k.push_back({"run.seeds",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::uint64_t> seeds;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     if (item.empty()) continue;
                     seeds.push_back(static_cast<std::uint64_t>(parse_ll("run.seeds", item)));
                   }
                   if (seeds.empty()) throw std::invalid_argument("run.seeds: empty seed list");
                   c.seeds = std::move(seeds);
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                     if (i) out += ',';
                     out += std::to_string(c.seeds[i]);
                   }
                   return out;
                 }});
    return k;
  }();
  return keys;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Sets one `key` to `value`. Bare key names may be used when the suffix after
/// the last dot is unambiguous, e.g. "M" for "curriculum.M".
inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  const detail::ConfigKey* match = nullptr;
  for (const auto& k : keys) {
    if (k.name == key) {
      match = &k;
      break;
    }
  }
  if (!match) {
    int hits = 0;
    for (const auto& k : keys) {
      auto dot = k.name.rfind('.');
      if (dot != std::string::npos && k.name.substr(dot + 1) == key) {
        match = &k;
        ++hits;
      }
    }
    if (hits > 1) {
      throw std::invalid_argument("config key '" + key + "' is ambiguous; use the full name");
    }
  }
  if (!match) throw std::invalid_argument("unknown config key '" + key + "'");
  match->set(cfg, value);
}

/// Applies one "key=value" override on top of a parsed config.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  }
  set_config_key(cfg, detail::trim(assignment.substr(0, eq)),
                 detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + line + "'");
    }
    try {
      set_config_key(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

/// Canonical resolved form: every key, fixed order.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace revcurl
