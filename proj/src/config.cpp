#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "semi/harness.hpp"

namespace semi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::size_t to_size(const std::string& v, const std::string& where, const std::string& key) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-' || v[0] == '+') throw std::invalid_argument("sign");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) {
    throw ConfigError(where, "key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v, const std::string& where, const std::string& key) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(x)) {
    throw ConfigError(where, "key '" + key + "' expects a finite number, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& v, const std::string& where, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where, "key '" + key + "' expects true or false, got '" + v + "'");
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string& value, const std::string& where)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Field>
Entry size_entry(std::string key, Field field) {
  return {key,
          [field, key](RunConfig& c, const std::string& v, const std::string& w) {
            field(c) = to_size(v, w, key);
          },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry double_entry(std::string key, Field field) {
  return {key,
          [field, key](RunConfig& c, const std::string& v, const std::string& w) {
            field(c) = to_double(v, w, key);
          },
          [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry bool_entry(std::string key, Field field) {
  return {key,
          [field, key](RunConfig& c, const std::string& v, const std::string& w) {
            field(c) = to_bool(v, w, key);
          },
          [field](const RunConfig& c) {
            return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"env",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   const auto& names = env_preset_names();
                   if (std::find(names.begin(), names.end(), v) == names.end()) {
                     std::string all;
                     for (const auto& n : names) all += " " + n;
                     throw ConfigError(w, "unknown env preset '" + v + "' (known:" + all + ")");
                   }
                   c.train.env_preset = v;
                 },
                 [](const RunConfig& c) { return c.train.env_preset; }});
    e.push_back({"reward",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   const auto& names = reward_preset_names();
                   if (std::find(names.begin(), names.end(), v) == names.end()) {
                     std::string all;
                     for (const auto& n : names) all += " " + n;
                     throw ConfigError(w, "unknown reward preset '" + v + "' (known:" + all + ")");
                   }
                   c.reward_preset = v;
                 },
                 [](const RunConfig& c) { return c.reward_preset; }});
    e.push_back(size_entry("steps", FIELD(train.total_steps)));
    e.push_back({"seed",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   c.train.seed = to_size(v, w, "seed");
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    e.push_back({"output",
                 [](RunConfig& c, const std::string& v, const std::string&) { c.output = v; },
                 [](const RunConfig& c) { return c.output.string(); }});
    e.push_back(bool_entry("deterministic", FIELD(deterministic)));

    e.push_back(double_entry("reward.gamma_weight", FIELD(train.reward.gamma_weight)));
    e.push_back({"reward.beta_weight",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   c.beta_override = to_double(v, w, "reward.beta_weight");
                 },
                 [](const RunConfig& c) {
                   return fmt(c.beta_override ? *c.beta_override : c.train.reward.beta_weight);
                 }});
    e.push_back(bool_entry("reward.normalize", FIELD(train.reward.normalize)));

    e.push_back(size_entry("env.grid_size", FIELD(train.env.grid_size)));
    e.push_back(size_entry("env.grid_horizon", FIELD(train.env.grid_horizon)));
    e.push_back(size_entry("env.tone_width", FIELD(train.env.tone_width)));
    e.push_back(double_entry("env.noise", FIELD(train.env.noise)));
    e.push_back(double_entry("env.goal_tolerance", FIELD(train.env.goal_tolerance)));
    e.push_back(size_entry("env.sparse_horizon", FIELD(train.env.sparse_horizon)));

    e.push_back(double_entry("alignment.temperature", FIELD(train.alignment.temperature.temperature)));
    e.push_back(bool_entry("alignment.literal_denominator",
                           FIELD(train.alignment.temperature.literal_denominator)));
    e.push_back(size_entry("alignment.pool_capacity", FIELD(train.alignment.pool_capacity)));
    e.push_back(size_entry("alignment.warmup", FIELD(train.alignment.warmup)));
    e.push_back(double_entry("alignment.lr", FIELD(train.alignment.lr)));
    e.push_back(size_entry("alignment.minibatch", FIELD(train.alignment.minibatch)));
    e.push_back(size_entry("alignment.feature_width", FIELD(train.alignment.encoder.feature_width)));
    e.push_back(size_entry("alignment.hidden_width", FIELD(train.alignment.encoder.hidden_width)));
    e.push_back(size_entry("alignment.hidden_layers", FIELD(train.alignment.encoder.hidden_layers)));

    e.push_back(size_entry("policy.hidden_width", FIELD(train.policy.hidden_width)));
    e.push_back(size_entry("policy.hidden_layers", FIELD(train.policy.hidden_layers)));
    e.push_back({"policy.activation",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   try {
                     c.train.policy.activation = activation_from_string(v);
                   } catch (const std::exception& ex) {
                     throw ConfigError(w, ex.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.train.policy.activation); }});
    e.push_back(double_entry("policy.init_log_std", FIELD(train.policy.init_log_std)));

    e.push_back(size_entry("ppo.horizon", FIELD(train.ppo.horizon)));
    e.push_back(size_entry("ppo.num_envs", FIELD(train.ppo.num_envs)));
    e.push_back(double_entry("ppo.discount", FIELD(train.ppo.discount)));
    e.push_back(double_entry("ppo.gae_lambda", FIELD(train.ppo.gae_lambda)));
    e.push_back(double_entry("ppo.clip", FIELD(train.ppo.clip)));
    e.push_back(size_entry("ppo.epochs", FIELD(train.ppo.epochs)));
    e.push_back(size_entry("ppo.minibatches", FIELD(train.ppo.minibatches)));
    e.push_back(double_entry("ppo.entropy_coef", FIELD(train.ppo.entropy_coef)));
    e.push_back(double_entry("ppo.value_coef", FIELD(train.ppo.value_coef)));
    e.push_back(double_entry("ppo.lr", FIELD(train.ppo.lr)));
    e.push_back(double_entry("ppo.max_grad_norm", FIELD(train.ppo.max_grad_norm)));

    e.push_back(size_entry("baselines.ensemble_size", FIELD(train.baselines.ensemble_size)));
    e.push_back(size_entry("baselines.hidden_width", FIELD(train.baselines.hidden_width)));
    e.push_back(size_entry("baselines.rnd_embed_width", FIELD(train.baselines.rnd_embed_width)));
    e.push_back(double_entry("baselines.lr", FIELD(train.baselines.lr)));
    e.push_back(size_entry("baselines.minibatch", FIELD(train.baselines.minibatch)));

    e.push_back(size_entry("target.copy_period", FIELD(train.copy_period)));
    e.push_back({"target.ra_timestep",
                 [](RunConfig& c, const std::string& v, const std::string& w) {
                   try {
                     c.train.ra_timestep = ra_timestep_from_string(v);
                   } catch (const std::exception& ex) {
                     throw ConfigError(w, ex.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.train.ra_timestep); }});

    e.push_back(size_entry("metrics.window", FIELD(train.metric_window)));
    e.push_back(size_entry("checkpoint.every", FIELD(checkpoint_every)));
    e.push_back(bool_entry("checkpoint.trajectory", FIELD(dump_trajectory)));
    return e;
  }();
  return entries;
}

#undef FIELD

}  // namespace

const std::vector<std::string>& reward_preset_names() {
  static const std::vector<std::string> names = {
      "semi-p",    "semi-pa",   "curiosity",         "disagreement",      "rnd",
      "random",    "extrinsic", "extrinsic+semi-pa", "curiosity+semi-pa", "disagreement+semi-pa"};
  return names;
}

void apply_reward_preset(const std::string& preset, TrainConfig& cfg) {
  using C = IntrinsicComponent;
  auto& r = cfg.reward;
  r.components.clear();
  cfg.random_policy = false;
  bool extrinsic = false;
  if (preset == "semi-p") {
    r.components = {C::semi_p};
  } else if (preset == "semi-pa") {
    r.components = {C::semi_p, C::semi_a};
  } else if (preset == "curiosity") {
    r.components = {C::curiosity};
  } else if (preset == "disagreement") {
    r.components = {C::disagreement};
  } else if (preset == "rnd") {
    r.components = {C::rnd};
  } else if (preset == "random") {
    cfg.random_policy = true;
    extrinsic = true;
  } else if (preset == "extrinsic") {
    extrinsic = true;
  } else if (preset == "extrinsic+semi-pa") {
    r.components = {C::semi_p, C::semi_a};
    extrinsic = true;
  } else if (preset == "curiosity+semi-pa") {
    r.components = {C::curiosity, C::semi_p, C::semi_a};
  } else if (preset == "disagreement+semi-pa") {
    r.components = {C::disagreement, C::semi_p, C::semi_a};
  } else {
    throw std::invalid_argument("unknown reward preset '" + preset + "'");
  }
  r.beta_weight = extrinsic ? 1.0 : 0.0;
}

void RunConfig::finalize() {
  apply_reward_preset(reward_preset, train);
  if (beta_override) train.reward.beta_weight = *beta_override;
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config", e.what());
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where) {
  for (const auto& e : registry()) {
    if (e.key == key) {
      e.set(cfg, value, where);
      return;
    }
  }
  throw ConfigError(where, "unknown key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            const std::vector<Override>& overrides) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where, "empty key");
    set_config_value(cfg, section.empty() ? key : section + "." + key, value, where);
  }
  for (const auto& o : overrides) set_config_value(cfg, o.key, o.value, o.where);
  cfg.finalize();
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<Override>& overrides) {
  if (!file) return parse_config_text("", "defaults", overrides);
  std::ifstream in(*file);
  if (!in) throw ConfigError(file->string(), "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), file->string(), overrides);
}

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("SEMI_OUT"); env && *env) return env;
  return "runs";
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
  if (!cfg.output.empty()) return cfg.output;
  return default_output_root() /
         (cfg.train.env_preset + "_" + cfg.reward_preset + "_s" + std::to_string(cfg.train.seed));
}

}  // namespace semi
