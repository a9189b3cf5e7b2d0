#pragma once

// Run configuration shared by every CLI subcommand.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"
#include "mashost/hrpo.hpp"
#include "mashost/http.hpp"
#include "mashost/reward.hpp"
#include "mashost/rollout.hpp"
#include "mashost/synth.hpp"

namespace mashost {

inline ProbePolicy probe_from_string(const std::string& s) {
  if (s == "every") return ProbePolicy::Every;
  if (s == "on-change") return ProbePolicy::OnChange;
  if (s == "off") return ProbePolicy::Off;
  throw ConfigError("probe policy must be every, on-change or off (got " + s + ")");
}

inline std::string to_string(ProbePolicy p) {
  switch (p) {
    case ProbePolicy::Every:
      return "every";
    case ProbePolicy::OnChange:
      return "on-change";
    case ProbePolicy::Off:
      return "off";
  }
  return "every";
}

inline CacheScope cache_scope_from_string(const std::string& s) {
  if (s == "off") return CacheScope::Off;
  if (s == "rollout") return CacheScope::Rollout;
  if (s == "run") return CacheScope::Run;
  throw ConfigError("cache scope must be off, rollout or run (got " + s + ")");
}

inline std::string to_string(CacheScope c) {
  switch (c) {
    case CacheScope::Off:
      return "off";
    case CacheScope::Rollout:
      return "rollout";
    case CacheScope::Run:
      return "run";
  }
  return "off";
}

struct RunConfig {
  RewardConfig reward;
  std::string role_pool_path = "data/roles.json";
  std::string backend = "synth";  // mock | synth | http
  std::string dataset_path;       // required for mock and http
  std::string world_path;         // synth: world spec file (else `world`)
  SynthWorld world;
  std::size_t train_tasks = 2000;  // synth: generated training queries
  std::size_t eval_tasks = 200;    // synth: generated held-out queries
  std::string out_dir = "runs/default";
  std::uint64_t seed = 0;
  std::string probe = "every";
  std::string cache_scope = "off";
  std::size_t feature_dim = 256;
  std::size_t hidden = 64;
  double init_scale = 0.05;
  std::string featurizer = "hash";  // hash | embedding
  double temperature = 1.0;
  int threads = 1;
  double price_prompt_per_million = 0.15;
  double price_completion_per_million = 0.60;
  std::optional<std::string> mock_answer;
  bool export_dot = true;
  bool export_json = true;
  HttpConfig http;
  HttpConfig embedding{"https://api.openai.com/v1/embeddings", "text-embedding-3-small",
                       "OPENAI_API_KEY", std::nullopt, 60000, 3, 500};

  ProbePolicy probe_policy() const { return probe_from_string(probe); }
  CacheScope cache() const { return cache_scope_from_string(cache_scope); }

  TrainingOptions training_options() const {
    TrainingOptions o;
    o.seed = seed;
    o.probe = probe_policy();
    o.cache_scope = cache();
    o.rollout_threads = threads;
    o.temperature = temperature;
    return o;
  }

  void validate() const {
    reward.validate();
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (backend != "mock" && backend != "synth" && backend != "http")
      fail("backend must be mock, synth or http (got " + backend + ")");
    if (role_pool_path.empty() || !std::filesystem::is_regular_file(role_pool_path))
      fail("role pool file not found: " + role_pool_path);
    if (backend != "synth" && dataset_path.empty()) fail(backend + " backend needs a dataset path");
    if (!dataset_path.empty() && !std::filesystem::is_regular_file(dataset_path))
      fail("dataset file not found: " + dataset_path);
    if (!world_path.empty() && !std::filesystem::is_regular_file(world_path))
      fail("world spec not found: " + world_path);
    if (backend == "synth") {
      world.validate(static_cast<std::size_t>(reward.max_steps));
      if (train_tasks < 1) fail("train_tasks must be >= 1");
    }
    probe_policy();
    cache();
    if (featurizer != "hash" && featurizer != "embedding")
      fail("featurizer must be hash or embedding (got " + featurizer + ")");
    if (feature_dim < 1 || hidden < 1) fail("feature_dim and hidden must be >= 1");
    if (!(temperature > 0)) fail("temperature must be positive");
    if (threads < 1) fail("threads must be >= 1");
    if (price_prompt_per_million < 0 || price_completion_per_million < 0)
      fail("token prices must be >= 0");
    if (out_dir.empty()) fail("out_dir must be set");
  }

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.to_json() == b.to_json();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["reward"] = nlohmann::json(reward);
    j["role_pool_path"] = role_pool_path;
    j["backend"] = backend;
    j["dataset_path"] = dataset_path;
    j["world_path"] = world_path;
    j["world"] = world_to_json(world);
    j["train_tasks"] = train_tasks;
    j["eval_tasks"] = eval_tasks;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["probe"] = probe;
    j["cache_scope"] = cache_scope;
    j["feature_dim"] = feature_dim;
    j["hidden"] = hidden;
    j["init_scale"] = init_scale;
    j["featurizer"] = featurizer;
    j["temperature"] = temperature;
    j["threads"] = threads;
    j["price_prompt_per_million"] = price_prompt_per_million;
    j["price_completion_per_million"] = price_completion_per_million;
    j["mock_answer"] = mock_answer ? nlohmann::json(*mock_answer) : nlohmann::json(nullptr);
    j["export_dot"] = export_dot;
    j["export_json"] = export_json;
    j["http"] = nlohmann::json(http);
    j["embedding"] = nlohmann::json(embedding);
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      if (j.contains("reward")) c.reward = j["reward"].get<RewardConfig>();
      c.role_pool_path = j.value("role_pool_path", c.role_pool_path);
      c.backend = j.value("backend", c.backend);
      c.dataset_path = j.value("dataset_path", c.dataset_path);
      c.world_path = j.value("world_path", c.world_path);
      if (j.contains("world")) c.world = world_from_json(j["world"]);
      c.train_tasks = j.value("train_tasks", c.train_tasks);
      c.eval_tasks = j.value("eval_tasks", c.eval_tasks);
      c.out_dir = j.value("out_dir", c.out_dir);
      c.seed = j.value("seed", c.seed);
      c.probe = j.value("probe", c.probe);
      c.cache_scope = j.value("cache_scope", c.cache_scope);
      c.feature_dim = j.value("feature_dim", c.feature_dim);
      c.hidden = j.value("hidden", c.hidden);
      c.init_scale = j.value("init_scale", c.init_scale);
      c.featurizer = j.value("featurizer", c.featurizer);
      c.temperature = j.value("temperature", c.temperature);
      c.threads = j.value("threads", c.threads);
      c.price_prompt_per_million = j.value("price_prompt_per_million", c.price_prompt_per_million);
      c.price_completion_per_million =
          j.value("price_completion_per_million", c.price_completion_per_million);
      if (j.contains("mock_answer") && !j["mock_answer"].is_null())
        c.mock_answer = j["mock_answer"].get<std::string>();
      c.export_dot = j.value("export_dot", c.export_dot);
      c.export_json = j.value("export_json", c.export_json);
      if (j.contains("http")) c.http = j["http"].get<HttpConfig>();
      if (j.contains("embedding")) c.embedding = j["embedding"].get<HttpConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
  }

  // Resolves world_path into `world` (the file wins over the inline spec).
  void resolve_world() {
    if (!world_path.empty()) world = load_world(world_path);
  }
};

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return RunConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config: " + path);
  out << cfg.to_json().dump(2) << "\n";
}

// jpss -> edges without the p factor; hrpo -> no group advantage; et -> T_E = 0.
inline void apply_ablation(RewardConfig& r, const std::string& name) {
  if (name == "jpss") {
    r.disable_jpss = true;
  } else if (name == "hrpo") {
    r.disable_group_adv = true;
  } else if (name == "et") {
    r.disable_exemption = true;
  } else if (name == "action-reward") {
    r.disable_action_reward = true;
  } else {
    throw ConfigError("unknown ablation: " + name + " (expected jpss, hrpo, et or action-reward)");
  }
}

}  // namespace mashost
