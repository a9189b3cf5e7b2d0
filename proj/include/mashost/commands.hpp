#pragma once

// The CLI verbs as library functions: train, evaluate, construct, export, inspect.
// All outputs land under RunConfig::out_dir.

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/checkpoint.hpp"
#include "mashost/config.hpp"
#include "mashost/dataset.hpp"
#include "mashost/executor.hpp"
#include "mashost/features.hpp"
#include "mashost/graph.hpp"
#include "mashost/hrpo.hpp"
#include "mashost/http.hpp"
#include "mashost/metrics.hpp"
#include "mashost/roles.hpp"
#include "mashost/synth.hpp"

namespace mashost {

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kRunLogFile = "run_log.jsonl";
inline constexpr const char* kMetricsFile = "metrics.json";

// Everything a command needs, derived from a validated RunConfig.
struct Workspace {
  RunConfig cfg;
  RolePool pool;  // the action space (synth: the first K cards)
  std::unique_ptr<Featurizer> featurizer;
  std::vector<DatasetRecord> records;
  std::vector<SyntheticTask> synth_train;
  std::vector<SyntheticTask> synth_eval;
  std::shared_ptr<Backend> shared_backend;  // mock / http

  TokenPrice price() const { return {cfg.price_prompt_per_million, cfg.price_completion_per_million}; }
};

inline std::shared_ptr<Backend> make_dataset_backend(const RunConfig& cfg) {
  if (cfg.backend == "http") return std::make_shared<HttpBackend>(cfg.http);
  MockBackend::Options o;
  o.summary_answer = cfg.mock_answer;
  return std::make_shared<MockBackend>(o);
}

inline Task record_task(const DatasetRecord& r, std::shared_ptr<Backend> backend) {
  Task t;
  t.id = r.id;
  t.query = r.question;
  t.backend = std::move(backend);
  t.is_correct = [truth = r.answer, family = r.family](const std::string& a) {
    return grade(a, truth, family);
  };
  return t;
}

// Validates the config and loads pool, world, dataset and featurizer.
inline Workspace open_workspace(RunConfig cfg, bool need_dataset = true) {
  cfg.resolve_world();
  cfg.validate();
  const RolePool full = load_pool(cfg.role_pool_path);
  Workspace ws{cfg, cfg.backend == "synth" ? full.prefix(cfg.world.role_count) : full, nullptr, {}, {}, {}, nullptr};
  if (cfg.featurizer == "embedding")
    ws.featurizer = std::make_unique<EmbeddingFeaturizer>(cfg.embedding, cfg.feature_dim, ws.pool.names());
  else
    ws.featurizer = std::make_unique<HashFeaturizer>(cfg.feature_dim, ws.pool.names());
  if (cfg.backend == "synth") {
    if (ws.pool.size() < cfg.world.role_count) throw ConfigError("role pool smaller than synth world K");
    ws.synth_train = generate_tasks(cfg.world, ws.pool, cfg.train_tasks, 0);
    ws.synth_eval = generate_tasks(cfg.world, ws.pool, cfg.eval_tasks, 1);
  } else {
    if (need_dataset) ws.records = load_dataset(cfg.dataset_path);
    ws.shared_backend = make_dataset_backend(cfg);
  }
  return ws;
}

inline std::vector<Task> training_tasks(const Workspace& ws) {
  std::vector<Task> tasks;
  if (ws.cfg.backend == "synth") {
    for (const auto& st : ws.synth_train) tasks.push_back(make_synth_task(st, ws.pool));
  } else {
    for (const auto& r : ws.records) {
      if (r.family == Family::Code) throw UnsupportedError("record " + r.id + ": code family has no grader");
      tasks.push_back(record_task(r, ws.shared_backend));
    }
  }
  return tasks;
}

inline std::vector<Task> evaluation_tasks(const Workspace& ws) {
  std::vector<Task> tasks;
  if (ws.cfg.backend == "synth") {
    if (ws.synth_eval.empty()) throw ValidationError("empty evaluation set (eval_tasks = 0)");
    for (const auto& st : ws.synth_eval) tasks.push_back(make_synth_task(st, ws.pool));
  } else {
    for (const auto& r : ws.records) {
      if (r.family == Family::Code) throw UnsupportedError("record " + r.id + ": code family has no grader");
      tasks.push_back(record_task(r, ws.shared_backend));
    }
  }
  return tasks;
}

inline nlohmann::json checkpoint_meta(const Workspace& ws) {
  return {{"format", "mashost-policy"},
          {"feature_dim", ws.cfg.feature_dim},
          {"hidden", ws.cfg.hidden},
          {"featurizer", ws.cfg.featurizer},
          {"role_names", ws.pool.names()},
          {"seed", ws.cfg.seed}};
}

inline PolicyParams load_policy(const Workspace& ws, const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.meta.contains("role_names") && ck.meta["role_names"].get<std::vector<std::string>>() != ws.pool.names())
    throw ConfigError("checkpoint was trained on a different role pool");
  if (ck.params.role_count() != ws.pool.size() || ck.params.feature_dim() != ws.featurizer->dimension())
    throw ConfigError("checkpoint shape does not match the configured pool / featurizer");
  return std::move(ck.params);
}

inline nlohmann::ordered_json run_log_header(const Workspace& ws, std::size_t task_count) {
  nlohmann::ordered_json h;
  h["type"] = "header";
  h["version"] = 1;
  h["config"] = ws.cfg.to_json();
  h["effective_exemption_time"] = ws.cfg.reward.effective_exemption();
  h["pool_size"] = ws.pool.size();
  h["tasks"] = task_count;
  return h;
}

// Greedy construction over every task with at most `threads` in flight.
inline MetricsReport evaluate_tasks(const std::vector<Task>& tasks, const Workspace& ws,
                                    const PolicyParams& params, std::vector<Trajectory>* out = nullptr) {
  MessagePoolCache cache;
  MessagePoolCache* shared = ws.cfg.cache() == CacheScope::Off ? nullptr : &cache;
  std::vector<Trajectory> trajs(tasks.size());
  auto one = [&](std::size_t i) {
    MessagePoolCache local;
    MessagePoolCache* c = ws.cfg.cache() == CacheScope::Rollout ? &local : shared;
    trajs[i] = construct_greedy(tasks[i], ws.pool, *ws.featurizer, params, ws.cfg.reward, c,
                                ProbePolicy::Off, ws.cfg.temperature);
  };
  const auto width = static_cast<std::size_t>(std::max(1, ws.cfg.threads));
  for (std::size_t start = 0; start < tasks.size(); start += width) {
    const std::size_t end = std::min(tasks.size(), start + width);
    if (width == 1) {
      one(start);
      continue;
    }
    std::vector<std::future<void>> jobs;
    for (std::size_t i = start; i < end; ++i) jobs.push_back(std::async(std::launch::async, one, i));
    for (auto& j : jobs) j.get();
  }
  MetricsAccumulator acc;
  for (const auto& t : trajs) acc.add(t);
  if (out) *out = std::move(trajs);
  return acc.report(ws.price());
}

struct TrainOutcome {
  TrainingResult training;
  MetricsReport metrics;
  std::filesystem::path out_dir;
};

inline TrainOutcome cmd_train(const RunConfig& config, std::ostream& progress = std::cerr) {
  Workspace ws = open_workspace(config);
  const auto tasks = training_tasks(ws);
  const std::filesystem::path dir = ws.cfg.out_dir;
  std::filesystem::create_directories(dir);
  save_config((dir / kConfigFile).string(), ws.cfg);

  std::ofstream log((dir / kRunLogFile).string());
  if (!log) throw Error("cannot write run log in " + dir.string());
  log << run_log_header(ws, tasks.size()).dump() << "\n";

  auto params = PolicyParams::init(ws.cfg.feature_dim, ws.cfg.hidden, ws.pool.size(), ws.cfg.seed, ws.cfg.init_scale);
  std::size_t groups = 0;
  const std::size_t per_round = tasks.size();
  auto sink = [&](const nlohmann::ordered_json& rec) {
    log << rec.dump() << "\n";
    if (++groups % per_round == 0)
      progress << "round " << groups / per_round << "/" << ws.cfg.reward.rounds << " done\n";
  };
  TrainOutcome outcome;
  outcome.out_dir = dir;
  outcome.training = run_training(tasks, ws.pool, *ws.featurizer, std::move(params), ws.cfg.reward,
                                  ws.cfg.training_options(), sink);
  nlohmann::ordered_json summary;
  summary["type"] = "summary";
  summary["round_mean_reward"] = outcome.training.round_mean_reward;
  summary["round_accuracy"] = outcome.training.round_accuracy;
  summary["aborted_steps"] = outcome.training.aborted_steps;
  log << summary.dump() << "\n";

  save_checkpoint((dir / kCheckpointFile).string(), {outcome.training.params, checkpoint_meta(ws)});

  // Held-out evaluation is free on the synthetic backend; elsewhere it is a separate command.
  if (ws.cfg.backend == "synth" && !ws.synth_eval.empty())
    outcome.metrics = evaluate_tasks(evaluation_tasks(ws), ws, outcome.training.params);
  outcome.metrics.round_mean_reward = outcome.training.round_mean_reward;
  outcome.metrics.round_accuracy = outcome.training.round_accuracy;
  std::ofstream m((dir / kMetricsFile).string());
  m << outcome.metrics.to_json().dump(2) << "\n";
  return outcome;
}

inline MetricsReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint_path,
                                  const std::string& report_name = "metrics_eval.json") {
  Workspace ws = open_workspace(config);
  const auto params = load_policy(ws, checkpoint_path);
  const auto tasks = evaluation_tasks(ws);
  auto report = evaluate_tasks(tasks, ws, params);
  const std::filesystem::path dir = ws.cfg.out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream m((dir / report_name).string());
  m << report.to_json().dump(2) << "\n";
  return report;
}

struct ConstructOutcome {
  Trajectory trajectory;
  std::string answer;
  std::optional<bool> correct;  // known for synthetic tasks only
  std::vector<RoleId> required;
  std::string dot;
  std::string error;
};

// Builds a graph for one query (or the task_index-th held-out synthetic task).
inline ConstructOutcome cmd_construct(const RunConfig& config, const std::string& checkpoint_path,
                                      const std::optional<std::string>& query,
                                      std::optional<std::size_t> task_index = std::nullopt) {
  Workspace ws = open_workspace(config, false);
  const auto params = load_policy(ws, checkpoint_path);
  Task task;
  ConstructOutcome out;
  if (ws.cfg.backend == "synth") {
    SyntheticTask st;
    if (query) {
      st = synth_task_from_query(ws.cfg.world, ws.pool, *query);
    } else {
      const std::size_t i = task_index.value_or(0);
      if (i >= ws.synth_eval.size()) throw ConfigError("task index outside the held-out set");
      st = ws.synth_eval[i];
    }
    out.required = st.required;
    task = make_synth_task(st, ws.pool);
  } else {
    if (!query) throw ConfigError("construct needs --query for the " + ws.cfg.backend + " backend");
    task.id = "query";
    task.query = *query;
    task.backend = ws.shared_backend;
    task.is_correct = [](const std::string&) { return false; };
  }
  MessagePoolCache cache;
  out.trajectory = construct_greedy(task, ws.pool, *ws.featurizer, params, ws.cfg.reward,
                                    ws.cfg.cache() == CacheScope::Off ? nullptr : &cache,
                                    ProbePolicy::Off, ws.cfg.temperature);
  out.answer = out.trajectory.final_answer;
  out.error = out.trajectory.error;
  if (ws.cfg.backend == "synth") out.correct = out.trajectory.correct;

  const std::filesystem::path dir = ws.cfg.out_dir;
  std::filesystem::create_directories(dir);
  const auto& graph = out.trajectory.final_state.graph;
  if (ws.cfg.export_json) std::ofstream(dir / "graph.json") << to_json(graph).dump(2) << "\n";
  out.dot = to_dot(graph, ws.pool.names());
  if (ws.cfg.export_dot) std::ofstream(dir / "graph.dot") << out.dot;
  nlohmann::ordered_json j;
  j["query"] = task.query;
  j["answer"] = out.answer;
  j["correct"] = out.correct ? nlohmann::json(*out.correct) : nlohmann::json(nullptr);
  j["agents"] = graph.size();
  j["final_tokens"] = {{"prompt", out.trajectory.ledger.final_tokens.prompt},
                       {"completion", out.trajectory.ledger.final_tokens.completion}};
  if (!out.error.empty()) j["error"] = out.error;
  std::ofstream(dir / "construct.json") << j.dump(2) << "\n";
  return out;
}

// Checkpoint -> structured text, or graph JSON -> DOT.
inline void cmd_export_checkpoint(const std::string& checkpoint_path, std::ostream& out) {
  out << checkpoint_to_json(load_checkpoint(checkpoint_path)).dump(2) << "\n";
}

inline void cmd_export_graph(const std::string& graph_path, const RolePool& pool, std::ostream& out) {
  std::ifstream in(graph_path);
  if (!in) throw ConfigError("cannot open graph: " + graph_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("graph " + graph_path + ": " + e.what());
  }
  std::size_t n = j.value("nodes", nlohmann::json::array()).size();
  out << to_dot(graph_from_json(j, pool.size(), std::max(n, kDefaultMaxNodes)), pool.names());
}

// Human-readable summary of a checkpoint, run log, or config file.
inline nlohmann::ordered_json cmd_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  nlohmann::ordered_json j;
  if (in.gcount() == 8 && std::equal(magic, magic + 8, kCheckpointMagic)) {
    auto ck = load_checkpoint(path);
    j["kind"] = "checkpoint";
    j["meta"] = ck.meta;
    j["parameters"] = ck.params.parameter_count();
    for (const auto& b : ck.params.blocks()) j["blocks"][b.name] = {b.rows, b.cols};
    return j;
  }
  in.clear();
  in.seekg(0);
  std::string first;
  std::getline(in, first);
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(first);
  } catch (const nlohmann::json::parse_error&) {
    head = nullptr;
  }
  if (head.is_object() && head.value("type", "") == "header") {
    j["kind"] = "run_log";
    j["config"] = head["config"];
    std::size_t groups = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = nlohmann::json::parse(line);
      if (rec.value("type", "") == "group") ++groups;
      if (rec.value("type", "") == "summary") j["summary"] = rec;
    }
    j["groups"] = groups;
    return j;
  }
  j["kind"] = "config";
  auto cfg = load_config(path);
  j["config"] = cfg.to_json();
  try {
    cfg.resolve_world();
    cfg.validate();
    j["valid"] = true;
  } catch (const ConfigError& e) {
    j["valid"] = false;
    j["error"] = e.what();
  }
  return j;
}

}  // namespace mashost
