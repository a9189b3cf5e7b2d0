// mashost: train, evaluate and inspect RL-constructed multi-agent systems.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mashost/commands.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Optional overrides for every RunConfig field; applied on top of --config.
struct Overrides {
  std::string config_path;
  std::optional<std::string> role_pool, backend, dataset, world_path, out_dir, probe, cache_scope,
      featurizer, mock_answer, http_endpoint, http_model, http_key_env, embed_endpoint, embed_model;
  std::optional<std::size_t> train_tasks, eval_tasks, feature_dim, hidden, world_k;
  std::optional<std::uint64_t> seed, world_seed;
  std::optional<double> alpha, beta, gamma, epsilon, lr, temperature, init_scale, price_prompt,
      price_completion;
  std::optional<int> exemption, group_size, max_steps, rounds, threads, http_timeout, http_retries;
  std::optional<std::int64_t> max_expected_tokens;
  std::optional<bool> chain, export_dot, export_json;
  std::vector<std::string> ablate;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "Run config JSON (flags override its fields)");
    app->add_option("--role-pool", role_pool, "Role-card file");
    app->add_option("--backend", backend, "mock | synth | http");
    app->add_option("--dataset", dataset, "Line-delimited dataset (mock/http backends)");
    app->add_option("--world", world_path, "Synthetic world spec file");
    app->add_option("--world-k", world_k, "Synthetic world role count K");
    app->add_option("--world-seed", world_seed, "Synthetic world seed");
    app->add_option("--chain", chain, "Synthetic chain variant (true/false)");
    app->add_option("--train-tasks", train_tasks, "Synthetic training queries");
    app->add_option("--eval-tasks", eval_tasks, "Synthetic held-out queries");
    app->add_option("-o,--out", out_dir, "Run directory");
    app->add_option("--seed", seed, "Base seed");
    app->add_option("--probe", probe, "every | on-change | off");
    app->add_option("--cache", cache_scope, "Message-pool cache scope: off | rollout | run");
    app->add_option("--featurizer", featurizer, "hash | embedding");
    app->add_option("--feature-dim", feature_dim, "Feature dimension d");
    app->add_option("--hidden", hidden, "Hidden width of both heads");
    app->add_option("--init-scale", init_scale, "Uniform init half-width");
    app->add_option("--temperature", temperature, "Node softmax temperature");
    app->add_option("--threads", threads, "Concurrent rollouts / evaluations");
    app->add_option("--alpha", alpha, "Stagnation penalty slope");
    app->add_option("--beta", beta, "Token price in the group reward");
    app->add_option("--gamma", gamma, "Action-reward discount");
    app->add_option("--epsilon", epsilon, "Clip half-width");
    app->add_option("--exemption", exemption, "Exemption time T_E");
    app->add_option("--group-size", group_size, "Trajectories per group L");
    app->add_option("--max-steps", max_steps, "T_max");
    app->add_option("--rounds", rounds, "Training rounds n_r");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--max-expected-tokens", max_expected_tokens, "Bound used to validate beta");
    app->add_option("--ablate", ablate, "jpss | hrpo | et | action-reward (repeatable)");
    app->add_option("--price-prompt", price_prompt, "USD per 1M prompt tokens");
    app->add_option("--price-completion", price_completion, "USD per 1M completion tokens");
    app->add_option("--mock-answer", mock_answer, "Mock backend: fixed summary answer");
    app->add_option("--export-dot", export_dot, "Write graph.dot on construct");
    app->add_option("--export-json", export_json, "Write graph.json on construct");
    app->add_option("--http-endpoint", http_endpoint, "Chat-completions URL");
    app->add_option("--http-model", http_model, "Chat model name");
    app->add_option("--http-key-env", http_key_env, "Environment variable holding the API key");
    app->add_option("--http-timeout-ms", http_timeout, "Request timeout");
    app->add_option("--http-retries", http_retries, "Retries on 408/429/5xx");
    app->add_option("--embed-endpoint", embed_endpoint, "Embeddings URL (embedding featurizer)");
    app->add_option("--embed-model", embed_model, "Embeddings model name");
  }

  mashost::RunConfig build() const {
    mashost::RunConfig c = config_path.empty() ? mashost::RunConfig{} : mashost::load_config(config_path);
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.role_pool_path, role_pool);
    set(c.backend, backend);
    set(c.dataset_path, dataset);
    set(c.world_path, world_path);
    set(c.world.role_count, world_k);
    set(c.world.seed, world_seed);
    set(c.world.chain, chain);
    set(c.train_tasks, train_tasks);
    set(c.eval_tasks, eval_tasks);
    set(c.out_dir, out_dir);
    set(c.seed, seed);
    set(c.probe, probe);
    set(c.cache_scope, cache_scope);
    set(c.featurizer, featurizer);
    set(c.feature_dim, feature_dim);
    set(c.hidden, hidden);
    set(c.init_scale, init_scale);
    set(c.temperature, temperature);
    set(c.threads, threads);
    set(c.reward.alpha, alpha);
    set(c.reward.beta, beta);
    set(c.reward.gamma, gamma);
    set(c.reward.epsilon, epsilon);
    set(c.reward.exemption_time, exemption);
    set(c.reward.group_size, group_size);
    set(c.reward.max_steps, max_steps);
    set(c.reward.rounds, rounds);
    set(c.reward.learning_rate, lr);
    set(c.reward.max_expected_tokens, max_expected_tokens);
    set(c.price_prompt_per_million, price_prompt);
    set(c.price_completion_per_million, price_completion);
    if (mock_answer) c.mock_answer = *mock_answer;
    set(c.export_dot, export_dot);
    set(c.export_json, export_json);
    set(c.http.endpoint, http_endpoint);
    set(c.http.model, http_model);
    set(c.http.api_key_env, http_key_env);
    set(c.embedding.api_key_env, http_key_env);
    set(c.http.timeout_ms, http_timeout);
    set(c.http.max_retries, http_retries);
    set(c.embedding.endpoint, embed_endpoint);
    set(c.embedding.model, embed_model);
    for (const auto& a : ablate) mashost::apply_ablation(c.reward, a);
    return c;
  }
};

void print_report(const mashost::MetricsReport& r) {
  std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/" << r.records << ")"
            << "  prompt " << r.mean_prompt_tokens << "  completion " << r.mean_completion_tokens
            << "  cost_usd " << r.mean_cost_usd << "  agents " << r.mean_agents
            << "  failures " << r.failures << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mashost: RL construction of multi-agent LLM systems"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, construct_o, export_o;
  std::string eval_ckpt, construct_ckpt, export_ckpt, export_graph, export_out, inspect_path;
  std::optional<std::string> query;
  std::optional<std::size_t> task_index;

  auto* train = app.add_subcommand("train", "Train both policy heads with HRPO");
  train_o.attach(train);

  auto* evaluate = app.add_subcommand("evaluate", "Greedy construction + grading over a dataset");
  eval_o.attach(evaluate);
  evaluate->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();

  auto* construct = app.add_subcommand("construct", "Build, run and export one system");
  construct_o.attach(construct);
  construct->add_option("--checkpoint", construct_ckpt, "Trained checkpoint")->required();
  construct->add_option("-q,--query", query, "Query text");
  construct->add_option("--task", task_index, "Synthetic backend: held-out task index");

  auto* exporter = app.add_subcommand("export", "Dump a checkpoint as JSON or a graph as DOT");
  export_o.attach(exporter);
  exporter->add_option("--checkpoint", export_ckpt, "Checkpoint to dump");
  exporter->add_option("--graph", export_graph, "graph.json to convert to DOT");
  exporter->add_option("--to", export_out, "Output file (default stdout)");

  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint, run log or config");
  inspect->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) {
      auto out = mashost::cmd_train(train_o.build());
      std::cout << "run directory " << out.out_dir.string() << "\n";
      std::cout << "round mean reward";
      for (double r : out.training.round_mean_reward) std::cout << " " << r;
      std::cout << "\n";
      if (out.metrics.records) print_report(out.metrics);
    } else if (*evaluate) {
      print_report(mashost::cmd_evaluate(eval_o.build(), eval_ckpt));
    } else if (*construct) {
      auto out = mashost::cmd_construct(construct_o.build(), construct_ckpt, query, task_index);
      std::cout << out.dot;
      std::cout << "answer: " << out.answer << "\n";
      if (out.correct) std::cout << "correct: " << (*out.correct ? "yes" : "no") << "\n";
      if (!out.error.empty()) {
        std::cerr << "backend failure: " << out.error << " (partial graph exported)\n";
        return kExitRuntime;
      }
    } else if (*exporter) {
      std::ofstream file;
      std::ostream* out = &std::cout;
      if (!export_out.empty()) {
        file.open(export_out);
        if (!file) throw mashost::ConfigError("cannot write " + export_out);
        out = &file;
      }
      if (!export_ckpt.empty()) {
        mashost::cmd_export_checkpoint(export_ckpt, *out);
      } else if (!export_graph.empty()) {
        auto cfg = export_o.build();
        cfg.resolve_world();
        auto pool = mashost::load_pool(cfg.role_pool_path);
        mashost::cmd_export_graph(export_graph, cfg.backend == "synth" ? pool.prefix(cfg.world.role_count) : pool,
                                  *out);
      } else {
        throw mashost::ConfigError("export needs --checkpoint or --graph");
      }
    } else if (*inspect) {
      std::cout << mashost::cmd_inspect(inspect_path).dump(2) << "\n";
    }
  } catch (const mashost::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mashost::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
