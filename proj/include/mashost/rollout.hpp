#pragma once

// One construction episode: sample actions from the two heads, edit the graph,
// execute new agents immediately, probe the intermediate answer O_t, and
// record everything HRPO needs.

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mashost/executor.hpp"
#include "mashost/features.hpp"
#include "mashost/policy.hpp"
#include "mashost/reward.hpp"
#include "mashost/roles.hpp"

namespace mashost {

// A query together with the means to answer and grade it.
struct Task {
  std::string id;
  std::string query;
  std::shared_ptr<Backend> backend;
  std::function<bool(const std::string&)> is_correct;
};

enum class ProbePolicy {
  Every,     // summarize after every ROLE / DELETE action
  OnChange,  // reuse O_t when the message pool returns to an already probed state
  Off        // no probes (evaluation); rewards are not meaningful
};

struct RolloutOptions {
  SampleMode mode = SampleMode::Explore;
  PolicyOptions policy;
  ProbePolicy probe = ProbePolicy::Every;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  ConstructionState final_state;
  std::string final_answer;
  bool finished = false;   // produced a final answer (EXIT, or truncation with agents)
  bool exited = false;     // EXIT was sampled
  bool correct = false;
  bool failed = false;     // backend failure; graded incorrect
  std::string error;
  TokenLedger ledger;

  std::vector<double> action_rewards() const {
    std::vector<double> r;
    for (const auto& s : steps) r.push_back(s.action_reward);
    return r;
  }
};

inline Trajectory rollout(const Task& task, const RolePool& pool, const Featurizer& featurizer,
                          const PolicyParams& params, const RewardConfig& cfg,
                          const RolloutOptions& opt, Rng& rng, MessagePoolCache* cache) {
  Trajectory traj;
  ConstructionState state(task.query,
                          MasGraph(pool.size(), static_cast<std::size_t>(cfg.max_steps)));
  Executor exec(*task.backend, pool, cache);
  std::map<std::string, std::string> probe_memo;
  bool prev_correct = false;  // O_0: the empty system cannot answer

  auto pool_fingerprint = [&] {
    std::vector<std::string> contents;
    for (const auto& m : state.messages) contents.push_back(m.content);
    return context_fingerprint(state.query, contents);
  };
  auto probe = [&]() -> std::string {
    if (opt.probe == ProbePolicy::Off) return {};
    if (opt.probe == ProbePolicy::OnChange) {
      auto key = pool_fingerprint();
      if (auto it = probe_memo.find(key); it != probe_memo.end()) return it->second;
      auto out = exec.probe_output(state, traj.ledger);
      probe_memo.emplace(std::move(key), out);
      return out;
    }
    return exec.probe_output(state, traj.ledger);
  };
  auto grade = [&](const std::string& answer) { return !answer.empty() && task.is_correct(answer); };

  try {
    for (int t = 1; t <= cfg.max_steps; ++t) {
      TrajectoryStep step;
      step.step_index = t;
      step.mask = make_mask(state.graph);
      step.state_features = featurizer.feat_state(state);
      const VectorXd dist = node_distribution(params, step.state_features, step.mask, opt.policy);
      auto [index, logp] = sample_node(dist, rng, opt.mode);
      step.action = pool.action_at(index);
      step.node_logprob = logp;

      if (step.action.kind == Action::Kind::Exit) {
        traj.final_answer = exec.finalize(state, traj.ledger);
        traj.finished = traj.exited = true;
        traj.correct = grade(traj.final_answer);
        step.intermediate_output = traj.final_answer;
        step.output_correct = traj.correct;
      } else if (step.action.kind == Action::Kind::Delete) {
        auto [removed, record] = state.delete_last();
        if (record) traj.ledger.deleted_tokens += charged(*record);
        step.intermediate_output = probe();
        step.output_correct = grade(step.intermediate_output);
      } else {
        const RoleId role = step.action.role;
        step.edge_features = edge_features_for(featurizer, state, role);
        const VectorXd edge_probs = edge_distribution(params, step.edge_features);
        const double p = opt.policy.jpss ? dist[static_cast<Eigen::Index>(index)] : 1.0;
        auto edges = jpss_sample_edges(p, edge_probs, rng, opt.mode);
        step.sampled_edges = edges.included;
        step.edge_logprobs = edges.logprobs;
        const NodeId id = state.graph.add_agent(role, t);
        state.graph.connect(id, edges.included);
        traj.steps.push_back(step);  // recorded before execution so a failure keeps the action
        exec.run_agent(state, id);
        auto& rec = traj.steps.back();
        rec.intermediate_output = probe();
        rec.output_correct = grade(rec.intermediate_output);
        rec.action_reward = action_reward(prev_correct, rec.output_correct, t, cfg);
        prev_correct = rec.output_correct;
        continue;
      }
      step.action_reward = action_reward(prev_correct, step.output_correct, t, cfg);
      prev_correct = step.output_correct;
      traj.steps.push_back(std::move(step));
      if (traj.exited) break;
    }
    if (!traj.exited && !state.graph.empty()) {
      // T_max reached without EXIT: the partial system still answers.
      traj.final_answer = exec.finalize(state, traj.ledger);
      traj.finished = true;
      traj.correct = grade(traj.final_answer);
    }
  } catch (const BackendError& e) {
    traj.failed = true;
    traj.correct = false;
    traj.error = e.what();
  }
  traj.final_state = std::move(state);
  return traj;
}

}  // namespace mashost
