#pragma once

// Hierarchical relative policy optimization.
//
// For a group of L trajectories sampled under a frozen snapshot:
//   J = 1/L sum_i 1/|M_i| sum_t min(w A_it, clip(w, 1-eps, 1+eps) A_it),
//   w = exp(logpi(step) - logpi_old(step)),
//   A_it = A_G(i) + sum_{T>=t} gamma^(T-t) r(a_T).
// Gradient ascent on J (we maximize).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/policy.hpp"
#include "mashost/reward.hpp"
#include "mashost/rollout.hpp"

namespace mashost {

struct GroupSample {
  std::string query_id;
  std::string query;
  std::vector<Trajectory> trajectories;
  std::shared_ptr<const PolicySnapshot> snapshot;

  std::vector<double> group_rewards(double beta) const {
    std::vector<double> r;
    for (const auto& t : trajectories)
      r.push_back(group_reward(t.correct, t.ledger.final_tokens.total(), beta));
    return r;
  }

  AdvantageTable advantages(const RewardConfig& cfg) const {
    std::vector<std::vector<double>> action;
    for (const auto& t : trajectories) action.push_back(t.action_rewards());
    auto rewards = group_rewards(cfg.beta);
    return build_advantages(rewards, action, cfg);
  }
};

inline PolicyOptions policy_options(const RewardConfig& cfg, double temperature = 1.0) {
  return {temperature, !cfg.disable_jpss};
}

struct ObjectiveStats {
  double objective = 0;
  double mean_abs_ratio_dev = 0;  // mean |w - 1|
  double clip_fraction = 0;       // share of steps with w outside [1-eps, 1+eps]
  std::size_t steps = 0;
  std::size_t skipped_trajectories = 0;
};

// Per-step surrogate. Returns the term and whether the unclipped branch is active
// (that branch carries the gradient; ties count as unclipped).
inline std::pair<double, bool> clipped_term(double w, double adv, double eps) {
  const double unclipped = w * adv;
  const double clipped = std::clamp(w, 1.0 - eps, 1.0 + eps) * adv;
  return unclipped <= clipped ? std::pair{unclipped, true} : std::pair{clipped, false};
}

// Evaluates J at `params`; accumulates dJ/dparams into `grad` when given.
inline ObjectiveStats hrpo_objective(const GroupSample& group, const AdvantageTable& adv,
                                     const PolicyParams& params, const RewardConfig& cfg,
                                     PolicyParams* grad = nullptr,
                                     const PolicyOptions* opt_override = nullptr) {
  const PolicyOptions opt = opt_override ? *opt_override : policy_options(cfg);
  ObjectiveStats st;
  const double L = static_cast<double>(group.trajectories.size());
  if (group.trajectories.empty()) return st;
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const auto& steps = group.trajectories[i].steps;
    if (steps.empty()) {
      ++st.skipped_trajectories;
      continue;
    }
    const double n = static_cast<double>(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const double old_lp = group.snapshot
                                ? step_logprob(group.snapshot->params(), steps[t], opt).total
                                : steps[t].node_logprob + [&] {
                                    double s = 0;
                                    for (double e : steps[t].edge_logprobs) s += e;
                                    return s;
                                  }();
      const double new_lp = step_logprob(params, steps[t], opt).total;
      const double w = std::exp(new_lp - old_lp);
      const double a = adv.per_step[i][t];
      auto [term, unclipped] = clipped_term(w, a, cfg.epsilon);
      st.objective += term / (L * n);
      st.mean_abs_ratio_dev += std::abs(w - 1.0);
      if (w < 1.0 - cfg.epsilon || w > 1.0 + cfg.epsilon) st.clip_fraction += 1;
      ++st.steps;
      if (grad && unclipped && a != 0.0) step_logprob(params, steps[t], opt, grad, a * w / (L * n));
    }
  }
  if (st.steps) {
    st.mean_abs_ratio_dev /= static_cast<double>(st.steps);
    st.clip_fraction /= static_cast<double>(st.steps);
  }
  return st;
}

struct TrainStepResult {
  double objective_before = 0;
  double objective_after = 0;
  double mean_abs_ratio_dev = 0;
  double clip_fraction = 0;
  double grad_norm = 0;
  bool applied = false;
  std::string error;
};

inline double squared_norm(const PolicyParams& g) {
  double s = 0;
  for (const auto& b : g.blocks())
    for (Eigen::Index k = 0; k < b.size(); ++k) s += b.data[k] * b.data[k];
  return s;
}

// One gradient-ascent step on J. A non-finite gradient leaves `params` untouched.
inline TrainStepResult train_step(const GroupSample& group, PolicyParams& params,
                                  const RewardConfig& cfg, const PolicyOptions* opt = nullptr) {
  TrainStepResult res;
  const auto adv = group.advantages(cfg);
  PolicyParams grad = params.zeros_like();
  res.objective_before = hrpo_objective(group, adv, params, cfg, &grad, opt).objective;
  res.grad_norm = std::sqrt(squared_norm(grad));
  if (!grad.all_finite() || !std::isfinite(res.objective_before)) {
    res.error = "non-finite gradient; step aborted";
    return res;
  }
  params.axpy(cfg.learning_rate, grad);
  res.applied = true;
  const auto after = hrpo_objective(group, adv, params, cfg, nullptr, opt);
  res.objective_after = after.objective;
  res.mean_abs_ratio_dev = after.mean_abs_ratio_dev;
  res.clip_fraction = after.clip_fraction;
  return res;
}

// Off: every agent call hits the backend. Rollout: a cache per trajectory.
// Run: one cache shared by the whole run.
enum class CacheScope { Off, Rollout, Run };

struct TrainingOptions {
  std::uint64_t seed = 0;
  ProbePolicy probe = ProbePolicy::Every;
  CacheScope cache_scope = CacheScope::Off;
  bool shuffle = true;
  int rollout_threads = 1;
  double temperature = 1.0;
};

struct TrainingResult {
  PolicyParams params;
  std::vector<double> round_mean_reward;  // mean group reward per round
  std::vector<double> round_accuracy;
  std::size_t aborted_steps = 0;
};

using LogSink = std::function<void(const nlohmann::ordered_json&)>;

inline nlohmann::ordered_json group_log_record(int round, const GroupSample& g,
                                               const RewardConfig& cfg, const TrainStepResult& st,
                                               double wall_ms) {
  nlohmann::ordered_json rec;
  rec["type"] = "group";
  rec["round"] = round;
  rec["query_id"] = g.query_id;
  rec["trajectories"] = nlohmann::ordered_json::array();
  for (const auto& t : g.trajectories) {
    nlohmann::ordered_json tj;
    tj["steps"] = t.steps.size();
    tj["reward"] = group_reward(t.correct, t.ledger.final_tokens.total(), cfg.beta);
    tj["tokens"] = t.ledger.final_tokens.total();
    tj["correct"] = t.correct;
    if (t.failed) tj["error"] = t.error;
    rec["trajectories"].push_back(std::move(tj));
  }
  rec["J"] = st.objective_before;
  rec["J_after"] = st.objective_after;
  rec["clip_fraction"] = st.clip_fraction;
  rec["mean_abs_ratio_dev"] = st.mean_abs_ratio_dev;
  if (!st.applied) rec["step_error"] = st.error;
  rec["wall_ms"] = wall_ms;
  return rec;
}

// Samples L trajectories for one task under `params` (which act as the snapshot).
inline GroupSample sample_group(const Task& task, const RolePool& pool, const Featurizer& featurizer,
                                const PolicyParams& params, const RewardConfig& cfg,
                                const TrainingOptions& opt, std::uint64_t group_seed,
                                MessagePoolCache* run_cache) {
  GroupSample g;
  g.query_id = task.id;
  g.query = task.query;
  g.snapshot = std::make_shared<const PolicySnapshot>(params);
  RolloutOptions ro;
  ro.mode = SampleMode::Explore;
  ro.policy = policy_options(cfg, opt.temperature);
  ro.probe = opt.probe;
  const auto L = static_cast<std::size_t>(cfg.group_size);
  g.trajectories.resize(L);
  auto one = [&](std::size_t i) {
    Rng rng(derive_seed(group_seed, {i}));
    MessagePoolCache local;
    MessagePoolCache* cache = opt.cache_scope == CacheScope::Run       ? run_cache
                              : opt.cache_scope == CacheScope::Rollout ? &local
                                                                       : nullptr;
    g.trajectories[i] = rollout(task, pool, featurizer, g.snapshot->params(), cfg, ro, rng, cache);
  };
  if (opt.rollout_threads > 1 && opt.cache_scope != CacheScope::Run) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < L; ++i) jobs.push_back(std::async(std::launch::async, one, i));
    for (auto& j : jobs) j.get();
  } else {
    for (std::size_t i = 0; i < L; ++i) one(i);
  }
  return g;
}

// The full loop: n_r rounds over the tasks; per task, snapshot, sample a group,
// compute advantages, take one step.
inline TrainingResult run_training(const std::vector<Task>& tasks, const RolePool& pool,
                                   const Featurizer& featurizer, PolicyParams params,
                                   const RewardConfig& cfg, const TrainingOptions& opt,
                                   const LogSink& log = {}) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("training needs at least one query");
  if (params.role_count() != pool.size() || params.feature_dim() != featurizer.dimension())
    throw ConfigError("policy shape does not match role pool / featurizer");

  TrainingResult result;
  MessagePoolCache run_cache;
  std::vector<std::size_t> order(tasks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int round = 0; round < cfg.rounds; ++round) {
    if (opt.shuffle) {
      Rng shuffle_rng(derive_seed(opt.seed, {0x5348554646ULL, static_cast<std::uint64_t>(round)}));
      for (std::size_t i = order.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
    }
    double reward_sum = 0, correct = 0, count = 0;
    for (std::size_t qi : order) {
      const auto start = std::chrono::steady_clock::now();
      const auto seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(round), qi});
      auto group = sample_group(tasks[qi], pool, featurizer, params, cfg, opt, seed, &run_cache);
      for (double r : group.group_rewards(cfg.beta)) reward_sum += r;
      for (const auto& t : group.trajectories) correct += t.correct ? 1 : 0;
      count += static_cast<double>(group.trajectories.size());
      const PolicyOptions popt = policy_options(cfg, opt.temperature);
      auto st = train_step(group, params, cfg, &popt);
      if (!st.applied) ++result.aborted_steps;
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (log) log(group_log_record(round, group, cfg, st, ms));
    }
    result.round_mean_reward.push_back(reward_sum / count);
    result.round_accuracy.push_back(correct / count);
  }
  result.params = std::move(params);
  return result;
}

// Greedy construction (evaluation mode). Probes are off unless requested.
inline Trajectory construct_greedy(const Task& task, const RolePool& pool,
                                   const Featurizer& featurizer, const PolicyParams& params,
                                   const RewardConfig& cfg, MessagePoolCache* cache,
                                   ProbePolicy probe = ProbePolicy::Off, double temperature = 1.0) {
  RolloutOptions ro;
  ro.mode = SampleMode::Greedy;
  ro.policy = policy_options(cfg, temperature);
  ro.probe = probe;
  Rng rng(0);  // unused in greedy mode
  return rollout(task, pool, featurizer, params, cfg, ro, rng, cache);
}

}  // namespace mashost
