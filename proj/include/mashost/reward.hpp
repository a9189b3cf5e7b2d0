#pragma once

// Trajectory- and action-level rewards and the combined advantage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"

namespace mashost {

struct RewardConfig {
  double alpha = 0.1;     // slope of the post-exemption stagnation penalty
  double beta = 1e-4;     // token price in the group reward
  double gamma = 0.9;     // discount of the action-reward tail
  double epsilon = 0.1;   // clip half-width of the importance ratio
  int exemption_time = 3; // T_E
  int group_size = 4;     // L
  int max_steps = 10;     // T_max
  int rounds = 4;         // n_r
  double learning_rate = 1e-2;
  std::int64_t max_expected_tokens = 10000;

  bool disable_group_adv = false;
  bool disable_action_reward = false;
  bool disable_exemption = false;
  bool disable_jpss = false;

  int effective_exemption() const { return disable_exemption ? 0 : exemption_time; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("reward config: " + m); };
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (group_size < 2) fail("group size L must be >= 2");
    if (max_steps < 1) fail("T_max must be >= 1");
    if (exemption_time < 0) fail("exemption time must be >= 0");
    if (max_expected_tokens < 0) fail("max_expected_tokens must be >= 0");
    if (alpha < 0 || beta < 0) fail("alpha and beta must be >= 0");
    if (beta * static_cast<double>(max_expected_tokens) > 1.0 + 1e-12)
      fail("beta * max_expected_tokens must be <= 1");
    if (alpha * (max_steps - effective_exemption()) > 1.0 + 1e-12)
      fail("alpha * (T_max - T_E) must be <= 1");
    if (rounds < 1) fail("rounds n_r must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      fail("learning rate must be positive");
  }

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardConfig, alpha, beta, gamma, epsilon,
                                                exemption_time, group_size, max_steps, rounds,
                                                learning_rate, max_expected_tokens,
                                                disable_group_adv, disable_action_reward,
                                                disable_exemption, disable_jpss)

// Correct: 1 - beta*tokens (clamped at 0 if the penalty overflows). Wrong: -1.
inline double group_reward(bool correct, std::int64_t tokens, double beta,
                           bool* clamped = nullptr) {
  if (clamped) *clamped = false;
  if (!correct) return -1.0;
  const double r = 1.0 - beta * static_cast<double>(tokens);
  if (r < 0.0) {
    if (clamped) *clamped = true;
    return 0.0;
  }
  return r;
}

// (r - mean) / population std-dev; all zeros when the group is (near) unanimous.
inline std::vector<double> normalize_group(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  if (sigma < 1e-8) return out;
  for (std::size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / sigma;
  return out;
}

// Five cases on (O_{t-1} correct, O_t correct) at step t >= 1.
inline double action_reward(bool prev_correct, bool curr_correct, int t, const RewardConfig& cfg) {
  if (t < 1) throw InvariantError("action_reward: step index starts at 1");
  if (prev_correct && !curr_correct) return -1.0;
  if (!prev_correct && curr_correct) return 1.0;
  if (prev_correct && curr_correct) return std::exp(-static_cast<double>(t));
  const int te = cfg.effective_exemption();
  if (t <= te) return 0.0;
  return -cfg.alpha * static_cast<double>(t - te);
}

// A_G(i) + sum_{T=t}^{n} gamma^(T-t) r_T, with t 1-based.
inline double combined_advantage(double group_adv, std::span<const double> rewards, double gamma,
                                 int t) {
  if (t < 1 || static_cast<std::size_t>(t) > rewards.size())
    throw InvariantError("combined_advantage: t outside 1..n");
  double tail = 0;
  double disc = 1;
  for (std::size_t k = static_cast<std::size_t>(t - 1); k < rewards.size(); ++k) {
    tail += disc * rewards[k];
    disc *= gamma;
  }
  return group_adv + tail;
}

struct AdvantageTable {
  std::vector<double> group;                  // A_G(i)
  std::vector<std::vector<double>> per_step;  // hat A_i(a_t), t = 1..|M_i|
};

// `action_rewards[i]` holds r(a_1..a_n) of trajectory i. Honors the ablation flags.
inline AdvantageTable build_advantages(std::span<const double> group_rewards,
                                       const std::vector<std::vector<double>>& action_rewards,
                                       const RewardConfig& cfg) {
  AdvantageTable tab;
  tab.group = normalize_group(group_rewards);
  if (cfg.disable_group_adv) std::fill(tab.group.begin(), tab.group.end(), 0.0);
  for (std::size_t i = 0; i < action_rewards.size(); ++i) {
    std::vector<double> rewards = action_rewards[i];
    if (cfg.disable_action_reward) std::fill(rewards.begin(), rewards.end(), 0.0);
    std::vector<double> adv;
    for (std::size_t t = 1; t <= rewards.size(); ++t)
      adv.push_back(combined_advantage(tab.group[i], rewards, cfg.gamma, static_cast<int>(t)));
    tab.per_step.push_back(std::move(adv));
  }
  return tab;
}

}  // namespace mashost
