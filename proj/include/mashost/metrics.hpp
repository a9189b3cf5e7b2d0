#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/rollout.hpp"

namespace mashost {

struct TokenPrice {
  double prompt_per_million = 0.15;
  double completion_per_million = 0.60;

  double cost(const TokenCount& t) const {
    return (static_cast<double>(t.prompt) * prompt_per_million +
            static_cast<double>(t.completion) * completion_per_million) /
           1e6;
  }
};

struct MetricsReport {
  std::size_t records = 0;
  std::size_t correct = 0;
  std::size_t failures = 0;  // backend errors (graded incorrect)
  double accuracy = 0;
  double mean_prompt_tokens = 0;
  double mean_completion_tokens = 0;
  double mean_cost_usd = 0;
  double mean_agents = 0;
  std::vector<double> round_mean_reward;
  std::vector<double> round_accuracy;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["records"] = records;
    j["correct"] = correct;
    j["failures"] = failures;
    j["accuracy"] = accuracy;
    j["mean_prompt_tokens"] = mean_prompt_tokens;
    j["mean_completion_tokens"] = mean_completion_tokens;
    j["mean_cost_usd"] = mean_cost_usd;
    j["mean_agents"] = mean_agents;
    j["round_mean_reward"] = round_mean_reward;
    j["round_accuracy"] = round_accuracy;
    return j;
  }
};

// Integer sums only, so merging in any order gives bit-identical reports.
class MetricsAccumulator {
 public:
  void add(const Trajectory& t) {
    ++records_;
    correct_ += t.correct ? 1 : 0;
    failures_ += t.failed ? 1 : 0;
    tokens_ += t.ledger.final_tokens;
    agents_ += t.final_state.graph.size();
  }

  void merge(const MetricsAccumulator& o) {
    records_ += o.records_;
    correct_ += o.correct_;
    failures_ += o.failures_;
    tokens_ += o.tokens_;
    agents_ += o.agents_;
  }

  MetricsReport report(const TokenPrice& price) const {
    MetricsReport r;
    r.records = records_;
    r.correct = correct_;
    r.failures = failures_;
    if (records_ == 0) return r;
    const double n = static_cast<double>(records_);
    r.accuracy = static_cast<double>(correct_) / n;
    r.mean_prompt_tokens = static_cast<double>(tokens_.prompt) / n;
    r.mean_completion_tokens = static_cast<double>(tokens_.completion) / n;
    r.mean_cost_usd = price.cost(tokens_) / n;
    r.mean_agents = static_cast<double>(agents_) / n;
    return r;
  }

 private:
  std::size_t records_ = 0;
  std::size_t correct_ = 0;
  std::size_t failures_ = 0;
  TokenCount tokens_;
  std::size_t agents_ = 0;
};

}  // namespace mashost
