#pragma once

// Deterministic synthetic tasks with an exact reward oracle.
//
// A task names a set of required roles R*. Each agent answers with a marker of
// its role; the summary agent returns the task's answer token iff the
// contributing roles cover R* (chain variant: iff the required roles appear in
// order along some path of the graph).

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"
#include "mashost/executor.hpp"
#include "mashost/reward.hpp"
#include "mashost/rng.hpp"
#include "mashost/roles.hpp"
#include "mashost/rollout.hpp"

namespace mashost {

struct SynthWorld {
  std::size_t role_count = 6;                        // K
  std::pair<std::size_t, std::size_t> size_range{1, 2};  // |R*|
  std::pair<std::int64_t, std::int64_t> cost_range{60, 140};
  std::int64_t summary_cost = 80;
  std::uint64_t seed = 0;
  bool chain = false;

  void validate(std::size_t max_steps = kDefaultMaxNodes) const {
    auto fail = [](const std::string& m) { throw ConfigError("synth world: " + m); };
    if (role_count < 1) fail("K must be >= 1");
    if (size_range.first < 1 || size_range.first > size_range.second) fail("bad size_range");
    if (size_range.second > role_count) fail("size_range exceeds K");
    if (size_range.second + 1 > max_steps) fail("|R*| must be <= T_max - 1");
    if (cost_range.first < 1 || cost_range.first > cost_range.second) fail("bad cost_range");
    if (summary_cost < 1) fail("summary_cost must be positive");
  }
};

inline SynthWorld world_from_json(const nlohmann::json& j) {
  SynthWorld w;
  try {
    w.role_count = j.at("K").get<std::size_t>();
    if (j.contains("size_range")) {
      w.size_range = {j["size_range"].at(0).get<std::size_t>(), j["size_range"].at(1).get<std::size_t>()};
    }
    if (j.contains("cost_range")) {
      w.cost_range = {j["cost_range"].at(0).get<std::int64_t>(), j["cost_range"].at(1).get<std::int64_t>()};
    }
    w.summary_cost = j.value("summary_cost", w.summary_cost);
    w.seed = j.value("seed", w.seed);
    w.chain = j.value("chain", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth world spec: ") + e.what());
  }
  return w;
}

inline nlohmann::ordered_json world_to_json(const SynthWorld& w) {
  nlohmann::ordered_json j;
  j["K"] = w.role_count;
  j["size_range"] = {w.size_range.first, w.size_range.second};
  j["cost_range"] = {w.cost_range.first, w.cost_range.second};
  j["summary_cost"] = w.summary_cost;
  j["seed"] = w.seed;
  j["chain"] = w.chain;
  return j;
}

inline SynthWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open world spec: " + path);
  try {
    return world_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("world spec " + path + ": " + e.what());
  }
}

struct SyntheticTask {
  std::string id;
  std::string query;
  std::vector<RoleId> required;  // R*; in chain worlds this is the required order
  std::string ground_truth;
  std::vector<std::int64_t> role_cost;  // prompt+completion per role
  std::int64_t summary_cost = 0;
  bool chain = false;

  bool covered_by(const std::set<RoleId>& roles) const {
    return std::all_of(required.begin(), required.end(), [&](RoleId r) { return roles.count(r) > 0; });
  }
};

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1)));
}

inline SyntheticTask generate_task(const SynthWorld& world, const RolePool& pool, Rng& rng) {
  if (pool.size() < world.role_count) throw ConfigError("role pool smaller than synth world K");
  SyntheticTask task;
  task.chain = world.chain;
  const auto n = static_cast<std::size_t>(
      uniform_int(rng, static_cast<std::int64_t>(world.size_range.first),
                  static_cast<std::int64_t>(world.size_range.second)));
  std::vector<RoleId> ids(world.role_count);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(ids[i], ids[i + uniform_index(rng, ids.size() - i)]);
  task.required.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  if (!world.chain) std::sort(task.required.begin(), task.required.end());
  for (std::size_t r = 0; r < world.role_count; ++r)
    task.role_cost.push_back(uniform_int(rng, world.cost_range.first, world.cost_range.second));
  task.summary_cost = world.summary_cost;
  const std::uint64_t tag = rng();
  task.ground_truth = "ans" + hex64(tag).substr(0, 8);
  task.id = "synth-" + hex64(tag).substr(8, 8);

  std::ostringstream q;
  q << "Item " << (tag % 10000) << ": this problem needs ";
  for (std::size_t i = 0; i < task.required.size(); ++i) {
    if (i) q << (world.chain ? ", followed by " : " and ");
    q << "the " << pool[task.required[i]].name;
  }
  q << ". Report the resolution code.";
  task.query = q.str();
  return task;
}

// Task for a free-form query: R* is every pool role named in the text (in order of
// first mention), costs are drawn from the world's cost range keyed by the query.
inline SyntheticTask synth_task_from_query(const SynthWorld& world, const RolePool& pool,
                                           const std::string& query) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  const std::string text = lower(query);
  std::vector<std::pair<std::size_t, RoleId>> hits;
  for (RoleId r = 0; r < std::min(world.role_count, pool.size()); ++r)
    if (auto pos = text.find(lower(pool[r].name)); pos != std::string::npos) hits.emplace_back(pos, r);
  if (hits.empty()) throw ValidationError("query names no role of the synthetic world");
  std::sort(hits.begin(), hits.end());
  SyntheticTask task;
  task.chain = world.chain;
  for (const auto& h : hits) task.required.push_back(h.second);
  if (!world.chain) std::sort(task.required.begin(), task.required.end());
  Rng rng(derive_seed(world.seed, {fnv1a64("query", query)}));
  for (std::size_t r = 0; r < world.role_count; ++r)
    task.role_cost.push_back(uniform_int(rng, world.cost_range.first, world.cost_range.second));
  task.summary_cost = world.summary_cost;
  const std::uint64_t tag = rng();
  task.ground_truth = "ans" + hex64(tag).substr(0, 8);
  task.id = "query-" + hex64(tag).substr(8, 8);
  task.query = query;
  return task;
}

// Agent messages look like "role=<id> prefix=<m> contributed <name>".
class SynthBackend : public Backend {
 public:
  SynthBackend(SyntheticTask task, std::vector<std::string> role_names)
      : task_(std::move(task)), names_(std::move(role_names)) {}

  static constexpr const char* kWrongAnswer = "unresolved";

  InvocationResult invoke(const InvocationRequest& req) override {
    if (req.is_summary()) {
      const bool ok = task_.chain ? chain_complete(req.context) : covered(req.context);
      const auto cost = task_.summary_cost;
      return {ok ? task_.ground_truth : std::string(kWrongAnswer), cost - cost / 3, cost / 3};
    }
    const RoleId r = *req.role;
    std::size_t prefix = 0;
    for (const auto& m : req.context) prefix = std::max(prefix, parse_field(m, "prefix="));
    if (prefix < task_.required.size() && task_.required[prefix] == r) ++prefix;
    std::ostringstream os;
    os << "role=" << r << " prefix=" << prefix << " contributed "
       << (r < names_.size() ? names_[r] : std::to_string(r));
    const auto cost = r < task_.role_cost.size() ? task_.role_cost[r] : 1;
    return {os.str(), cost - cost / 3, cost / 3};
  }

  const SyntheticTask& task() const { return task_; }

 private:
  static std::size_t parse_field(const std::string& msg, const std::string& key) {
    auto pos = msg.find(key);
    if (pos == std::string::npos) return 0;
    return static_cast<std::size_t>(std::stoul(msg.substr(pos + key.size())));
  }

  bool covered(const std::vector<std::string>& context) const {
    std::set<RoleId> seen;
    for (const auto& m : context)
      if (m.rfind("role=", 0) == 0) seen.insert(parse_field(m, "role="));
    return task_.covered_by(seen);
  }

  bool chain_complete(const std::vector<std::string>& context) const {
    for (const auto& m : context)
      if (parse_field(m, "prefix=") >= task_.required.size()) return true;
    return false;
  }

  SyntheticTask task_;
  std::vector<std::string> names_;
};

inline Task make_synth_task(const SyntheticTask& st, const RolePool& pool) {
  Task t;
  t.id = st.id;
  t.query = st.query;
  t.backend = std::make_shared<SynthBackend>(st, pool.names());
  const std::string truth = st.ground_truth;
  t.is_correct = [truth](const std::string& answer) { return answer == truth; };
  return t;
}

// Tasks i = first..first+count-1 of a stream; training and held-out sets use
// disjoint stream offsets.
inline std::vector<SyntheticTask> generate_tasks(const SynthWorld& world, const RolePool& pool,
                                                 std::size_t count, std::uint64_t stream) {
  std::vector<SyntheticTask> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(world.seed, {stream, i}));
    out.push_back(generate_task(world, pool, rng));
  }
  return out;
}

struct OracleResult {
  double best_reward = -1.0;
  std::vector<RoleId> witness;
};

// Exhaustive search over role sets of size 1..T_max-1. Ties prefer fewer roles,
// then the lexicographically smallest set.
inline OracleResult oracle_best(const SyntheticTask& task, std::size_t role_count,
                                const RewardConfig& cfg) {
  if (role_count > 16) throw UnsupportedError("oracle_best enumerates subsets; K must be <= 16");
  const auto max_size = static_cast<std::size_t>(std::max(1, cfg.max_steps - 1));
  OracleResult best;
  bool have = false;
  for (std::uint32_t mask = 1; mask < (1u << role_count); ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    if (size > max_size) continue;
    std::set<RoleId> roles;
    std::int64_t tokens = task.summary_cost;
    for (std::size_t r = 0; r < role_count; ++r)
      if (mask & (1u << r)) {
        roles.insert(r);
        tokens += task.role_cost[r];
      }
    const double reward = group_reward(task.covered_by(roles), tokens, cfg.beta);
    std::vector<RoleId> set(roles.begin(), roles.end());
    const bool better = !have || reward > best.best_reward ||
                        (reward == best.best_reward &&
                         (set.size() < best.witness.size() ||
                          (set.size() == best.witness.size() && set < best.witness)));
    if (better) {
      best = {reward, std::move(set)};
      have = true;
    }
  }
  return best;
}

struct BaselineEstimate {
  double mean_reward = 0;
  double reward_half_width = 0;  // 95% normal-approximation half-width
  double accuracy = 0;
  double accuracy_half_width = 0;
  double mean_oracle_reward = 0;
  std::size_t trials = 0;
};

// Uniform random construction: uniform over legal node actions, fair-coin edges,
// stop at EXIT or T_max (then finalize if any agent exists), on fresh tasks.
inline BaselineEstimate random_policy_baseline(const SynthWorld& world, const RolePool& pool,
                                               const RewardConfig& cfg, std::size_t trials,
                                               std::uint64_t seed) {
  if (trials < 1000) throw ConfigError("random baseline needs at least 1000 trials");
  const RolePool sub = pool.prefix(world.role_count);
  double sum = 0, sum_sq = 0, hits = 0, oracle_sum = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng task_rng(derive_seed(seed, {1, i}));
    const auto st = generate_task(world, sub, task_rng);
    SynthBackend backend(st, sub.names());
    Executor exec(backend, sub);
    Rng rng(derive_seed(seed, {2, i}));
    ConstructionState state(st.query, MasGraph(sub.size(), static_cast<std::size_t>(cfg.max_steps)));
    TokenLedger ledger;
    std::string answer;
    bool exited = false;
    for (int t = 1; t <= cfg.max_steps && !exited; ++t) {
      const auto mask = make_mask(state.graph);
      std::vector<std::size_t> legal;
      for (std::size_t a = 0; a < mask.size(); ++a)
        if (mask[a]) legal.push_back(a);
      const Action act = sub.action_at(legal[uniform_index(rng, legal.size())]);
      if (act.kind == Action::Kind::Exit) {
        answer = exec.finalize(state, ledger);
        exited = true;
      } else if (act.kind == Action::Kind::Delete) {
        state.delete_last();
      } else {
        std::vector<NodeId> preds;
        for (NodeId j = 0; j < state.graph.size(); ++j)
          if (uniform01(rng) < 0.5) preds.push_back(j);
        const NodeId id = state.graph.add_agent(act.role, t);
        state.graph.connect(id, preds);
        exec.run_agent(state, id);
      }
    }
    if (!exited && !state.graph.empty()) answer = exec.finalize(state, ledger);
    const bool ok = answer == st.ground_truth;
    const double r = group_reward(ok, ledger.final_tokens.total(), cfg.beta);
    sum += r;
    sum_sq += r * r;
    hits += ok ? 1 : 0;
    oracle_sum += oracle_best(st, sub.size(), cfg).best_reward;
  }
  const double n = static_cast<double>(trials);
  BaselineEstimate est;
  est.trials = trials;
  est.mean_reward = sum / n;
  const double var = std::max(0.0, sum_sq / n - est.mean_reward * est.mean_reward);
  est.reward_half_width = 1.96 * std::sqrt(var / n);
  est.accuracy = hits / n;
  est.accuracy_half_width = 1.96 * std::sqrt(est.accuracy * (1 - est.accuracy) / n);
  est.mean_oracle_reward = oracle_sum / n;
  return est;
}

}  // namespace mashost
