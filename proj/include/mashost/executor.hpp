#pragma once

// Runs agents of a (partial) system over a pluggable backend.
//
// An agent sees the query plus the messages of its direct predecessors, in
// insertion order. The summary agent sees the query plus every message in the
// pool. Results of agent calls are memoized in a MessagePoolCache keyed by
// (role, fingerprint(query, predecessor contents)); a hit charges no tokens.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mashost/error.hpp"
#include "mashost/features.hpp"
#include "mashost/graph.hpp"
#include "mashost/roles.hpp"

namespace mashost {

struct InvocationRequest {
  std::optional<RoleId> role;  // empty for the summary agent
  std::string system_prompt;
  std::vector<std::string> context;  // collaborator messages, in order
  std::string query;

  bool is_summary() const { return !role.has_value(); }
};

struct InvocationResult {
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t tokens() const { return prompt_tokens + completion_tokens; }
};

// Must tolerate concurrent invoke() calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual InvocationResult invoke(const InvocationRequest& request) = 0;
};

struct TokenCount {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;

  std::int64_t total() const { return prompt + completion; }
  TokenCount& operator+=(const TokenCount& o) {
    prompt += o.prompt;
    completion += o.completion;
    return *this;
  }
  friend bool operator==(const TokenCount&, const TokenCount&) = default;
};

inline TokenCount charged(const MessageRecord& m) {
  return m.cached ? TokenCount{} : TokenCount{m.prompt_tokens, m.completion_tokens};
}

// final: retained agents + final summary (the Tokens of the group reward).
// probe: intermediate O_t summaries. deleted: agents removed by DELETE.
struct TokenLedger {
  TokenCount final_tokens;
  TokenCount probe_tokens;
  TokenCount deleted_tokens;

  TokenCount all() const {
    TokenCount t = final_tokens;
    t += probe_tokens;
    t += deleted_tokens;
    return t;
  }
  friend bool operator==(const TokenLedger&, const TokenLedger&) = default;
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// Stable hash of (query, ordered contents).
inline std::string context_fingerprint(const std::string& query,
                                       const std::vector<std::string>& contents) {
  std::uint64_t h = fnv1a64("query", query);
  for (const auto& c : contents) h = fnv1a64(hex64(h), c);
  return hex64(h);
}

class MessagePoolCache {
 public:
  struct Entry {
    std::string content;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
  };

  // Returns the cached entry, or calls `make` and stores its result. When two
  // callers race on one key the first stored entry wins and both see it.
  std::pair<Entry, bool> get_or_invoke(const std::string& key, const std::function<Entry()>& make) {
    {
      std::lock_guard lock(mu_);
      if (auto it = map_.find(key); it != map_.end()) return {it->second, true};
    }
    Entry fresh = make();
    std::lock_guard lock(mu_);
    auto [it, inserted] = map_.emplace(key, std::move(fresh));
    return {it->second, !inserted};
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, Entry> map_;
};

inline constexpr const char* kSummaryPrompt =
    "You are the summary agent of a multi-agent system. Synthesize the collaborators' "
    "messages into one final answer to the query. Finish with a line of the form "
    "'Final answer: <answer>'.";

class Executor {
 public:
  Executor(Backend& backend, const RolePool& pool, MessagePoolCache* cache = nullptr)
      : backend_(backend), pool_(pool), cache_(cache) {}

  void set_cache(MessagePoolCache* cache) { cache_ = cache; }

  // Executes `node`, which must be the next unexecuted agent (so every predecessor
  // already has a record), and appends its record to the pool.
  const MessageRecord& run_agent(ConstructionState& state, NodeId node) {
    if (node >= state.graph.size()) throw InvariantError("run_agent: unknown node");
    if (state.executed(node)) throw InvariantError("run_agent: node already executed");
    if (node != state.messages.size())
      throw InvariantError("run_agent: agents must run in insertion order");
    const auto preds = state.graph.predecessors_of(node);
    std::vector<std::string> context;
    for (NodeId p : preds) {
      if (!state.executed(p)) throw InvariantError("run_agent: predecessor has no message");
      context.push_back(state.messages[p].content);
    }
    const RoleId role = state.graph.node(node).role;
    InvocationRequest req{role, pool_[role].system_prompt, context, state.query};
    auto call = [&] {
      auto r = backend_.invoke(req);
      if (r.prompt_tokens < 0 || r.completion_tokens < 0)
        throw BackendError("backend reported negative token counts");
      ++invocations_;
      return MessagePoolCache::Entry{r.content, r.prompt_tokens, r.completion_tokens};
    };
    MessageRecord rec;
    rec.node_id = node;
    if (cache_) {
      auto key = std::to_string(role) + ":" + context_fingerprint(state.query, context);
      auto [entry, hit] = cache_->get_or_invoke(key, call);
      rec.content = entry.content;
      rec.prompt_tokens = entry.prompt_tokens;
      rec.completion_tokens = entry.completion_tokens;
      rec.cached = hit;
    } else {
      auto entry = call();
      rec.content = std::move(entry.content);
      rec.prompt_tokens = entry.prompt_tokens;
      rec.completion_tokens = entry.completion_tokens;
    }
    state.messages.push_back(std::move(rec));
    return state.messages.back();
  }

  // Runs every agent that has no record yet.
  void execute_pending(ConstructionState& state) {
    for (NodeId n = state.messages.size(); n < state.graph.size(); ++n) run_agent(state, n);
  }

  // Intermediate output O_t. An empty system answers with the empty string.
  std::string probe_output(const ConstructionState& state, TokenLedger& ledger) {
    if (state.graph.empty()) return {};
    auto r = summarize(state);
    ledger.probe_tokens += TokenCount{r.prompt_tokens, r.completion_tokens};
    return r.content;
  }

  // Final answer on EXIT. Charges retained agents and the summary to final_tokens.
  std::string finalize(const ConstructionState& state, TokenLedger& ledger) {
    if (state.graph.empty()) throw InvalidActionError("EXIT on an empty system");
    if (state.messages.size() != state.graph.size())
      throw InvariantError("finalize: some agents were not executed");
    auto r = summarize(state);
    for (const auto& m : state.messages) ledger.final_tokens += charged(m);
    ledger.final_tokens += TokenCount{r.prompt_tokens, r.completion_tokens};
    return r.content;
  }

  std::int64_t invocations() const { return invocations_; }

 private:
  InvocationResult summarize(const ConstructionState& state) {
    std::vector<std::string> context;
    for (const auto& m : state.messages) context.push_back(m.content);
    auto r = backend_.invoke({std::nullopt, kSummaryPrompt, std::move(context), state.query});
    if (r.prompt_tokens < 0 || r.completion_tokens < 0)
      throw BackendError("backend reported negative token counts");
    ++invocations_;
    return r;
  }

  Backend& backend_;
  const RolePool& pool_;
  MessagePoolCache* cache_;
  std::atomic<std::int64_t> invocations_{0};
};

// Deterministic offline backend with fixed token counts.
class MockBackend : public Backend {
 public:
  struct Options {
    std::int64_t agent_prompt_tokens = 30;
    std::int64_t agent_completion_tokens = 20;
    std::int64_t summary_prompt_tokens = 40;
    std::int64_t summary_completion_tokens = 10;
    std::optional<std::string> summary_answer;  // echoed by every summary call
    std::set<RoleId> failing_roles;             // invoke() throws for these
  };

  MockBackend() = default;
  explicit MockBackend(Options o) : opt_(std::move(o)) {}

  InvocationResult invoke(const InvocationRequest& req) override {
    if (req.role && opt_.failing_roles.count(*req.role))
      throw BackendError("mock failure for role " + std::to_string(*req.role));
    const std::string fp = context_fingerprint(req.system_prompt + "\n" + req.query, req.context);
    if (req.is_summary()) {
      std::string answer = opt_.summary_answer ? *opt_.summary_answer : "answer-" + fp.substr(0, 8);
      return {answer, opt_.summary_prompt_tokens, opt_.summary_completion_tokens};
    }
    std::ostringstream os;
    os << "agent " << *req.role << " note " << fp.substr(0, 12) << " after " << req.context.size();
    return {os.str(), opt_.agent_prompt_tokens, opt_.agent_completion_tokens};
  }

 private:
  Options opt_;
};

// Forwards to another backend and totals what it reports.
class CountingBackend : public Backend {
 public:
  explicit CountingBackend(Backend& inner) : inner_(inner) {}

  InvocationResult invoke(const InvocationRequest& req) override {
    auto r = inner_.invoke(req);
    calls_ += 1;
    prompt_ += r.prompt_tokens;
    completion_ += r.completion_tokens;
    return r;
  }

  std::int64_t calls() const { return calls_; }
  TokenCount reported() const { return {prompt_.load(), completion_.load()}; }

 private:
  Backend& inner_;
  std::atomic<std::int64_t> calls_{0};
  std::atomic<std::int64_t> prompt_{0};
  std::atomic<std::int64_t> completion_{0};
};

}  // namespace mashost
