#pragma once

// Data model for the agent graph under construction: nodes carrying a role,
// edges that always point from an earlier agent to a later one, the message
// pool of executed agents, and the recorded construction trajectory.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"

namespace mashost {

using NodeId = std::size_t;
using RoleId = std::size_t;

inline constexpr std::size_t kDefaultMaxNodes = 10;

struct AgentNode {
  NodeId id = 0;
  RoleId role = 0;
  int added_step = 0;

  friend bool operator==(const AgentNode&, const AgentNode&) = default;
};

struct DirectedEdge {
  NodeId src = 0;
  NodeId dst = 0;

  friend auto operator<=>(const DirectedEdge&, const DirectedEdge&) = default;
};

class MasGraph {
 public:
  explicit MasGraph(std::size_t role_count = 1, std::size_t max_nodes = kDefaultMaxNodes)
      : role_count_(role_count), max_nodes_(max_nodes) {}

  std::size_t role_count() const { return role_count_; }
  std::size_t max_nodes() const { return max_nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  const std::vector<AgentNode>& nodes() const { return nodes_; }
  const std::set<DirectedEdge>& edges() const { return edges_; }
  const AgentNode& node(NodeId id) const { return nodes_.at(id); }

  NodeId add_agent(RoleId role, int step) {
    if (role >= role_count_)
      throw InvariantError("role id " + std::to_string(role) + " outside role pool of size " +
                           std::to_string(role_count_));
    if (nodes_.size() >= max_nodes_)
      throw CapacityError("graph already holds " + std::to_string(max_nodes_) + " agents");
    if (!nodes_.empty() && step <= nodes_.back().added_step)
      throw InvariantError("added_step must increase with insertion order");
    const NodeId id = nodes_.size();
    nodes_.push_back({id, role, step});
    return id;
  }

  void connect(NodeId new_node, const std::vector<NodeId>& predecessors) {
    if (new_node >= nodes_.size()) throw InvariantError("connect: unknown node");
    if (!predecessors_of(new_node).empty())
      throw InvariantError("connect: node already has incoming edges");
    for (NodeId p : predecessors) {
      if (p == new_node) throw InvariantError("connect: self edge");
      if (p >= nodes_.size()) throw InvariantError("connect: unknown predecessor");
      if (nodes_[p].added_step >= nodes_[new_node].added_step)
        throw InvariantError("connect: predecessor must be added strictly before the new agent");
    }
    for (NodeId p : predecessors) edges_.insert({p, new_node});
  }

  // Removes the most recently added agent and every edge touching it.
  NodeId delete_last() {
    if (nodes_.empty()) throw InvalidActionError("DELETE on an empty graph");
    const NodeId id = nodes_.back().id;
    std::erase_if(edges_, [id](const DirectedEdge& e) { return e.src == id || e.dst == id; });
    nodes_.pop_back();
    return id;
  }

  std::vector<NodeId> predecessors_of(NodeId id) const {
    std::vector<NodeId> out;
    for (const auto& e : edges_)
      if (e.dst == id) out.push_back(e.src);
    return out;  // ascending, since edges_ is ordered by (src, dst)
  }

  std::vector<RoleId> roles() const {
    std::vector<RoleId> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.role);
    return out;
  }

  // Structural equality: same nodes (role, step) and edges.
  friend bool operator==(const MasGraph& a, const MasGraph& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t role_count_;
  std::size_t max_nodes_;
  std::vector<AgentNode> nodes_;
  std::set<DirectedEdge> edges_;
};

// Insertion order. Every edge points forward in it, so it is topological.
inline std::vector<NodeId> execution_order(const MasGraph& g) {
  std::vector<NodeId> order;
  order.reserve(g.size());
  for (const auto& n : g.nodes()) order.push_back(n.id);
  return order;
}

// Kahn-style check independent of the insertion-order argument.
inline bool has_cycle(const MasGraph& g) {
  std::vector<int> indeg(g.size(), 0);
  for (const auto& e : g.edges()) ++indeg[e.dst];
  std::vector<NodeId> ready;
  for (NodeId i = 0; i < g.size(); ++i)
    if (indeg[i] == 0) ready.push_back(i);
  std::size_t seen = 0;
  while (!ready.empty()) {
    NodeId n = ready.back();
    ready.pop_back();
    ++seen;
    for (const auto& e : g.edges())
      if (e.src == n && --indeg[e.dst] == 0) ready.push_back(e.dst);
  }
  return seen != g.size();
}

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

// `role_names[k]` labels role k; missing names fall back to "role k".
inline std::string to_dot(const MasGraph& g, const std::vector<std::string>& role_names) {
  std::ostringstream os;
  os << "digraph mas {\n";
  for (const auto& n : g.nodes()) {
    std::string label =
        n.role < role_names.size() ? role_names[n.role] : "role " + std::to_string(n.role);
    os << "  n" << n.id << " [label=\"" << dot_escape(label) << "\"];\n";
  }
  for (const auto& e : g.edges()) os << "  n" << e.src << " -> n" << e.dst << ";\n";
  os << "}\n";
  return os.str();
}

inline nlohmann::ordered_json to_json(const MasGraph& g) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::ordered_json node;
    node["id"] = n.id;
    node["role"] = n.role;
    node["step"] = n.added_step;
    j["nodes"].push_back(std::move(node));
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : g.edges()) j["edges"].push_back({e.src, e.dst});
  return j;
}

// Rebuilds a graph through add_agent/connect, so every invariant is re-checked.
inline MasGraph graph_from_json(const nlohmann::json& j, std::size_t role_count,
                                std::size_t max_nodes = kDefaultMaxNodes) {
  MasGraph g(role_count, max_nodes);
  std::vector<std::vector<NodeId>> preds;
  try {
    for (const auto& n : j.at("nodes")) {
      if (n.at("id").get<NodeId>() != g.size())
        throw ValidationError("graph json: node ids must be 0..n-1 in order");
      g.add_agent(n.at("role").get<RoleId>(), n.at("step").get<int>());
      preds.emplace_back();
    }
    for (const auto& e : j.at("edges")) {
      auto src = e.at(0).get<NodeId>();
      auto dst = e.at(1).get<NodeId>();
      if (dst >= preds.size()) throw ValidationError("graph json: edge to unknown node");
      preds[dst].push_back(src);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("graph json: ") + ex.what());
  }
  for (NodeId i = 0; i < preds.size(); ++i)
    if (!preds[i].empty()) g.connect(i, preds[i]);
  return g;
}

struct MessageRecord {
  NodeId node_id = 0;
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool cached = false;  // served from the message-pool cache; charges no tokens

  std::int64_t tokens() const { return prompt_tokens + completion_tokens; }
  std::int64_t charged_tokens() const { return cached ? 0 : tokens(); }
};

struct ConstructionState {
  std::string query;
  MasGraph graph;
  std::vector<MessageRecord> messages;  // messages[i] belongs to node i

  ConstructionState() = default;
  ConstructionState(std::string q, MasGraph g) : query(std::move(q)), graph(std::move(g)) {}

  bool executed(NodeId id) const { return id < messages.size(); }

  // DELETE: drops the newest agent together with its message.
  std::pair<NodeId, std::optional<MessageRecord>> delete_last() {
    NodeId id = graph.delete_last();
    std::optional<MessageRecord> removed;
    if (messages.size() > graph.size()) {
      removed = std::move(messages.back());
      messages.pop_back();
    }
    return {id, removed};
  }
};

struct Action {
  enum class Kind { Role, Delete, Exit };
  Kind kind = Kind::Exit;
  RoleId role = 0;

  static Action add(RoleId r) { return {Kind::Role, r}; }
  static Action remove() { return {Kind::Delete, 0}; }
  static Action exit() { return {Kind::Exit, 0}; }

  bool is_role() const { return kind == Kind::Role; }
  friend bool operator==(const Action&, const Action&) = default;
};

struct TrajectoryStep {
  int step_index = 0;  // t, 1-based
  Action action;
  std::vector<NodeId> sampled_edges;  // predecessors chosen for a ROLE action, ascending
  double node_logprob = 0.0;
  std::vector<double> edge_logprobs;  // one per candidate predecessor (realized outcome)
  std::string intermediate_output;    // O_t
  bool output_correct = false;
  double action_reward = 0.0;

  // Inputs the heads saw at sampling time, so log-probs can be re-evaluated under
  // new parameters without re-executing the system.
  std::vector<double> state_features;
  std::vector<std::vector<double>> edge_features;
  std::vector<char> mask;

  std::size_t candidate_count() const { return edge_features.size(); }
  bool edge_included(NodeId j) const {
    return std::binary_search(sampled_edges.begin(), sampled_edges.end(), j);
  }
};

}  // namespace mashost
