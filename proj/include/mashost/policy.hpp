#pragma once

// The two policy heads and joint probability space sampling (JPSS).
//
// Node head: features(state) -> K+2 logits -> masked softmax over
//   {ROLE(0..K-1), DELETE, EXIT}.
// Edge head: features(state, role, candidate) -> one logit per existing agent,
//   P_ae = sigmoid(logit). Candidate j is connected with probability
//   q_j = p * P_ae[j], p being the (renormalized) probability of the chosen role.
//
// A step's log-probability is ln pi_node(a) + sum_j ln Bernoulli(q_j, included_j),
// and it depends on the node head through both terms.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mashost/error.hpp"
#include "mashost/features.hpp"
#include "mashost/graph.hpp"
#include "mashost/rng.hpp"

namespace mashost {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd to_eigen(const FeatureVector& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Two-layer perceptron: out = W2 tanh(W1 x + b1) + b2.
struct Mlp {
  MatrixXd w1;
  VectorXd b1;
  MatrixXd w2;
  VectorXd b2;

  static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    auto i = static_cast<Eigen::Index>(in), h = static_cast<Eigen::Index>(hidden),
         o = static_cast<Eigen::Index>(out);
    return {MatrixXd::Zero(h, i), VectorXd::Zero(h), MatrixXd::Zero(o, h), VectorXd::Zero(o)};
  }

  static Mlp uniform(std::size_t in, std::size_t hidden, std::size_t out, double scale, Rng& rng) {
    Mlp m = zeros(in, hidden, out);
    for (auto* block : {&m.w1, &m.w2})
      for (Eigen::Index k = 0; k < block->size(); ++k)
        block->data()[k] = (2.0 * uniform01(rng) - 1.0) * scale;
    for (auto* block : {&m.b1, &m.b2})
      for (Eigen::Index k = 0; k < block->size(); ++k)
        block->data()[k] = (2.0 * uniform01(rng) - 1.0) * scale;
    return m;
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w2.rows()); }

  struct Trace {
    VectorXd x;
    VectorXd h;
    VectorXd out;
  };

  Trace forward(const VectorXd& x) const {
    Trace t;
    t.x = x;
    t.h = (w1 * x + b1).array().tanh().matrix();
    t.out = w2 * t.h + b2;
    return t;
  }

  // grad += d(out . dout)/d(params)
  void backward(const Trace& t, const VectorXd& dout, Mlp& grad) const {
    grad.w2.noalias() += dout * t.h.transpose();
    grad.b2 += dout;
    VectorXd dh = w2.transpose() * dout;
    VectorXd dpre = dh.array() * (1.0 - t.h.array().square());
    grad.w1.noalias() += dpre * t.x.transpose();
    grad.b1 += dpre;
  }

  std::vector<MatrixXd*> blocks() { return {&w1, &w2}; }
};

// theta (node head) and phi (edge head). Also used as the gradient container.
struct PolicyParams {
  Mlp node;
  Mlp edge;

  static PolicyParams init(std::size_t feature_dim, std::size_t hidden, std::size_t role_count,
                           std::uint64_t seed, double scale = 0.05) {
    Rng rng(seed);
    PolicyParams p;
    p.node = Mlp::uniform(feature_dim, hidden, role_count + 2, scale, rng);
    p.edge = Mlp::uniform(feature_dim, hidden, 1, scale, rng);
    return p;
  }

  PolicyParams zeros_like() const {
    PolicyParams z;
    z.node = Mlp::zeros(node.input_dim(), node.hidden_dim(), node.output_dim());
    z.edge = Mlp::zeros(edge.input_dim(), edge.hidden_dim(), edge.output_dim());
    return z;
  }

  std::size_t role_count() const { return node.output_dim() - 2; }
  std::size_t feature_dim() const { return node.input_dim(); }

  // Named parameter blocks, in checkpoint order.
  struct Block {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
    Eigen::Index size() const { return rows * cols; }
  };

  std::vector<Block> blocks() {
    auto mat = [](std::string n, MatrixXd& m) { return Block{std::move(n), m.data(), m.rows(), m.cols()}; };
    auto vec = [](std::string n, VectorXd& v) { return Block{std::move(n), v.data(), v.rows(), 1}; };
    return {mat("node.w1", node.w1), vec("node.b1", node.b1), mat("node.w2", node.w2),
            vec("node.b2", node.b2), mat("edge.w1", edge.w1), vec("edge.b1", edge.b1),
            mat("edge.w2", edge.w2), vec("edge.b2", edge.b2)};
  }
  std::vector<Block> blocks() const { return const_cast<PolicyParams*>(this)->blocks(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks()) n += static_cast<std::size_t>(b.size());
    return n;
  }

  // this += scale * other
  void axpy(double scale, const PolicyParams& other) {
    auto dst = blocks();
    auto src = other.blocks();
    for (std::size_t b = 0; b < dst.size(); ++b)
      for (Eigen::Index k = 0; k < dst[b].size(); ++k) dst[b].data[k] += scale * src[b].data[k];
  }

  bool all_finite() const {
    for (const auto& b : blocks())
      for (Eigen::Index k = 0; k < b.size(); ++k)
        if (!std::isfinite(b.data[k])) return false;
    return true;
  }

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    auto x = a.blocks();
    auto y = b.blocks();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].rows != y[i].rows || x[i].cols != y[i].cols) return false;
      for (Eigen::Index k = 0; k < x[i].size(); ++k)
        if (x[i].data[k] != y[i].data[k]) return false;
    }
    return true;
  }
};

// Frozen theta_old / phi_old.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(PolicyParams p) : params_(std::move(p)) {}
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

struct PolicyOptions {
  double temperature = 1.0;  // node softmax temperature
  bool jpss = true;          // false: edges use P_ae alone (ablation)
};

enum class SampleMode { Explore, Greedy };

using ActionMask = std::vector<char>;

// DELETE and EXIT need at least one agent; roles need free capacity.
inline ActionMask make_mask(const MasGraph& g) {
  const std::size_t k = g.role_count();
  ActionMask mask(k + 2, 1);
  if (g.size() >= g.max_nodes())
    for (std::size_t r = 0; r < k; ++r) mask[r] = 0;
  if (g.empty()) {
    mask[k] = 0;
    mask[k + 1] = 0;
  }
  return mask;
}

// Masked softmax of logits / temperature.
inline VectorXd masked_softmax(const VectorXd& logits, const ActionMask& mask, double temperature) {
  if (static_cast<std::size_t>(logits.size()) != mask.size())
    throw InvariantError("mask length does not match logit count");
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i] / temperature);
  if (!std::isfinite(mx)) throw InvalidActionError("action mask has no legal entry");
  VectorXd p = VectorXd::Zero(logits.size());
  double z = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (mask[i]) z += (p[i] = std::exp(logits[i] / temperature - mx));
  return p / z;
}

inline VectorXd node_distribution(const PolicyParams& params, const FeatureVector& state_features,
                                  const ActionMask& mask, const PolicyOptions& opt = {}) {
  return masked_softmax(params.node.forward(to_eigen(state_features)).out, mask, opt.temperature);
}

inline VectorXd node_distribution(const PolicyParams& params, const Featurizer& f,
                                  const ConstructionState& state, const ActionMask& mask,
                                  const PolicyOptions& opt = {}) {
  return node_distribution(params, f.feat_state(state), mask, opt);
}

// Explore: categorical draw. Greedy: argmax, lowest index on ties.
inline std::pair<std::size_t, double> sample_node(const VectorXd& dist, Rng& rng, SampleMode mode) {
  std::size_t chosen = 0;
  if (mode == SampleMode::Greedy) {
    for (Eigen::Index i = 1; i < dist.size(); ++i)
      if (dist[i] > dist[static_cast<Eigen::Index>(chosen)]) chosen = static_cast<std::size_t>(i);
  } else {
    const double u = uniform01(rng);
    double acc = 0;
    std::size_t last_positive = 0;
    bool found = false;
    for (Eigen::Index i = 0; i < dist.size(); ++i) {
      if (dist[i] <= 0) continue;
      last_positive = static_cast<std::size_t>(i);
      acc += dist[i];
      if (u < acc) {
        chosen = static_cast<std::size_t>(i);
        found = true;
        break;
      }
    }
    if (!found) chosen = last_positive;  // u beyond accumulated rounding
  }
  return {chosen, std::log(dist[static_cast<Eigen::Index>(chosen)])};
}

inline VectorXd edge_distribution(const PolicyParams& params,
                                  const std::vector<FeatureVector>& edge_features) {
  VectorXd p(static_cast<Eigen::Index>(edge_features.size()));
  for (std::size_t j = 0; j < edge_features.size(); ++j)
    p[static_cast<Eigen::Index>(j)] = sigmoid(params.edge.forward(to_eigen(edge_features[j])).out[0]);
  return p;
}

inline std::vector<FeatureVector> edge_features_for(const Featurizer& f,
                                                    const ConstructionState& state, RoleId role) {
  std::vector<FeatureVector> out;
  for (NodeId j = 0; j < state.graph.size(); ++j) out.push_back(f.feat_edge(state, role, j));
  return out;
}

inline VectorXd edge_distribution(const PolicyParams& params, const Featurizer& f,
                                  const ConstructionState& state, RoleId role) {
  return edge_distribution(params, edge_features_for(f, state, role));
}

struct EdgeSample {
  std::vector<NodeId> included;  // ascending candidate indices
  std::vector<double> logprobs;  // realized outcome per candidate
};

inline double bernoulli_logprob(double q, bool included) {
  return included ? std::log(q) : std::log1p(-q);
}

// Candidate j joins independently with probability q_j = p * P_ae[j].
inline EdgeSample jpss_sample_edges(double p, const VectorXd& edge_probs, Rng& rng,
                                    SampleMode mode = SampleMode::Explore) {
  EdgeSample s;
  for (Eigen::Index j = 0; j < edge_probs.size(); ++j) {
    const double q = p * edge_probs[j];
    const bool in = mode == SampleMode::Greedy ? q >= 0.5 : uniform01(rng) < q;
    if (in) s.included.push_back(static_cast<NodeId>(j));
    s.logprobs.push_back(bernoulli_logprob(q, in));
  }
  return s;
}

struct StepLogprob {
  double total = 0;
  double node = 0;
  std::vector<double> edges;
};

inline void check_step_shapes(const PolicyParams& params, const TrajectoryStep& step) {
  if (step.state_features.size() != params.feature_dim())
    throw InvariantError("step features do not match the policy input dimension");
  if (step.mask.size() != params.role_count() + 2)
    throw InvariantError("step mask does not match the action space");
  if (step.edge_logprobs.size() != step.edge_features.size())
    throw InvariantError("edge log-prob count does not match candidate count");
  if (!step.action.is_role() && !step.edge_features.empty())
    throw InvariantError("only ROLE steps carry edge candidates");
  for (const auto& e : step.edge_features)
    if (e.size() != params.feature_dim())
      throw InvariantError("edge features do not match the policy input dimension");
}

inline std::size_t step_action_index(const PolicyParams& params, const TrajectoryStep& step) {
  const std::size_t k = params.role_count();
  switch (step.action.kind) {
    case Action::Kind::Role:
      return step.action.role;
    case Action::Kind::Delete:
      return k;
    case Action::Kind::Exit:
      return k + 1;
  }
  return k + 1;
}

// Log-probability of a recorded step under `params`. When `grad` is given,
// grad += scale * d(logprob)/d(params).
inline StepLogprob step_logprob(const PolicyParams& params, const TrajectoryStep& step,
                                const PolicyOptions& opt = {}, PolicyParams* grad = nullptr,
                                double scale = 1.0) {
  check_step_shapes(params, step);
  const std::size_t a = step_action_index(params, step);
  if (!step.mask[a]) throw InvariantError("recorded action is masked");

  const auto node_trace = params.node.forward(to_eigen(step.state_features));
  const VectorXd probs = masked_softmax(node_trace.out, step.mask, opt.temperature);
  StepLogprob out;
  out.node = std::log(probs[static_cast<Eigen::Index>(a)]);

  // d ln p_a / d logits = (onehot_a - probs) / T; zero on masked entries.
  VectorXd dlogp_a = -probs;
  dlogp_a[static_cast<Eigen::Index>(a)] += 1.0;
  dlogp_a /= opt.temperature;
  VectorXd dlogits = dlogp_a;  // accumulates d(total)/d(logits)

  const double p = opt.jpss ? probs[static_cast<Eigen::Index>(a)] : 1.0;
  for (std::size_t j = 0; j < step.edge_features.size(); ++j) {
    const auto trace = params.edge.forward(to_eigen(step.edge_features[j]));
    const double sig = sigmoid(trace.out[0]);
    const double q = p * sig;
    const bool in = step.edge_included(j);
    out.edges.push_back(bernoulli_logprob(q, in));
    if (grad) {
      double du;  // d ln Bernoulli / d edge logit
      double dlnp;  // d ln Bernoulli / d ln p
      if (in) {
        du = 1.0 - sig;
        dlnp = 1.0;
      } else {
        du = -p * sig * (1.0 - sig) / (1.0 - q);
        dlnp = -q / (1.0 - q);
      }
      VectorXd dout(1);
      dout[0] = scale * du;
      params.edge.backward(trace, dout, grad->edge);
      if (opt.jpss) dlogits += dlnp * dlogp_a;
    }
  }
  out.total = out.node;
  for (double e : out.edges) out.total += e;
  if (grad) params.node.backward(node_trace, scale * dlogits, grad->node);
  return out;
}

// Gradient of step_logprob with respect to every parameter.
inline PolicyParams grad_step_logprob(const PolicyParams& params, const TrajectoryStep& step,
                                      const PolicyOptions& opt = {}) {
  PolicyParams g = params.zeros_like();
  step_logprob(params, step, opt, &g, 1.0);
  return g;
}

// Variant that re-featurizes from a live state and checks it matches the record.
inline StepLogprob step_logprob(const PolicyParams& params, const Featurizer& f,
                                const ConstructionState& state, const TrajectoryStep& step,
                                const PolicyOptions& opt = {}) {
  TrajectoryStep probe = step;
  probe.state_features = f.feat_state(state);
  probe.mask = make_mask(state.graph);
  probe.edge_features.clear();
  if (step.action.is_role()) probe.edge_features = edge_features_for(f, state, step.action.role);
  if (probe.edge_features.size() != step.edge_logprobs.size())
    throw InvariantError("recorded step does not match the state's candidate count");
  return step_logprob(params, probe, opt);
}

}  // namespace mashost
