#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "mashost/checkpoint.hpp"
#include "mashost/policy.hpp"

using namespace mashost;

namespace {

// Params whose node head emits exactly `logits` regardless of input.
PolicyParams constant_logits(const std::vector<double>& logits, std::size_t dim = 4) {
  PolicyParams p = PolicyParams::init(dim, 3, logits.size() - 2, 1).zeros_like();
  for (std::size_t i = 0; i < logits.size(); ++i) p.node.b2[static_cast<Eigen::Index>(i)] = logits[i];
  return p;
}

FeatureVector zeros(std::size_t d) { return FeatureVector(d, 0.0); }

ActionMask all_legal(std::size_t n) { return ActionMask(n, 1); }

// A random legal step with shapes matching `params`.
TrajectoryStep random_step(const PolicyParams& params, Rng& rng) {
  const std::size_t k = params.role_count();
  const std::size_t d = params.feature_dim();
  TrajectoryStep s;
  s.step_index = 1;
  s.state_features.resize(d);
  for (auto& x : s.state_features) x = 2 * uniform01(rng) - 1;
  s.mask.assign(k + 2, 1);
  for (auto& m : s.mask) m = uniform01(rng) < 0.8;
  const auto a = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k + 2));
  s.mask[std::min(a, k + 1)] = 1;
  const std::size_t ai = std::min(a, k + 1);
  s.action = ai < k ? Action::add(ai) : (ai == k ? Action::remove() : Action::exit());
  if (s.action.is_role()) {
    const auto n = static_cast<std::size_t>(uniform01(rng) * 5);
    for (std::size_t j = 0; j < n; ++j) {
      FeatureVector f(d);
      for (auto& x : f) x = 2 * uniform01(rng) - 1;
      s.edge_features.push_back(f);
      if (uniform01(rng) < 0.5) s.sampled_edges.push_back(j);
      s.edge_logprobs.push_back(0.0);
    }
  }
  return s;
}

double block_rel_error(const PolicyParams& analytic, const PolicyParams& numeric, std::size_t b) {
  const auto x = analytic.blocks()[b];
  const auto y = numeric.blocks()[b];
  double diff = 0, na = 0, nn = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    diff += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
    na += x.data[i] * x.data[i];
    nn += y.data[i] * y.data[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

}  // namespace

TEST(NodeDistribution, UniformOverFive) {
  auto p = constant_logits({0, 0, 0, 0, 0});
  auto d = node_distribution(p, zeros(4), all_legal(5));
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(d[i], 0.2, 1e-12);
}

TEST(NodeDistribution, EmptyGraphMasksDelete) {
  MasGraph g(3);
  auto mask = make_mask(g);
  auto p = constant_logits({0, 0, 0, 0, 0});
  auto d = node_distribution(p, zeros(4), mask);
  EXPECT_EQ(d[3], 0.0);
  EXPECT_EQ(d[4], 0.0) << "EXIT is masked on an empty graph too";
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(d[i], 1.0 / 3.0, 1e-12);
  // With EXIT legal but DELETE masked the remaining four share equally.
  ActionMask only_delete_masked = {1, 1, 1, 0, 1};
  auto d2 = node_distribution(p, zeros(4), only_delete_masked);
  EXPECT_EQ(d2[3], 0.0);
  for (Eigen::Index i : {0, 1, 2, 4}) EXPECT_NEAR(d2[i], 0.25, 1e-12);
}

TEST(NodeDistribution, ClosedFormSoftmax) {
  auto p = constant_logits({1, 1, 1, 1, 1 + std::log(2.0)});
  auto d = node_distribution(p, zeros(4), all_legal(5));
  EXPECT_NEAR(d[4], 2.0 / 6.0, 1e-12);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(d[i], 1.0 / 6.0, 1e-12);
}

TEST(NodeDistribution, AllMaskedIsError) {
  auto p = constant_logits({0, 0, 0, 0, 0});
  EXPECT_THROW(node_distribution(p, zeros(4), ActionMask(5, 0)), InvalidActionError);
}

TEST(NodeDistribution, ValidOnRandomInputs) {
  Rng rng(3);
  auto params = PolicyParams::init(8, 5, 4, 11, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    FeatureVector x(8);
    for (auto& v : x) v = 4 * uniform01(rng) - 2;
    ActionMask m(6);
    for (auto& b : m) b = uniform01(rng) < 0.6;
    m[static_cast<std::size_t>(trial % 6)] = 1;
    auto d = node_distribution(params, x, m);
    EXPECT_NEAR(d.sum(), 1.0, 1e-9);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      EXPECT_GE(d[i], 0.0);
      if (!m[static_cast<std::size_t>(i)]) {
        EXPECT_EQ(d[i], 0.0);
      }
    }
  }
}

TEST(Mask, CapacityDisablesRoles) {
  MasGraph g(2, 2);
  g.add_agent(0, 1);
  g.add_agent(1, 2);
  auto m = make_mask(g);
  EXPECT_EQ(m, (ActionMask{0, 0, 1, 1}));
}

TEST(SampleNode, GreedyArgmax) {
  Rng rng(0);
  VectorXd d(3);
  d << 0.1, 0.7, 0.2;
  auto [i, lp] = sample_node(d, rng, SampleMode::Greedy);
  EXPECT_EQ(i, 1u);
  EXPECT_NEAR(lp, std::log(0.7), 1e-15);
}

TEST(SampleNode, GreedyTieLowestIndex) {
  Rng rng(0);
  VectorXd d(2);
  d << 0.5, 0.5;
  EXPECT_EQ(sample_node(d, rng, SampleMode::Greedy).first, 0u);
}

TEST(SampleNode, ExploreFrequencies) {
  Rng rng(42);
  VectorXd d = VectorXd::Constant(4, 0.25);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_node(d, rng, SampleMode::Explore).first];
  for (int c : counts) EXPECT_NEAR(c / static_cast<double>(n), 0.25, 0.01);
}

TEST(SampleNode, ExploreNeverPicksMasked) {
  Rng rng(5);
  VectorXd d(4);
  d << 0.0, 0.5, 0.0, 0.5;
  for (int i = 0; i < 10000; ++i) {
    auto k = sample_node(d, rng, SampleMode::Explore).first;
    ASSERT_TRUE(k == 1 || k == 3);
  }
}

TEST(SampleNode, GreedyInvariantToLogitShift) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(6);
    for (auto& l : logits) l = 6 * uniform01(rng) - 3;
    const double shift = 20 * uniform01(rng) - 10;
    std::vector<double> shifted = logits;
    for (auto& l : shifted) l += shift;
    auto a = node_distribution(constant_logits(logits), zeros(4), all_legal(6));
    auto b = node_distribution(constant_logits(shifted), zeros(4), all_legal(6));
    EXPECT_EQ(sample_node(a, rng, SampleMode::Greedy).first, sample_node(b, rng, SampleMode::Greedy).first);
  }
}

TEST(EdgeDistribution, EmptyGraph) {
  auto p = PolicyParams::init(4, 3, 2, 1);
  EXPECT_EQ(edge_distribution(p, std::vector<FeatureVector>{}).size(), 0);
}

TEST(EdgeDistribution, ZeroLogitIsHalf) {
  auto p = PolicyParams::init(4, 3, 2, 1).zeros_like();
  auto q = edge_distribution(p, {zeros(4)});
  ASSERT_EQ(q.size(), 1);
  EXPECT_DOUBLE_EQ(q[0], 0.5);
}

TEST(EdgeDistribution, ClosedFormSigmoid) {
  auto p = PolicyParams::init(2, 1, 2, 1).zeros_like();
  p.edge.w1(0, 0) = 1.0;
  p.edge.w2(0, 0) = 2.0;
  const double l4 = std::log(4.0);
  FeatureVector a = {std::atanh(l4 / 2), 0}, b = {std::atanh(-l4 / 2), 0};
  auto q = edge_distribution(p, {a, b});
  EXPECT_NEAR(q[0], 0.8, 1e-12);
  EXPECT_NEAR(q[1], 0.2, 1e-12);
}

TEST(Jpss, InclusionLaw) {
  Rng rng(2024);
  VectorXd pae(2);
  pae << 0.8, 0.2;
  const int n = 100000;
  int c0 = 0, c1 = 0, first_only = 0;
  for (int i = 0; i < n; ++i) {
    auto s = jpss_sample_edges(0.5, pae, rng);
    const bool in0 = std::count(s.included.begin(), s.included.end(), 0u) > 0;
    const bool in1 = std::count(s.included.begin(), s.included.end(), 1u) > 0;
    c0 += in0;
    c1 += in1;
    first_only += in0 && !in1;
  }
  auto bound = [n](double q) { return 3 * std::sqrt(q * (1 - q) / n); };
  EXPECT_NEAR(c0 / double(n), 0.4, bound(0.4));
  EXPECT_NEAR(c1 / double(n), 0.1, bound(0.1));
  EXPECT_NEAR(first_only / double(n), 0.36, bound(0.36));
}

TEST(Jpss, CertainEdge) {
  Rng rng(1);
  VectorXd pae(1);
  pae << 1.0;
  for (int i = 0; i < 100; ++i) {
    auto s = jpss_sample_edges(1.0, pae, rng);
    ASSERT_EQ(s.included, (std::vector<NodeId>{0}));
    ASSERT_EQ(s.logprobs[0], 0.0);
  }
}

TEST(Jpss, FirstAgentHasNoCandidates) {
  Rng rng(1);
  auto s = jpss_sample_edges(0.5, VectorXd(0), rng);
  EXPECT_TRUE(s.included.empty());
  EXPECT_TRUE(s.logprobs.empty());
}

TEST(Jpss, GreedyThreshold) {
  Rng rng(1);
  VectorXd pae(3);
  pae << 1.0, 0.5, 0.9;
  auto s = jpss_sample_edges(0.5, pae, rng, SampleMode::Greedy);
  EXPECT_EQ(s.included, (std::vector<NodeId>{0}));  // q = 0.5, 0.25, 0.45
  EXPECT_NEAR(s.logprobs[1], std::log(0.75), 1e-15);
}

TEST(StepLogprob, MatchesSampledValues) {
  Rng rng(77);
  auto params = PolicyParams::init(6, 4, 3, 5, 0.8);
  for (int trial = 0; trial < 100; ++trial) {
    auto step = random_step(params, rng);
    // Replay the sampler's own accounting for this outcome.
    auto dist = node_distribution(params, step.state_features, step.mask);
    const auto a = step_action_index(params, step);
    const double node_lp = std::log(dist[static_cast<Eigen::Index>(a)]);
    auto pae = edge_distribution(params, step.edge_features);
    double edges = 0;
    for (std::size_t j = 0; j < step.edge_features.size(); ++j)
      edges += bernoulli_logprob(dist[static_cast<Eigen::Index>(a)] * pae[static_cast<Eigen::Index>(j)],
                                 step.edge_included(j));
    auto lp = step_logprob(params, step);
    EXPECT_NEAR(lp.node, node_lp, 1e-12);
    EXPECT_NEAR(lp.total, node_lp + edges, 1e-9);
  }
}

TEST(StepLogprob, DeleteIsNodeTermOnly) {
  auto params = PolicyParams::init(6, 4, 3, 5, 0.8);
  TrajectoryStep s;
  s.state_features = FeatureVector(6, 0.3);
  s.mask = ActionMask(5, 1);
  s.action = Action::remove();
  auto lp = step_logprob(params, s);
  EXPECT_EQ(lp.total, lp.node);
  EXPECT_TRUE(lp.edges.empty());
}

TEST(StepLogprob, TemperatureAgainstRawLogits) {
  auto params = PolicyParams::init(6, 4, 3, 8, 1.0);
  TrajectoryStep s;
  s.state_features = {0.1, -0.4, 0.7, 0.2, 0.0, -0.9};
  s.mask = {1, 0, 1, 1, 1};
  s.action = Action::add(2);
  s.edge_features = {FeatureVector(6, 0.5), FeatureVector(6, -0.2)};
  s.sampled_edges = {1};
  s.edge_logprobs = {0, 0};
  const auto logits = params.node.forward(to_eigen(s.state_features)).out;
  auto brute = [&](double T) {
    double z = 0;
    for (int i = 0; i < 5; ++i)
      if (s.mask[static_cast<std::size_t>(i)]) z += std::exp(logits[i] / T);
    const double p = std::exp(logits[2] / T) / z;
    double total = std::log(p);
    const double s0 = sigmoid(params.edge.forward(to_eigen(s.edge_features[0])).out[0]);
    const double s1 = sigmoid(params.edge.forward(to_eigen(s.edge_features[1])).out[0]);
    total += std::log(1 - p * s0) + std::log(p * s1);
    return total;
  };
  const double t1 = step_logprob(params, s, {1.0, true}).total;
  const double t2 = step_logprob(params, s, {2.0, true}).total;
  EXPECT_NEAR(t1, brute(1.0), 1e-12);
  EXPECT_NEAR(t2, brute(2.0), 1e-12);
  EXPECT_NE(t1, t2);
}

TEST(StepLogprob, ShapeMismatch) {
  auto params = PolicyParams::init(6, 4, 3, 5);
  TrajectoryStep s;
  s.state_features = FeatureVector(5, 0.0);
  s.mask = ActionMask(5, 1);
  s.action = Action::exit();
  EXPECT_THROW(step_logprob(params, s), InvariantError);
  s.state_features = FeatureVector(6, 0.0);
  s.mask = ActionMask(4, 1);
  EXPECT_THROW(step_logprob(params, s), InvariantError);
  s.mask = ActionMask(5, 1);
  s.action = Action::add(0);
  s.edge_features = {FeatureVector(6, 0.0)};
  EXPECT_THROW(step_logprob(params, s), InvariantError) << "edge log-prob count";
}

TEST(StepLogprob, FeaturizerOverloadChecksCandidateCount) {
  HashFeaturizer f(16, {"A", "B"});
  auto params = PolicyParams::init(16, 4, 2, 3);
  ConstructionState st("query", MasGraph(2));
  st.graph.add_agent(0, 1);
  TrajectoryStep s;
  s.action = Action::add(1);
  s.edge_logprobs = {0.0};
  s.mask = make_mask(st.graph);
  s.state_features = f.feat_state(st);
  s.edge_features = edge_features_for(f, st, 1);
  EXPECT_NEAR(step_logprob(params, f, st, s).total, step_logprob(params, s).total, 1e-15);
  s.edge_logprobs = {0.0, 0.0};
  EXPECT_THROW(step_logprob(params, f, st, s), InvariantError);
}

TEST(Gradient, SymmetricLogitsSumToZero) {
  auto params = PolicyParams::init(4, 3, 3, 0).zeros_like();
  TrajectoryStep s;
  s.state_features = FeatureVector(4, 0.0);
  s.mask = ActionMask(5, 1);
  s.action = Action::add(1);
  auto g = grad_step_logprob(params, s);
  EXPECT_NEAR(g.node.b2.sum(), 0.0, 1e-15);
}

TEST(Gradient, MaskedLogitsGetZero) {
  Rng rng(4);
  auto params = PolicyParams::init(5, 3, 3, 2, 0.7);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_step(params, rng);
    auto g = grad_step_logprob(params, s);
    for (std::size_t i = 0; i < s.mask.size(); ++i)
      if (!s.mask[i]) {
        EXPECT_EQ(g.node.b2[static_cast<Eigen::Index>(i)], 0.0);
      }
  }
}

// Central differences (h = 1e-5) on 120 random (state, step) pairs, both JPSS modes.
TEST(Gradient, FiniteDifferences) {
  Rng rng(123);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    auto params = PolicyParams::init(5, 4, 3, 1000 + static_cast<std::uint64_t>(trial), 0.6);
    auto step = random_step(params, rng);
    const PolicyOptions opt{trial % 3 == 0 ? 1.5 : 1.0, trial % 4 != 0};
    auto analytic = grad_step_logprob(params, step, opt);
    PolicyParams numeric = params.zeros_like();
    PolicyParams probe = params;
    auto pb = probe.blocks();
    auto nb = numeric.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b)
      for (Eigen::Index i = 0; i < pb[b].size(); ++i) {
        const double orig = pb[b].data[i];
        pb[b].data[i] = orig + h;
        const double up = step_logprob(probe, step, opt).total;
        pb[b].data[i] = orig - h;
        const double down = step_logprob(probe, step, opt).total;
        pb[b].data[i] = orig;
        nb[b].data[i] = (up - down) / (2 * h);
      }
    for (std::size_t b = 0; b < pb.size(); ++b)
      EXPECT_LT(block_rel_error(analytic, numeric, b), 1e-4) << "trial " << trial << " block " << pb[b].name;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Params, InitIsSmallUniform) {
  auto p = PolicyParams::init(256, 64, 25, 0);
  for (const auto& b : p.blocks())
    for (Eigen::Index i = 0; i < b.size(); ++i) ASSERT_LE(std::abs(b.data[i]), 0.05);
  EXPECT_EQ(p.node.output_dim(), 27u);
  EXPECT_EQ(p.edge.output_dim(), 1u);
  EXPECT_EQ(PolicyParams::init(256, 64, 25, 0), p);
  EXPECT_FALSE(PolicyParams::init(256, 64, 25, 1) == p);
}

TEST(Checkpoint, BitExactRoundTrip) {
  auto p = PolicyParams::init(7, 5, 4, 99, 3.0);
  p.node.w1(0, 0) = 1.0 / 3.0;
  p.edge.b2[0] = -0.0;
  std::stringstream buf;
  write_checkpoint(buf, {p, {{"note", "x"}}});
  auto ck = read_checkpoint(buf);
  EXPECT_EQ(ck.params, p);
  EXPECT_EQ(ck.meta["note"], "x");
  EXPECT_TRUE(std::signbit(ck.params.edge.b2[0]));
}

TEST(Checkpoint, RejectsCorruption) {
  auto p = PolicyParams::init(3, 2, 2, 1);
  std::stringstream buf;
  write_checkpoint(buf, {p, {}});
  std::string bytes = buf.str();
  std::stringstream bad_magic(std::string("XXXX") + bytes.substr(4));
  EXPECT_THROW(read_checkpoint(bad_magic), ValidationError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(truncated), ValidationError);
}

TEST(HashFeaturizer, DeterministicFixedDimension) {
  HashFeaturizer f(32, {"Algebra Solver", "Geometry Specialist"});
  ConstructionState s("Find the area of the triangle", MasGraph(2));
  EXPECT_EQ(f.feat_state(s).size(), 32u);
  EXPECT_EQ(f.feat_state(s), f.feat_state(s));
  s.graph.add_agent(1, 1);
  s.messages.push_back({0, "area is 6", 1, 1});
  auto a = f.feat_state(s);
  EXPECT_EQ(a.size(), 32u);
  EXPECT_EQ(f.feat_edge(s, 0, 0).size(), 32u);
  EXPECT_EQ(f.feat_edge(s, 0, 0), f.feat_edge(s, 0, 0));
  EXPECT_NE(f.feat_edge(s, 0, 0), f.feat_edge(s, 1, 0));
}

TEST(HashFeaturizer, SaltSeparatesQueryFromGraph) {
  HashFeaturizer f(4096, {"Algebra Solver"});
  ConstructionState mentions("algebra solver", MasGraph(1));
  ConstructionState contains("", MasGraph(1));
  contains.graph.add_agent(0, 1);
  EXPECT_NE(f.feat_state(mentions), f.feat_state(contains));
}

TEST(Tokenize, LowercaseAlnumRuns) {
  EXPECT_EQ(tokenize("Hello, World-42!"), (std::vector<std::string>{"hello", "world", "42"}));
  EXPECT_TRUE(tokenize("  ...").empty());
}
