#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mashost/graph.hpp"

namespace mashost {

using FeatureVector = std::vector<double>;

// Encodes construction states for the two policy heads. Implementations must be
// deterministic and return vectors of dimension() entries.
class Featurizer {
 public:
  virtual ~Featurizer() = default;
  virtual std::size_t dimension() const = 0;
  virtual FeatureVector feat_state(const ConstructionState& state) const = 0;
  virtual FeatureVector feat_edge(const ConstructionState& state, RoleId role,
                                  NodeId candidate) const = 0;
};

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::uint64_t fnv1a64(std::string_view salt, std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix(salt);
  mix("\x1f");
  mix(token);
  return h;
}

// Signed feature hashing over salted token fields. The salt keeps "query mentions
// X" apart from "the graph already contains X".
class HashFeaturizer : public Featurizer {
 public:
  HashFeaturizer(std::size_t dim, std::vector<std::string> role_names)
      : dim_(dim), role_names_(std::move(role_names)) {}

  std::size_t dimension() const override { return dim_; }

  FeatureVector feat_state(const ConstructionState& s) const override {
    FeatureVector v(dim_, 0.0);
    add_text(v, "q", s.query);
    for (const auto& n : s.graph.nodes()) add_text(v, "g", role_name(n.role));
    for (const auto& m : s.messages) add_text(v, "m", m.content);
    add_token(v, "size", std::to_string(s.graph.size()));
    return v;
  }

  FeatureVector feat_edge(const ConstructionState& s, RoleId role,
                          NodeId candidate) const override {
    FeatureVector v(dim_, 0.0);
    add_text(v, "new", role_name(role));
    const auto& cand = s.graph.node(candidate);
    add_text(v, "cand", role_name(cand.role));
    if (s.executed(candidate)) add_text(v, "cmsg", s.messages[candidate].content);
    add_text(v, "eq", s.query);
    add_token(v, "gap", std::to_string(s.graph.size() - candidate));
    return v;
  }

 private:
  std::string role_name(RoleId r) const {
    return r < role_names_.size() ? role_names_[r] : "role" + std::to_string(r);
  }

  void add_token(FeatureVector& v, std::string_view salt, std::string_view tok) const {
    const std::uint64_t h = fnv1a64(salt, tok);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h & 0x7fffffffffffffffULL) % dim_] += sign;
  }

  void add_text(FeatureVector& v, std::string_view salt, std::string_view text) const {
    for (const auto& t : tokenize(text)) add_token(v, salt, t);
  }

  std::size_t dim_;
  std::vector<std::string> role_names_;
};

}  // namespace mashost
