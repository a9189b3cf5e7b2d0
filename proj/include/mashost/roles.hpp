#pragma once

#include <cstddef>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"
#include "mashost/graph.hpp"

namespace mashost {

struct RoleCard {
  RoleId role_id = 0;
  std::string name;
  std::vector<std::string> responsibilities;
  std::vector<std::string> assist_conditions;
  std::vector<std::string> reject_conditions;
  std::string system_prompt;
};

inline constexpr const char* kRefusalToken = "REJECT";

// Pure function of the card's content (role_id and any cached prompt are ignored).
inline std::string render_system_prompt(const RoleCard& card) {
  std::ostringstream os;
  os << "You are a " << card.name
     << ", one agent in a multi-agent system answering a user query together with "
        "cooperating agents.\n";
  os << "\nResponsibilities:\n";
  for (const auto& r : card.responsibilities) os << "- " << r << "\n";
  if (!card.assist_conditions.empty()) {
    os << "\nAssist Conditions (you may also help with):\n";
    for (const auto& a : card.assist_conditions) os << "- " << a << "\n";
  }
  if (!card.reject_conditions.empty()) {
    os << "\nReject Conditions:\n";
    for (const auto& r : card.reject_conditions) os << "- " << r << "\n";
    os << "\nIf any reject condition holds, refuse: reply with the single word " << kRefusalToken
       << " and do not attempt the query.\n";
  }
  os << "\nStay within your role. Give your contribution concisely; the final answer will be "
        "synthesized from all agents' messages.\n";
  return os.str();
}

class RolePool {
 public:
  RolePool() = default;

  // Validates and assigns role ids by position.
  explicit RolePool(std::vector<RoleCard> cards) : cards_(std::move(cards)) {
    if (cards_.empty()) throw ValidationError("role pool is empty");
    std::set<std::string> names;
    for (std::size_t i = 0; i < cards_.size(); ++i) {
      auto& c = cards_[i];
      c.role_id = i;
      if (c.name.empty()) throw ValidationError("role card " + std::to_string(i) + " has no name");
      if (!names.insert(c.name).second) throw ValidationError("duplicate role name: " + c.name);
      if (c.responsibilities.empty())
        throw ValidationError("role card '" + c.name + "' has no responsibilities");
      c.system_prompt = render_system_prompt(c);
      if (c.system_prompt.empty()) throw ValidationError("empty prompt for role " + c.name);
    }
  }

  std::size_t size() const { return cards_.size(); }
  const RoleCard& operator[](RoleId k) const { return cards_.at(k); }
  const std::vector<RoleCard>& cards() const { return cards_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : cards_) out.push_back(c.name);
    return out;
  }

  // First `k` cards as a self-contained pool.
  RolePool prefix(std::size_t k) const {
    if (k == 0 || k > cards_.size())
      throw ValidationError("cannot take " + std::to_string(k) + " roles from a pool of " +
                            std::to_string(cards_.size()));
    return RolePool(std::vector<RoleCard>(cards_.begin(), cards_.begin() + k));
  }

  // Node-action layout: ROLE(k) -> k, DELETE -> K, EXIT -> K+1.
  std::size_t action_count() const { return cards_.size() + 2; }
  std::size_t delete_index() const { return cards_.size(); }
  std::size_t exit_index() const { return cards_.size() + 1; }

  std::size_t action_index(const Action& a) const {
    switch (a.kind) {
      case Action::Kind::Role:
        if (a.role >= cards_.size()) throw InvariantError("role outside pool");
        return a.role;
      case Action::Kind::Delete:
        return delete_index();
      case Action::Kind::Exit:
        return exit_index();
    }
    return exit_index();
  }

  Action action_at(std::size_t index) const {
    if (index < cards_.size()) return Action::add(index);
    if (index == delete_index()) return Action::remove();
    if (index == exit_index()) return Action::exit();
    throw InvariantError("action index out of range");
  }

 private:
  std::vector<RoleCard> cards_;
};

inline RolePool parse_pool(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ValidationError("role-card file must hold an array of cards");
  std::vector<RoleCard> cards;
  try {
    for (const auto& item : doc) {
      RoleCard c;
      c.name = item.at("name").get<std::string>();
      c.responsibilities = item.at("responsibilities").get<std::vector<std::string>>();
      if (item.contains("assist_conditions"))
        c.assist_conditions = item["assist_conditions"].get<std::vector<std::string>>();
      if (item.contains("reject_conditions"))
        c.reject_conditions = item["reject_conditions"].get<std::vector<std::string>>();
      cards.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("role-card schema: ") + e.what());
  }
  return RolePool(std::move(cards));
}

inline RolePool load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open role pool file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (buf.str().find_first_not_of(" \t\r\n") == std::string::npos)
    throw ValidationError("role pool file is empty: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("role pool file " + path + ": " + e.what());
  }
  return parse_pool(doc);
}

inline nlohmann::ordered_json pool_to_json(const RolePool& pool) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& c : pool.cards()) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["responsibilities"] = c.responsibilities;
    if (!c.assist_conditions.empty()) j["assist_conditions"] = c.assist_conditions;
    if (!c.reject_conditions.empty()) j["reject_conditions"] = c.reject_conditions;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace mashost
