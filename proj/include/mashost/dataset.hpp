#pragma once

// Line-delimited dataset records and the per-family graders.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mashost/error.hpp"

namespace mashost {

enum class Family { Math, MultipleChoice, Code, Synthetic };

inline Family family_from_string(const std::string& s) {
  if (s == "math") return Family::Math;
  if (s == "multiple-choice" || s == "choice" || s == "mc") return Family::MultipleChoice;
  if (s == "code") return Family::Code;
  if (s == "synthetic") return Family::Synthetic;
  throw ValidationError("unknown dataset family: " + s);
}

inline std::string to_string(Family f) {
  switch (f) {
    case Family::Math:
      return "math";
    case Family::MultipleChoice:
      return "multiple-choice";
    case Family::Code:
      return "code";
    case Family::Synthetic:
      return "synthetic";
  }
  return "synthetic";
}

struct DatasetRecord {
  std::string id;
  std::string question;
  std::string answer;
  Family family = Family::Math;
};

inline std::vector<DatasetRecord> parse_dataset(std::istream& in, const std::string& origin = "dataset") {
  std::vector<DatasetRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": " + e.what());
    }
    DatasetRecord r;
    try {
      r.id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
      r.question = j.at("question").get<std::string>();
      r.answer = j.at("answer").is_string() ? j["answer"].get<std::string>() : j["answer"].dump();
      r.family = family_from_string(j.value("family", std::string("math")));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (r.answer.empty()) throw ValidationError(where + ": empty answer");
    if (!ids.insert(r.id).second) throw ValidationError(where + ": duplicate id " + r.id);
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ValidationError(origin + ": empty dataset");
  return out;
}

inline std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path);
  return parse_dataset(in, path);
}

inline std::optional<double> last_number(const std::string& text) {
  static const std::regex number(R"([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?|[-+]?\.\d+)");
  std::optional<double> last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
    std::string s = it->str();
    s.erase(std::remove(s.begin(), s.end(), ','), s.end());
    try {
      last = std::stod(s);
    } catch (const std::exception&) {
    }
  }
  return last;
}

// "(B)", "b", "B.", "The answer is (B)" -> 'B'.
inline std::optional<char> option_letter(const std::string& text) {
  static const std::regex bare(R"(^\s*\(?\s*([A-Za-z])\s*\)?\s*[.:]?\s*$)");
  static const std::regex marked(R"(\(([A-Ja-j])\))");
  static const std::regex word(R"(\b([A-J])\b)");
  std::smatch m;
  if (std::regex_match(text, m, bare)) return static_cast<char>(std::toupper(m[1].str()[0]));
  std::optional<char> found;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marked); it != std::sregex_iterator(); ++it)
    found = static_cast<char>(std::toupper((*it)[1].str()[0]));
  if (found) return found;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), word); it != std::sregex_iterator(); ++it)
    found = (*it)[1].str()[0];
  return found;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool grade(const std::string& answer, const std::string& truth, Family family) {
  switch (family) {
    case Family::Math: {
      auto a = last_number(answer);
      auto t = last_number(truth);
      if (!a || !t) return false;
      return std::abs(*a - *t) <= 1e-6 * std::max(1.0, std::abs(*t));
    }
    case Family::MultipleChoice: {
      auto a = option_letter(answer);
      auto t = option_letter(truth);
      return a && t && *a == *t;
    }
    case Family::Synthetic:
      return trim(answer) == trim(truth);
    case Family::Code:
      throw UnsupportedError("grading code answers requires sandboxed execution, which is not supported");
  }
  return false;
}

}  // namespace mashost
