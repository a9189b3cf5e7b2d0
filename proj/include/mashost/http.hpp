#pragma once

// OpenAI-compatible chat-completions backend and embeddings featurizer.
//
// The wire layer is a Transport so tests can replay recorded responses; the
// default transport uses cpp-httplib.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "mashost/error.hpp"
#include "mashost/executor.hpp"
#include "mashost/features.hpp"

namespace mashost {

struct HttpResponse {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
};

// Connection-level failure worth retrying (refused, reset, timed out).
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& url,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            const std::string& body, std::chrono::milliseconds timeout) = 0;
};

struct ParsedUrl {
  std::string scheme_host_port;  // "https://api.example.com:443"
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public Transport {
 public:
  HttpResponse post(const std::string& url,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, std::chrono::milliseconds timeout) override {
    const auto target = parse_url(url);
    httplib::Client client(target.scheme_host_port);
    const auto secs = static_cast<time_t>(timeout.count() / 1000);
    const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(target.path, h, body, "application/json");
    if (!res) throw TransportError("HTTP transport failure: " + httplib::to_string(res.error()));
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    for (const auto& [k, v] : res->headers) out.headers[k] = v;
    return out;
  }
};

struct HttpConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  std::optional<std::string> api_key;  // overrides the environment variable
  int timeout_ms = 60000;
  int max_retries = 3;
  int backoff_ms = 500;  // first retry delay; doubles per attempt
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HttpConfig, endpoint, model, api_key_env,
                                                timeout_ms, max_retries, backoff_ms)

inline std::string resolve_api_key(const HttpConfig& cfg) {
  if (cfg.api_key) return *cfg.api_key;
  const char* v = std::getenv(cfg.api_key_env.c_str());
  if (!v || !*v) throw ConfigError("credential environment variable " + cfg.api_key_env + " is not set");
  return v;
}

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// POST with bounded retries: 408/429/5xx and transport failures are retried
// with exponential backoff (a Retry-After header in seconds takes precedence).
class RetryingPoster {
 public:
  RetryingPoster(HttpConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper)
      : cfg_(std::move(cfg)),
        key_(resolve_api_key(cfg_)),
        transport_(transport ? std::move(transport) : std::make_shared<HttplibTransport>()),
        sleep_(sleeper ? std::move(sleeper) : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

  const HttpConfig& config() const { return cfg_; }

  nlohmann::json post_json(const std::string& url, const nlohmann::json& body) const {
    const std::vector<std::pair<std::string, std::string>> headers = {
        {"Authorization", "Bearer " + key_}, {"Content-Type", "application/json"}};
    const std::string payload = body.dump();
    std::string last_error;
    std::optional<std::chrono::milliseconds> retry_after;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) sleep_(delay_for(attempt, retry_after));
      retry_after.reset();
      HttpResponse res;
      try {
        res = transport_->post(url, headers, payload, std::chrono::milliseconds(cfg_.timeout_ms));
      } catch (const TransportError& e) {
        last_error = e.what();
        continue;
      }
      if (res.status == 200) {
        try {
          return nlohmann::json::parse(res.body);
        } catch (const nlohmann::json::parse_error& e) {
          throw BackendError(std::string("malformed response body: ") + e.what());
        }
      }
      last_error = "HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200);
      if (!retryable(res.status)) throw BackendError(last_error);
      if (auto it = res.headers.find("Retry-After"); it != res.headers.end()) {
        try {
          retry_after = std::chrono::milliseconds(static_cast<long>(std::stod(it->second) * 1000));
        } catch (const std::exception&) {
        }
      }
    }
    throw BackendError("retries exhausted: " + last_error);
  }

  static bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

 private:
  std::chrono::milliseconds delay_for(int attempt,
                                      std::optional<std::chrono::milliseconds> retry_after) const {
    if (retry_after) return std::min(*retry_after, std::chrono::milliseconds(60000));
    return std::chrono::milliseconds(static_cast<long>(cfg_.backoff_ms) << (attempt - 1));
  }

  HttpConfig cfg_;
  std::string key_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleep_;
};

inline std::string format_user_message(const InvocationRequest& req) {
  std::ostringstream os;
  os << "Query: " << req.query << "\n\n";
  if (req.context.empty()) {
    os << "Currently no cooperators available.\n";
  } else {
    os << "Messages from cooperating agents:\n";
    for (std::size_t i = 0; i < req.context.size(); ++i)
      os << "[" << (i + 1) << "] " << req.context[i] << "\n";
  }
  return os.str();
}

inline nlohmann::json chat_request_body(const std::string& model, const InvocationRequest& req) {
  return {{"model", model},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", req.system_prompt}},
                                  {{"role", "user"}, {"content", format_user_message(req)}}})},
          {"temperature", 0}};
}

inline InvocationResult parse_chat_response(const nlohmann::json& doc) {
  try {
    InvocationResult r;
    r.content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    const auto& usage = doc.at("usage");
    r.prompt_tokens = usage.at("prompt_tokens").get<std::int64_t>();
    r.completion_tokens = usage.at("completion_tokens").get<std::int64_t>();
    if (r.prompt_tokens < 0 || r.completion_tokens < 0)
      throw BackendError("malformed response: negative token usage");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed response: ") + e.what());
  }
}

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig cfg, std::shared_ptr<Transport> transport = nullptr,
                       Sleeper sleeper = nullptr)
      : poster_(std::move(cfg), std::move(transport), std::move(sleeper)) {}

  InvocationResult invoke(const InvocationRequest& req) override {
    const auto& cfg = poster_.config();
    return parse_chat_response(poster_.post_json(cfg.endpoint, chat_request_body(cfg.model, req)));
  }

 private:
  RetryingPoster poster_;
};

// Featurizer backed by an embeddings endpoint ({model, input} -> data[0].embedding).
class EmbeddingFeaturizer : public Featurizer {
 public:
  EmbeddingFeaturizer(HttpConfig cfg, std::size_t dim, std::vector<std::string> role_names,
                      std::shared_ptr<Transport> transport = nullptr, Sleeper sleeper = nullptr)
      : poster_(std::move(cfg), std::move(transport), std::move(sleeper)),
        dim_(dim),
        names_(std::move(role_names)) {}

  std::size_t dimension() const override { return dim_; }

  FeatureVector feat_state(const ConstructionState& s) const override {
    std::ostringstream os;
    os << "query: " << s.query << "\nagents:";
    for (const auto& n : s.graph.nodes()) os << " " << name(n.role) << ";";
    os << "\nmessages:";
    for (const auto& m : s.messages) os << "\n- " << m.content;
    return embed(os.str());
  }

  FeatureVector feat_edge(const ConstructionState& s, RoleId role, NodeId cand) const override {
    std::ostringstream os;
    os << "query: " << s.query << "\nnew agent: " << name(role)
       << "\ncandidate: " << name(s.graph.node(cand).role);
    if (s.executed(cand)) os << "\ncandidate message: " << s.messages[cand].content;
    return embed(os.str());
  }

 private:
  std::string name(RoleId r) const { return r < names_.size() ? names_[r] : std::to_string(r); }

  FeatureVector embed(const std::string& text) const {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(text); it != memo_.end()) return it->second;
    const auto& cfg = poster_.config();
    auto doc = poster_.post_json(cfg.endpoint, {{"model", cfg.model}, {"input", text}});
    FeatureVector v;
    try {
      v = doc.at("data").at(0).at("embedding").get<FeatureVector>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed embedding response: ") + e.what());
    }
    if (v.size() != dim_)
      throw BackendError("embedding dimension " + std::to_string(v.size()) + " != " + std::to_string(dim_));
    memo_.emplace(text, v);
    return v;
  }

  mutable std::mutex mu_;
  RetryingPoster poster_;
  std::size_t dim_;
  std::vector<std::string> names_;
  mutable std::unordered_map<std::string, FeatureVector> memo_;
};

}  // namespace mashost
