#include <gtest/gtest.h>

#include <deque>
#include <thread>

#include "httplib.h"
#include "mashost/http.hpp"

using namespace mashost;

namespace {

const char* kOkBody = R"({
  "id": "chatcmpl-1",
  "choices": [{"index": 0, "message": {"role": "assistant", "content": "Final answer: 42"}}],
  "usage": {"prompt_tokens": 57, "completion_tokens": 9, "total_tokens": 66}
})";

// Replays canned responses in order and records what was sent.
class FixtureTransport : public Transport {
 public:
  explicit FixtureTransport(std::deque<HttpResponse> replies) : replies_(std::move(replies)) {}

  HttpResponse post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, std::chrono::milliseconds) override {
    urls.push_back(url);
    bodies.push_back(nlohmann::json::parse(body));
    sent_headers = headers;
    if (replies_.empty()) throw TransportError("fixture exhausted");
    auto r = replies_.front();
    replies_.pop_front();
    if (r.status < 0) throw TransportError("connection refused");
    return r;
  }

  std::vector<std::string> urls;
  std::vector<nlohmann::json> bodies;
  std::vector<std::pair<std::string, std::string>> sent_headers;

 private:
  std::deque<HttpResponse> replies_;
};

HttpConfig test_config() {
  HttpConfig c;
  c.endpoint = "https://llm.test/v1/chat/completions";
  c.model = "test-model";
  c.api_key = "sk-test";
  c.max_retries = 2;
  c.backoff_ms = 100;
  return c;
}

InvocationRequest sample_request() { return {1, "You are a Geometry Specialist.", {"area is 6", "check"}, "Q?"}; }

}  // namespace

TEST(HttpBackend, ParsesCannedResponse) {
  auto t = std::make_shared<FixtureTransport>(std::deque<HttpResponse>{{200, kOkBody, {}}});
  HttpBackend be(test_config(), t, [](auto) { FAIL() << "no retry expected"; });
  auto r = be.invoke(sample_request());
  EXPECT_EQ(r.content, "Final answer: 42");
  EXPECT_EQ(r.prompt_tokens, 57);
  EXPECT_EQ(r.completion_tokens, 9);
  ASSERT_EQ(t->bodies.size(), 1u);
  const auto& body = t->bodies[0];
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["temperature"], 0);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][0]["content"], "You are a Geometry Specialist.");
  EXPECT_EQ(body["messages"][1]["content"],
            "Query: Q?\n\nMessages from cooperating agents:\n[1] area is 6\n[2] check\n");
  EXPECT_EQ(t->urls[0], "https://llm.test/v1/chat/completions");
  EXPECT_EQ(t->sent_headers[0], (std::pair<std::string, std::string>{"Authorization", "Bearer sk-test"}));
}

TEST(HttpBackend, RetriesOn429ThenSucceeds) {
  auto t = std::make_shared<FixtureTransport>(
      std::deque<HttpResponse>{{429, "slow down", {}}, {200, kOkBody, {}}});
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend be(test_config(), t, [&](auto d) { sleeps.push_back(d); });
  EXPECT_EQ(be.invoke(sample_request()).content, "Final answer: 42");
  EXPECT_EQ(t->bodies.size(), 2u);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100)}));
}

TEST(HttpBackend, BackoffDoublesAndHonorsRetryAfter) {
  auto t = std::make_shared<FixtureTransport>(std::deque<HttpResponse>{
      {503, "", {}}, {-1, "", {}}, {429, "", {{"Retry-After", "2"}}}, {200, kOkBody, {}}});
  auto cfg = test_config();
  cfg.max_retries = 3;
  std::vector<long> sleeps;
  HttpBackend be(cfg, t, [&](auto d) { sleeps.push_back(static_cast<long>(d.count())); });
  be.invoke(sample_request());
  EXPECT_EQ(sleeps, (std::vector<long>{100, 200, 2000}));
}

TEST(HttpBackend, RetriesExhausted) {
  auto t = std::make_shared<FixtureTransport>(
      std::deque<HttpResponse>{{500, "", {}}, {500, "", {}}, {500, "", {}}, {200, kOkBody, {}}});
  HttpBackend be(test_config(), t, [](auto) {});
  EXPECT_THROW(be.invoke(sample_request()), BackendError);
  EXPECT_EQ(t->bodies.size(), 3u);
}

TEST(HttpBackend, NonRetryableFailsImmediately) {
  auto t = std::make_shared<FixtureTransport>(std::deque<HttpResponse>{{401, "bad key", {}}, {200, kOkBody, {}}});
  HttpBackend be(test_config(), t, [](auto) {});
  EXPECT_THROW(be.invoke(sample_request()), BackendError);
  EXPECT_EQ(t->bodies.size(), 1u);
}

TEST(HttpBackend, MissingUsageIsBackendError) {
  const char* body = R"({"choices": [{"message": {"content": "hi"}}]})";
  auto t = std::make_shared<FixtureTransport>(std::deque<HttpResponse>{{200, body, {}}});
  HttpBackend be(test_config(), t, [](auto) {});
  EXPECT_THROW(be.invoke(sample_request()), BackendError);
}

TEST(HttpBackend, MalformedBodyIsBackendError) {
  auto t = std::make_shared<FixtureTransport>(std::deque<HttpResponse>{{200, "{not json", {}}});
  HttpBackend be(test_config(), t, [](auto) {});
  EXPECT_THROW(be.invoke(sample_request()), BackendError);
}

TEST(HttpBackend, NoCooperatorsMessage) {
  InvocationRequest req{0, "sys", {}, "Q"};
  EXPECT_EQ(format_user_message(req), "Query: Q\n\nCurrently no cooperators available.\n");
}

TEST(HttpConfig, MissingCredentialIsConfigError) {
  HttpConfig c;
  c.api_key_env = "MASHOST_TEST_SURELY_UNSET_KEY";
  EXPECT_THROW(HttpBackend(c, std::make_shared<FixtureTransport>(std::deque<HttpResponse>{})), ConfigError);
}

TEST(HttpConfig, KeyIsNeverSerialized) {
  nlohmann::json j = test_config();
  EXPECT_FALSE(j.dump().find("sk-test") != std::string::npos);
  EXPECT_EQ(j.get<HttpConfig>().endpoint, test_config().endpoint);
}

TEST(ParseUrl, SplitsPath) {
  auto u = parse_url("http://127.0.0.1:8080/v1/chat");
  EXPECT_EQ(u.scheme_host_port, "http://127.0.0.1:8080");
  EXPECT_EQ(u.path, "/v1/chat");
  EXPECT_EQ(parse_url("http://h").path, "/");
  EXPECT_THROW(parse_url("localhost/v1"), ConfigError);
}

TEST(EmbeddingFeaturizer, ParsesAndMemoizes) {
  auto t = std::make_shared<FixtureTransport>(
      std::deque<HttpResponse>{{200, R"({"data":[{"embedding":[0.5,-1.0,2.0]}]})", {}}});
  EmbeddingFeaturizer f(test_config(), 3, {"A"}, t, [](auto) {});
  ConstructionState s("q", MasGraph(1));
  EXPECT_EQ(f.feat_state(s), (FeatureVector{0.5, -1.0, 2.0}));
  EXPECT_EQ(f.feat_state(s), (FeatureVector{0.5, -1.0, 2.0}));
  EXPECT_EQ(t->bodies.size(), 1u);
  EXPECT_EQ(t->bodies[0]["model"], "test-model");
}

TEST(EmbeddingFeaturizer, WrongDimensionIsBackendError) {
  auto t = std::make_shared<FixtureTransport>(
      std::deque<HttpResponse>{{200, R"({"data":[{"embedding":[0.5]}]})", {}}});
  EmbeddingFeaturizer f(test_config(), 3, {"A"}, t, [](auto) {});
  EXPECT_THROW(f.feat_state(ConstructionState("q", MasGraph(1))), BackendError);
}

// End to end through the real transport against a loopback server.
TEST(HttplibTransport, LoopbackServer) {
  httplib::Server server;
  int hits = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits == 1) {
      res.status = 429;
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    const bool authorized = req.get_header_value("Authorization") == "Bearer sk-test";
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", authorized ? "ok" : "no"}}}}}},
                                   {"usage", {{"prompt_tokens", 3}, {"completion_tokens", body["messages"].size()}}}}
                        .dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto cfg = test_config();
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.timeout_ms = 5000;
  HttpBackend be(cfg, nullptr, [](auto) {});
  auto r = be.invoke(sample_request());
  server.stop();
  th.join();
  EXPECT_EQ(r.content, "ok");
  EXPECT_EQ(r.prompt_tokens, 3);
  EXPECT_EQ(r.completion_tokens, 2);
  EXPECT_EQ(hits, 2);
}

TEST(HttplibTransport, ConnectionRefusedIsBackendError) {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  probe.stop();
  auto cfg = test_config();
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.timeout_ms = 500;
  cfg.max_retries = 1;
  HttpBackend be(cfg, nullptr, [](auto) {});
  EXPECT_THROW(be.invoke(sample_request()), BackendError);
}
