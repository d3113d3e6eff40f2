#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "refalign/http_transport.hpp"
#include "refalign/llm.hpp"

using namespace refalign;
using namespace std::chrono_literals;

namespace {

struct SleepRecorder {
  std::vector<std::chrono::milliseconds> calls;
  llm::SleepFn fn() {
    return [this](std::chrono::milliseconds d) { calls.push_back(d); };
  }
};

class EchoClient : public llm::LlmClient {
 public:
  std::string complete(const std::string& prompt) override {
    ++count;
    return "r:" + prompt;
  }
  std::atomic<int> count{0};
};

class FailingClient : public llm::LlmClient {
 public:
  explicit FailingClient(std::string needle) : needle_(std::move(needle)) {}
  std::string complete(const std::string& prompt) override {
    if (prompt.find(needle_) != std::string::npos) {
      throw llm::ApiError("refused " + prompt);
    }
    return "r:" + prompt;
  }

 private:
  std::string needle_;
};

llm::HttpOptions fast_options(SleepRecorder& rec) {
  llm::HttpOptions opt;
  opt.base_backoff = 1ms;
  opt.sleep = rec.fn();
  return opt;
}

std::string ok_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"content", content}}}}}}}.dump();
}

}  // namespace

TEST_CASE("with_retries") {
  SUBCASE("immediate success never sleeps") {
    SleepRecorder rec;
    int calls = 0;
    const int out = llm::with_retries([&] { ++calls; return 7; }, 3, 1000ms, rec.fn());
    CHECK(out == 7);
    CHECK(calls == 1);
    CHECK(rec.calls.empty());
  }
  SUBCASE("transient transport failures back off exponentially") {
    SleepRecorder rec;
    int calls = 0;
    const int out = llm::with_retries(
        [&]() -> int {
          if (++calls < 3) throw llm::TransportError("flaky");
          return 42;
        },
        3, 1000ms, rec.fn());
    CHECK(out == 42);
    CHECK(calls == 3);
    CHECK(rec.calls == std::vector<std::chrono::milliseconds>{1000ms, 2000ms});
  }
  SUBCASE("the retry budget is exhausted after max_retries extra attempts") {
    SleepRecorder rec;
    int calls = 0;
    CHECK_THROWS_AS(llm::with_retries([&]() -> int { ++calls; throw llm::TransportError("down"); },
                                      3, 1000ms, rec.fn()),
                    llm::TransportError);
    CHECK(calls == 4);
    CHECK(rec.calls == std::vector<std::chrono::milliseconds>{1000ms, 2000ms, 4000ms});
  }
  SUBCASE("zero retries fail on the first transport error") {
    SleepRecorder rec;
    CHECK_THROWS_AS(llm::with_retries([]() -> int { throw llm::TransportError("down"); }, 0, 1000ms,
                                      rec.fn()),
                    llm::TransportError);
    CHECK(rec.calls.empty());
  }
  SUBCASE("api errors pass through without retry") {
    SleepRecorder rec;
    int calls = 0;
    CHECK_THROWS_AS(llm::with_retries([&]() -> int { ++calls; throw llm::ApiError("bad"); }, 3,
                                      1000ms, rec.fn()),
                    llm::ApiError);
    CHECK(calls == 1);
    CHECK(rec.calls.empty());
  }
}

TEST_CASE("complete_all fans out and keeps prompt order") {
  EchoClient client;
  const std::vector<std::string> prompts{"a", "b", "c", "d", "e"};

  SUBCASE("serial") {
    CHECK(llm::complete_all(client, prompts, 1) ==
          std::vector<std::string>{"r:a", "r:b", "r:c", "r:d", "r:e"});
  }
  SUBCASE("threaded") {
    CHECK(llm::complete_all(client, prompts, 3) ==
          std::vector<std::string>{"r:a", "r:b", "r:c", "r:d", "r:e"});
    CHECK(client.count == 5);
  }
  SUBCASE("more workers than prompts") {
    CHECK(llm::complete_all(client, {"only"}, 8) == std::vector<std::string>{"r:only"});
  }
  SUBCASE("empty prompt list") {
    CHECK(llm::complete_all(client, {}, 4).empty());
  }
  SUBCASE("invalid concurrency") {
    CHECK_THROWS_AS(llm::complete_all(client, prompts, 0), std::invalid_argument);
  }
  SUBCASE("many prompts complete exactly once each") {
    std::vector<std::string> many;
    for (int i = 0; i < 64; ++i) many.push_back(std::to_string(i));
    const auto results = llm::complete_all(client, many, 8);
    REQUIRE(results.size() == many.size());
    for (std::size_t i = 0; i < many.size(); ++i) CHECK(results[i] == "r:" + many[i]);
    CHECK(client.count == 64);
  }
}

TEST_CASE("complete_all rethrows the first failure by prompt index") {
  FailingClient client("bad");
  try {
    llm::complete_all(client, {"ok-1", "bad-late", "ok-2", "bad-later"}, 4);
    FAIL("expected an ApiError");
  } catch (const llm::ApiError& e) {
    CHECK(std::string(e.what()) == "refused bad-late");
  }
}

TEST_CASE("endpoint URLs split into base and path") {
  const auto a = llm::detail::split_url("http://host:8080/v1/chat/completions");
  CHECK(a.base == "http://host:8080");
  CHECK(a.path == "/v1/chat/completions");
  const auto b = llm::detail::split_url("https://api.example.com");
  CHECK(b.base == "https://api.example.com");
  CHECK(b.path == "/");
  CHECK_THROWS_AS(llm::detail::split_url("api.example.com/v1"), std::invalid_argument);
}

TEST_CASE("http client builds the chat payload and parses replies") {
  ::unsetenv(llm::kApiKeyEnvVar);
  SleepRecorder rec;

  SUBCASE("success path captures the request") {
    std::string seen_path;
    std::string seen_body;
    const char* seen_bearer = reinterpret_cast<const char*>(0x1);
    llm::HttpLlmClient client(
        "http://example.test/v1/chat/completions", fast_options(rec),
        [&](const std::string& path, const std::string& body, const char* bearer) {
          seen_path = path;
          seen_body = body;
          seen_bearer = bearer;
          return std::pair<int, std::string>{200, ok_body("hello")};
        });
    CHECK(client.base_url() == "http://example.test");
    CHECK(client.request_path() == "/v1/chat/completions");
    CHECK(client.complete("describe the scene") == "hello");
    CHECK(seen_path == "/v1/chat/completions");
    CHECK(seen_bearer == nullptr);  // no key in the environment

    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "gpt-3.5-turbo");
    CHECK(body["temperature"] == 0);
    REQUIRE(body["messages"].is_array());
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "describe the scene");
  }

  SUBCASE("bearer comes from the configured environment variable") {
    ::setenv("REFALIGN_TEST_KEY", "sekrit", 1);
    auto opts = fast_options(rec);
    opts.api_key_env = "REFALIGN_TEST_KEY";
    std::string seen_bearer;
    llm::HttpLlmClient client("http://example.test/v1", std::move(opts),
                              [&](const std::string&, const std::string&, const char* bearer) {
                                seen_bearer = bearer ? bearer : "(null)";
                                return std::pair<int, std::string>{200, ok_body("x")};
                              });
    CHECK(client.complete("p") == "x");
    CHECK(seen_bearer == "sekrit");
    ::unsetenv("REFALIGN_TEST_KEY");
  }

  SUBCASE("non-2xx statuses raise ApiError without retrying") {
    int calls = 0;
    llm::HttpLlmClient client("http://example.test/v1", fast_options(rec),
                              [&](const std::string&, const std::string&, const char*) {
                                ++calls;
                                return std::pair<int, std::string>{500, "oops"};
                              });
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint returned HTTP 500", llm::ApiError);
    CHECK(calls == 1);
    CHECK(rec.calls.empty());
  }

  SUBCASE("transport errors are retried") {
    int calls = 0;
    llm::HttpLlmClient client("http://example.test/v1", fast_options(rec),
                              [&](const std::string&, const std::string&,
                                  const char*) -> std::pair<int, std::string> {
                                if (++calls < 3) throw llm::TransportError("refused");
                                return {200, ok_body("finally")};
                              });
    CHECK(client.complete("p") == "finally");
    CHECK(calls == 3);
    CHECK(rec.calls == std::vector<std::chrono::milliseconds>{1ms, 2ms});
  }

  SUBCASE("bad response bodies raise ApiError") {
    std::string body = "not json";
    llm::HttpLlmClient client("http://example.test/v1", fast_options(rec),
                              [&](const std::string&, const std::string&, const char*) {
                                return std::pair<int, std::string>{200, body};
                              });
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint returned a malformed JSON body",
                         llm::ApiError);
    body = "{}";
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint response has no choices", llm::ApiError);
    body = R"({"choices":[]})";
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint response has no choices", llm::ApiError);
    body = R"({"choices":[{"message":{}}]})";
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint response has no message content",
                         llm::ApiError);
    body = ok_body("");
    CHECK_THROWS_WITH_AS(client.complete("p"), "endpoint returned an empty completion",
                         llm::ApiError);
  }

  SUBCASE("a transport is required") {
    CHECK_THROWS_AS(llm::HttpLlmClient("http://example.test/v1", fast_options(rec), nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("http client round trip against a local server") {
  httplib::Server server;
  std::string seen_auth;
  nlohmann::json seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    const std::string prompt = seen_body["messages"][0]["content"].get<std::string>();
    res.set_content(ok_body("echo: " + prompt), "application/json");
  });
  server.Post("/v1/teapot", [](const httplib::Request&, httplib::Response& res) {
    res.status = 418;
    res.set_content("short and stout", "text/plain");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv(llm::kApiKeyEnvVar, "sekrit", 1);
  const std::string host = "http://127.0.0.1:" + std::to_string(port);

  {
    auto client = llm::make_http_client(host + "/v1/chat/completions");
    CHECK(client->complete("hello server") == "echo: hello server");
    CHECK(seen_auth == "Bearer sekrit");
    CHECK(seen_body["temperature"] == 0);
    CHECK(seen_body["model"] == "gpt-3.5-turbo");
  }
  {
    auto client = llm::make_http_client(host + "/v1/teapot");
    CHECK_THROWS_WITH_AS(client->complete("brew"), "endpoint returned HTTP 418", llm::ApiError);
  }

  server.stop();
  server_thread.join();
  ::unsetenv(llm::kApiKeyEnvVar);

  // connection refused surfaces as a retryable transport error
  SleepRecorder rec;
  auto opts = llm::HttpOptions{};
  opts.max_retries = 1;
  opts.base_backoff = 1ms;
  opts.sleep = rec.fn();
  opts.timeout_seconds = 2;
  auto dead = llm::make_http_client(host + "/v1/chat/completions", std::move(opts));
  CHECK_THROWS_AS(dead->complete("anyone there"), llm::TransportError);
  CHECK(rec.calls.size() == 1);
}
