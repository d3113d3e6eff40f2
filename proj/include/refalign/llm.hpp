#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "refalign/errors.hpp"

namespace refalign::llm {

// Connection-level failure; eligible for retry.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The endpoint answered but unusably (non-2xx, bad body, empty text).
struct ApiError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

inline void default_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

// Runs fn, retrying TransportError up to max_retries extra attempts with
// exponential backoff (base, 2*base, 4*base, ...). Other exceptions pass
// straight through.
template <typename Fn>
auto with_retries(Fn&& fn, int max_retries = 3,
                  std::chrono::milliseconds base = std::chrono::milliseconds(1000),
                  const SleepFn& sleep = default_sleep) -> decltype(fn()) {
  std::chrono::milliseconds backoff = base;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= max_retries) throw;
      sleep(backoff);
      backoff *= 2;
    }
  }
}

// Fans prompts out over at most `concurrency` worker threads. Results come
// back in prompt order; the first failing prompt's exception is rethrown.
inline std::vector<std::string> complete_all(LlmClient& client,
                                             const std::vector<std::string>& prompts,
                                             int concurrency = 4) {
  if (concurrency < 1) throw std::invalid_argument("complete_all: concurrency must be positive");
  std::vector<std::string> results(prompts.size());
  std::vector<std::exception_ptr> failures(prompts.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= prompts.size()) return;
      try {
        results[i] = client.complete(prompts[i]);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };

  const std::size_t nthreads =
      std::min<std::size_t>(static_cast<std::size_t>(concurrency), prompts.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return results;
}

inline constexpr const char* kApiKeyEnvVar = "REFALIGN_API_KEY";

struct HttpOptions {
  std::string model = "gpt-3.5-turbo";
  int max_retries = 3;
  std::chrono::milliseconds base_backoff{1000};
  int timeout_seconds = 120;
  SleepFn sleep = default_sleep;
  const char* api_key_env = kApiKeyEnvVar;  // credential comes from the environment only
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // begins with '/'
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("endpoint URL must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Chat-completion style HTTP client: POST {model, temperature:0,
// messages:[{role:"user", content:prompt}]}; bearer credential is taken
// from the environment, never from configuration files. The transport is
// injected (see http_transport.hpp for the production one).
class HttpLlmClient : public LlmClient {
 public:
  // post(path, body_json, bearer-or-null) -> (status, body); throws
  // TransportError when the connection itself fails.
  using PostFn = std::function<std::pair<int, std::string>(
      const std::string& path, const std::string& body, const char* bearer)>;

  HttpLlmClient(const std::string& endpoint, HttpOptions options, PostFn post)
      : url_(detail::split_url(endpoint)), options_(std::move(options)), post_(std::move(post)) {
    if (!post_) throw std::invalid_argument("HttpLlmClient: no transport provided");
    if (const char* key = std::getenv(options_.api_key_env)) api_key_ = key;
  }

  const std::string& base_url() const { return url_.base; }
  const std::string& request_path() const { return url_.path; }

  std::string complete(const std::string& prompt) override {
    const nlohmann::json body{
        {"model", options_.model},
        {"temperature", 0},
        {"messages", {{{"role", "user"}, {"content", prompt}}}},
    };
    const std::string payload = body.dump();
    const auto [status, text] = with_retries(
        [&] { return post_(url_.path, payload, api_key_.empty() ? nullptr : api_key_.c_str()); },
        options_.max_retries, options_.base_backoff, options_.sleep);
    if (status < 200 || status >= 300) {
      throw ApiError("endpoint returned HTTP " + std::to_string(status));
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw ApiError("endpoint returned a malformed JSON body");
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
      throw ApiError("endpoint response has no choices");
    }
    const auto& msg = doc["choices"][0];
    if (!msg.contains("message") || !msg["message"].contains("content") ||
        !msg["message"]["content"].is_string()) {
      throw ApiError("endpoint response has no message content");
    }
    const std::string out = msg["message"]["content"].get<std::string>();
    if (out.empty()) throw ApiError("endpoint returned an empty completion");
    return out;
  }

 private:
  detail::SplitUrl url_;
  HttpOptions options_;
  std::string api_key_;
  PostFn post_;
};

}  // namespace refalign::llm
