#pragma once

#include <memory>
#include <string>
#include <utility>

#include <httplib.h>

// glibc's <resolv.h>, dragged in by httplib, leaks an object-like `_res`
// macro that corrupts identifiers in unrelated headers (Eigen among them).
#ifdef _res
#undef _res
#endif

#include "refalign/llm.hpp"

namespace refalign::llm {

// Production transport backed by cpp-httplib. Connection failures become
// TransportError (retryable); any HTTP status is passed through.
inline HttpLlmClient::PostFn httplib_transport(const std::string& base_url, int timeout_seconds) {
  return [base_url, timeout_seconds](const std::string& path, const std::string& body,
                                     const char* bearer) -> std::pair<int, std::string> {
    httplib::Client cli(base_url);
    cli.set_connection_timeout(timeout_seconds, 0);
    cli.set_read_timeout(timeout_seconds, 0);
    cli.set_write_timeout(timeout_seconds, 0);
    httplib::Headers headers;
    if (bearer != nullptr) headers.emplace("Authorization", std::string("Bearer ") + bearer);
    const httplib::Result res = cli.Post(path, headers, body, "application/json");
    if (!res) {
      throw TransportError("POST " + base_url + path + " failed: " + httplib::to_string(res.error()));
    }
    return {res->status, res->body};
  };
}

inline std::unique_ptr<HttpLlmClient> make_http_client(const std::string& endpoint,
                                                       HttpOptions options = {}) {
  const auto url = detail::split_url(endpoint);
  const int timeout = options.timeout_seconds;
  return std::make_unique<HttpLlmClient>(endpoint, std::move(options),
                                         httplib_transport(url.base, timeout));
}

}  // namespace refalign::llm
