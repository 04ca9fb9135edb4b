#pragma once

// Shared JSON-over-HTTP plumbing for the chat, embedding, and judge
// backends: bearer auth from the environment, bounded retries with
// exponential backoff.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "scape/common.hpp"

namespace scape {

struct HttpConfig {
  std::string url;               // full endpoint, e.g. http://host:port/v1/chat
  std::string model = "default";
  std::string api_key;           // empty -> read SCAPE_API_KEY
  int max_attempts = 3;
  int base_delay_ms = 250;       // doubled after each failed attempt
};

inline std::string api_key_from_env() {
  const char* v = std::getenv("SCAPE_API_KEY");
  return v ? std::string(v) : std::string();
}

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /rest, at least "/"
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// POST a JSON body and parse a JSON reply. Connection failures, HTTP 429
// and HTTP 5xx are retried up to cfg.max_attempts with exponential backoff;
// other statuses fail immediately.
inline nlohmann::json post_json_retry(const HttpConfig& cfg, const nlohmann::json& body) {
  const auto split = detail::split_url(cfg.url);
  const std::string key = cfg.api_key.empty() ? api_key_from_env() : cfg.api_key;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    httplib::Client client(split.base);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    httplib::Headers headers;
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

    auto res = client.Post(split.path, headers, payload, "application/json");
    if (res) {
      if (res->status >= 200 && res->status < 300) {
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded())
          throw BackendError("backend returned invalid JSON from " + cfg.url);
        return reply;
      }
      if (res->status != 429 && res->status < 500)
        throw BackendError("backend request failed with status " +
                           std::to_string(res->status) + ": " + cfg.url);
      last_error = "status " + std::to_string(res->status);
    } else {
      last_error = "connection error (" + httplib::to_string(res.error()) + ")";
    }
    if (attempt < cfg.max_attempts) {
      const int delay = cfg.base_delay_ms << (attempt - 1);
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
  }
  throw BackendError("backend unreachable after " + std::to_string(cfg.max_attempts) +
                     " attempts (" + last_error + "): " + cfg.url);
}

}  // namespace scape
