#pragma once

// Live transport for completion/chat style HTTP(S) endpoints.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include "llm_gateway.hpp"

namespace llmmaps {

struct HttpRetryPolicy {
  int attempts = 3;
  double initial_backoff_s = 0.5;  // doubles after each transient failure
};

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(HttpRetryPolicy retry = {}) : retry_(retry) {}

  Completion send(const ModelProfile& profile, const std::string& prompt) override {
    const auto& ep = profile.endpoint;
    if (ep.url.empty()) throw GatewayError("model '" + profile.model_id + "': no endpoint url");
    auto [base, path] = split_url(ep.url);

    json body = {{"model", ep.remote_model.empty() ? profile.model_id : ep.remote_model},
                 {"max_tokens", profile.max_response_tokens}};
    if (ep.style == "chat") {
      body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    } else {
      body["prompt"] = prompt;
    }

    httplib::Headers headers;
    if (!ep.api_key_env.empty()) {
      const char* key = std::getenv(ep.api_key_env.c_str());
      if (!key || !*key)
        throw GatewayError("model '" + profile.model_id + "': environment variable " +
                           ep.api_key_env + " is not set");
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    double backoff = retry_.initial_backoff_s;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
      httplib::Client client(base);
      client.set_connection_timeout(10);
      client.set_read_timeout(120);
      auto res = client.Post(path, headers, body.dump(), "application/json");
      if (res && res->status == 200) return {parse_body(profile, res->body), std::nullopt};
      bool transient = !res || res->status == 429 || res->status >= 500;
      last_error = res ? "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200)
                       : "transport error: " + httplib::to_string(res.error());
      if (!transient) break;
      if (attempt < retry_.attempts && backoff > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2;
      }
    }
    throw GatewayError("model '" + profile.model_id + "': " + last_error);
  }

  // "https://host:port/v1/completions" -> {"https://host:port", "/v1/completions"}
  static std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw GatewayError("endpoint url without scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
  }

 private:
  static std::string parse_body(const ModelProfile& profile, const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error&) {
      throw GatewayError("model '" + profile.model_id + "': response is not JSON");
    }
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty())
      throw GatewayError("model '" + profile.model_id + "': response has no choices");
    const auto& c = choices->front();
    if (auto t = c.find("text"); t != c.end() && t->is_string()) return t->get<std::string>();
    if (auto m = c.find("message"); m != c.end() && m->is_object()) {
      if (auto t = m->find("content"); t != m->end() && t->is_string()) return t->get<std::string>();
    }
    throw GatewayError("model '" + profile.model_id + "': choice carries no text");
  }

  HttpRetryPolicy retry_;
};

}  // namespace llmmaps
