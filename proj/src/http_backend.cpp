#include <httplib.h>

#include <chrono>
#include <cmath>
#include <regex>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"

namespace knowrl {
namespace {

using json = nlohmann::ordered_json;

std::string excerpt(std::string_view body) {
  constexpr std::size_t kMax = 240;
  if (body.size() <= kMax) return std::string(body);
  return std::string(body.substr(0, kMax)) + "...";
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error&) {
    throw ProtocolError("response is not valid JSON", excerpt(body));
  }
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig cfg, std::optional<std::string> api_key)
    : cfg_(std::move(cfg)), api_key_(std::move(api_key)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(cfg_.base_url, m, kUrl)) {
    throw ConfigError("backend.base_url: expected http(s)://host[:port][/prefix], got '" + cfg_.base_url + "'");
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  retry_.max_attempts = cfg_.max_attempts;
  retry_.backoff_initial_ms = cfg_.backoff_initial_ms;
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const { return "http:" + cfg_.base_url + "#" + cfg_.model; }

std::string HttpBackend::build_body(const ChatRequest& req, int n) const {
  json messages = json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body = {
      {"model", cfg_.model},
      {"messages", std::move(messages)},
      {"temperature", req.temperature},
      {"n", n},
      {"max_tokens", req.max_tokens},
      {"logprobs", req.want_logprobs},
  };
  return body.dump();
}

HttpBackend::HttpResult HttpBackend::post_with_retry(const std::string& path, const std::string& body,
                                                     std::string_view what) const {
  std::vector<std::string> log;
  const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  const auto secs = static_cast<time_t>(std::floor(timeout.count()));
  const auto usecs = static_cast<time_t>((timeout.count() - static_cast<double>(secs)) * 1e6);

  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);

    auto res = cli.Post(path, headers, body, "application/json");
    bool retryable = true;
    if (!res) {
      log.push_back("attempt " + std::to_string(attempt) + ": transport error: " + httplib::to_string(res.error()));
    } else if (res->status >= 200 && res->status < 300) {
      if (attempt > 1) spdlog::info("{} {} succeeded after {} attempts", what, path, attempt);
      return HttpResult{res->status, res->body, attempt};
    } else {
      log.push_back("attempt " + std::to_string(attempt) + ": HTTP " + std::to_string(res->status) + ": " +
                    excerpt(res->body));
      retryable = res->status >= 500;
    }
    spdlog::warn("{} {}: {}", what, path, log.back());
    if (!retryable) break;
    if (attempt < retry_.max_attempts && retry_.backoff_initial_ms > 0) {
      const long long delay = static_cast<long long>(retry_.backoff_initial_ms) << (attempt - 1);
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
  }
  throw TransportError(std::string(what) + " " + scheme_host_port_ + path + " failed after " +
                           std::to_string(log.size()) + " attempt(s)",
                       std::move(log));
}

ChatResponse HttpBackend::complete_once(const ChatRequest& req, int n) const {
  const HttpResult result = post_with_retry(path_prefix_ + "/v1/chat/completions", build_body(req, n), "chat");
  const json doc = parse_body(result.body);

  ChatResponse out;
  out.backend_id = id();
  out.attempts = result.attempts;
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array()) {
    throw ProtocolError("response has no choices array", excerpt(result.body));
  }
  std::vector<std::vector<double>> logprobs;
  bool have_logprobs = req.want_logprobs;
  for (const auto& choice : doc["choices"]) {
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
      throw ProtocolError("choice without message", excerpt(result.body));
    }
    const auto& content = choice["message"].value("content", json());
    if (content.is_null()) {
      out.completions.emplace_back();
    } else if (content.is_string()) {
      out.completions.push_back(content.get<std::string>());
    } else {
      throw ProtocolError("message content is not a string", excerpt(result.body));
    }

    if (have_logprobs) {
      const json* lp = choice.contains("logprobs") ? &choice["logprobs"] : nullptr;
      if (!lp || !lp->is_object() || !lp->contains("content") || !(*lp)["content"].is_array()) {
        have_logprobs = false;
        continue;
      }
      std::vector<double> row;
      for (const auto& tok : (*lp)["content"]) {
        if (!tok.is_object() || !tok.contains("logprob") || !tok["logprob"].is_number()) {
          throw ProtocolError("malformed logprobs entry", excerpt(result.body));
        }
        row.push_back(tok["logprob"].get<double>());
      }
      logprobs.push_back(std::move(row));
    }
  }
  if (have_logprobs) out.token_logprobs = std::move(logprobs);
  if (doc.contains("usage") && doc["usage"].is_object()) {
    out.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
    out.usage.completion_tokens = doc["usage"].value("completion_tokens", 0);
  }
  return out;
}

ChatResponse HttpBackend::complete(const ChatRequest& req) {
  validate(req);
  ChatResponse out;
  out.backend_id = id();
  out.attempts = 0;
  bool logprobs_ok = req.want_logprobs;
  std::vector<std::vector<double>> logprobs;

  auto absorb = [&](ChatResponse part) {
    out.attempts += part.attempts;
    out.usage.prompt_tokens += part.usage.prompt_tokens;
    out.usage.completion_tokens += part.usage.completion_tokens;
    const std::size_t want = static_cast<std::size_t>(req.n) - out.completions.size();
    const std::size_t take = std::min(want, part.completions.size());
    for (std::size_t i = 0; i < take; ++i) out.completions.push_back(std::move(part.completions[i]));
    if (logprobs_ok && part.token_logprobs) {
      for (std::size_t i = 0; i < take; ++i) logprobs.push_back(std::move((*part.token_logprobs)[i]));
    } else {
      logprobs_ok = false;
    }
  };

  if (cfg_.sampling == SamplingMode::Batched && req.n > 1) absorb(complete_once(req, req.n));
  // Unary mode, or a server that honoured n only partially.
  int empty_rounds = 0;
  while (out.completions.size() < static_cast<std::size_t>(req.n)) {
    const std::size_t before = out.completions.size();
    absorb(complete_once(req, 1));
    if (out.completions.size() == before && ++empty_rounds >= retry_.max_attempts) {
      throw ProtocolError("server returned no choices", "choices: []");
    }
  }
  if (logprobs_ok) out.token_logprobs = std::move(logprobs);
  return out;
}

std::vector<double> HttpBackend::score_logprobs(std::string_view text) {
  if (cfg_.scoring == ScoringMode::None) {
    throw UnsupportedCapability("backend " + id() + " has no logprob scoring configured");
  }
  if (text.empty()) return {};

  const json body = {
      {"model", cfg_.model}, {"prompt", std::string(text)}, {"max_tokens", 1},
      {"echo", true},        {"logprobs", 0},               {"temperature", 0.0},
  };
  const HttpResult result = post_with_retry(path_prefix_ + "/v1/completions", body.dump(), "score");
  const json doc = parse_body(result.body);
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw ProtocolError("score response has no choices", excerpt(result.body));
  }
  const json& choice = doc["choices"][0];
  if (!choice.contains("logprobs") || !choice["logprobs"].is_object() ||
      !choice["logprobs"].contains("token_logprobs") || !choice["logprobs"]["token_logprobs"].is_array()) {
    throw ProtocolError("score response has no token_logprobs", excerpt(result.body));
  }
  const json& lps = choice["logprobs"]["token_logprobs"];
  const json* offsets = nullptr;
  if (choice["logprobs"].contains("text_offset") && choice["logprobs"]["text_offset"].is_array()) {
    offsets = &choice["logprobs"]["text_offset"];
  }

  std::vector<double> out;
  for (std::size_t i = 0; i < lps.size(); ++i) {
    // Offsets past the prompt belong to the generated token.
    if (offsets && i < offsets->size() && (*offsets)[i].is_number_integer() &&
        (*offsets)[i].get<long long>() >= static_cast<long long>(text.size())) {
      break;
    }
    if (lps[i].is_null()) continue;  // first token has no context
    if (!lps[i].is_number()) throw ProtocolError("non-numeric token logprob", excerpt(result.body));
    out.push_back(lps[i].get<double>());
  }
  return out;
}

}  // namespace knowrl
