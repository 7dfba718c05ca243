#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "knowrl/config.hpp"

namespace knowrl {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// Routing metadata. Never sent over the wire; deterministic backends use it
// to vary otherwise identical requests and logs use it to label calls.
struct RequestTrace {
  std::string purpose;
  std::uint64_t ordinal = 0;
  std::uint64_t seed = 0;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int n = 1;
  int max_tokens = 1024;
  bool want_logprobs = false;
  RequestTrace trace;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::vector<std::string> completions;
  std::optional<std::vector<std::vector<double>>> token_logprobs;
  Usage usage;
  std::string backend_id;
  int attempts = 1;
};

// Throws ContractViolation unless messages is non-empty, starts with a
// system or user message, temperature >= 0, n >= 1 and max_tokens >= 1.
void validate(const ChatRequest& req);

// Lowercase hex SHA-256 over the concatenation of "role\ncontent\n" for each
// message.
std::string fingerprint(std::span<const ChatMessage> messages);

class Backend {
 public:
  virtual ~Backend() = default;

  // Exactly req.n completions, or throws a GatewayError.
  virtual ChatResponse complete(const ChatRequest& req) = 0;

  // One logprob per backend token of `text`. Throws UnsupportedCapability
  // when can_score() is false.
  virtual std::vector<double> score_logprobs(std::string_view text) = 0;
  virtual bool can_score() const = 0;

  virtual std::string id() const = 0;

  // Tells the backend which policy checkpoint is now being served. A no-op
  // for remote servers whose reload is driven by the trainer hook.
  virtual void set_policy_iteration(int /*iteration*/) {}
};

// Caps the number of concurrent calls into the wrapped backend.
class BoundedBackend final : public Backend {
 public:
  BoundedBackend(std::shared_ptr<Backend> inner, int max_in_flight);

  ChatResponse complete(const ChatRequest& req) override;
  std::vector<double> score_logprobs(std::string_view text) override;
  bool can_score() const override { return inner_->can_score(); }
  std::string id() const override { return inner_->id(); }
  void set_policy_iteration(int iteration) override { inner_->set_policy_iteration(iteration); }

  int peak_in_flight() const noexcept { return peak_.load(); }

 private:
  class Slot;

  std::shared_ptr<Backend> inner_;
  std::counting_semaphore<> slots_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
};

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_initial_ms = 1000;  // doubles after every failed attempt
};

class HttpBackend final : public Backend {
 public:
  // base_url: scheme://host[:port][/prefix]; requests go to
  // <base_url>/v1/chat/completions.
  HttpBackend(BackendConfig cfg, std::optional<std::string> api_key);
  ~HttpBackend() override;

  ChatResponse complete(const ChatRequest& req) override;
  std::vector<double> score_logprobs(std::string_view text) override;
  bool can_score() const override { return cfg_.scoring != ScoringMode::None; }
  std::string id() const override;

  // Exposed for tests; builds the JSON body sent for one request.
  std::string build_body(const ChatRequest& req, int n) const;

 private:
  struct HttpResult {
    int status = 0;
    std::string body;
    int attempts = 0;
  };

  HttpResult post_with_retry(const std::string& path, const std::string& body, std::string_view what) const;
  ChatResponse complete_once(const ChatRequest& req, int n) const;

  BackendConfig cfg_;
  std::optional<std::string> api_key_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  RetryPolicy retry_;
};

// Replayable scripted completions.
//
// File format (JSON):
//   {
//     "default": {"behavior": "echo" | "fail" | "round_robin",
//                 "completions": [...]},          // round_robin only
//     "constant_logprob": -1.0,                   // optional, enables scoring
//     "scores": {"<text>": [lp, ...]},            // optional exact scores
//     "entries": {"<fingerprint>": ["text" | {"text": "...", "logprobs": [...]}]}
//   }
//
// Sample i of a request whose messages hash to a scripted fingerprint is
// entries[fp][i mod len]. Unscripted requests fall back to `default`:
// echo returns the last message content, fail throws TransportError,
// round_robin returns completions[(trace.seed + i) mod len]. Responses are a
// pure function of (script, request), so replays are byte-identical.
struct MockCompletion {
  std::string text;
  std::optional<std::vector<double>> logprobs;

  bool operator==(const MockCompletion&) const = default;
};

struct MockScript {
  enum class Default { Echo, Fail, RoundRobin };

  std::map<std::string, std::vector<MockCompletion>> entries;
  Default default_behavior = Default::Echo;
  std::vector<std::string> round_robin;
  std::optional<double> constant_logprob;
  std::map<std::string, std::vector<double>> scores;

  static MockScript parse(std::string_view json_text);
  static MockScript load(const std::filesystem::path& path);
  std::string dump() const;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script);

  ChatResponse complete(const ChatRequest& req) override;
  std::vector<double> score_logprobs(std::string_view text) override;
  bool can_score() const override;
  std::string id() const override { return "mock"; }

  const MockScript& script() const noexcept { return script_; }

 private:
  MockScript script_;
};

// Deterministic stand-in for a policy model, used for dry runs and the
// acceptance suite. It recognises the request purpose from the trace:
//
//   introspect.<class>   numbered list of synthetic tasks of that class
//   analysis             k verdicts; each agrees with the task's true class
//                        with the current agreement rate
//   intrinsic.validate   one verdict; exactly floor(rate·2T) of the 2T
//                        ordinals agree (Bresenham spread over trace.ordinal)
//   extrinsic            answerable/unanswerable guess
//   seed.validate.<class>  a canned attempt or explanation
//
// The agreement rate at policy iteration t is
// clamp(base + t·step, 0, 100) percent. Scoring returns one logprob per
// whitespace token; the tokens zxqv, qqzx and vzzq score as gibberish.
class SyntheticPolicy final : public Backend {
 public:
  struct Options {
    double base_agreement = 40.0;
    double agreement_step = 5.0;
    int tasks_per_completion = 5;
    int trials_per_class = 250;  // T; the spread covers both classes
    std::uint64_t seed = 0;
  };

  explicit SyntheticPolicy(Options opts);

  ChatResponse complete(const ChatRequest& req) override;
  std::vector<double> score_logprobs(std::string_view text) override;
  bool can_score() const override { return true; }
  std::string id() const override { return "synthetic"; }
  void set_policy_iteration(int iteration) override { policy_iteration_.store(iteration); }

  double agreement_rate(int policy_iteration) const;

  // Ground truth the simulator assigns to a task text it generated.
  static std::optional<bool> synthetic_task_is_feasible(std::string_view task_text);

 private:
  std::string introspect(bool feasible, const ChatRequest& req, int sample) const;
  std::string analyse(const ChatRequest& req, int sample, int policy_iteration) const;

  Options opts_;
  std::atomic<int> policy_iteration_{0};
};

// Builds the backend named by cfg (wrapped in a BoundedBackend).
std::shared_ptr<Backend> make_backend(const RunConfig& cfg);

}  // namespace knowrl
