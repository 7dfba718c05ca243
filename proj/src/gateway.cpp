#include <openssl/evp.h>

#include <cstdio>
#include <memory>

#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"

namespace knowrl {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    case Role::Assistant:
      return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view text) {
  if (text == "system") return Role::System;
  if (text == "user") return Role::User;
  if (text == "assistant") return Role::Assistant;
  throw ContractViolation("unknown chat role '" + std::string(text) + "'");
}

void validate(const ChatRequest& req) {
  if (req.messages.empty()) throw ContractViolation("chat request has no messages");
  if (req.messages.front().role == Role::Assistant) {
    throw ContractViolation("chat request must start with a system or user message");
  }
  if (!(req.temperature >= 0)) throw ContractViolation("chat request temperature must be >= 0");
  if (req.n < 1) throw ContractViolation("chat request n must be >= 1");
  if (req.max_tokens < 1) throw ContractViolation("chat request max_tokens must be >= 1");
}

std::string fingerprint(std::span<const ChatMessage> messages) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("fingerprint: SHA-256 unavailable");
  }
  for (const auto& m : messages) {
    const auto role = to_string(m.role);
    EVP_DigestUpdate(ctx.get(), role.data(), role.size());
    EVP_DigestUpdate(ctx.get(), "\n", 1);
    EVP_DigestUpdate(ctx.get(), m.content.data(), m.content.size());
    EVP_DigestUpdate(ctx.get(), "\n", 1);
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

class BoundedBackend::Slot {
 public:
  explicit Slot(BoundedBackend& owner) : owner_(owner) {
    owner_.slots_.acquire();
    const int now = ++owner_.in_flight_;
    int peak = owner_.peak_.load();
    while (now > peak && !owner_.peak_.compare_exchange_weak(peak, now)) {
    }
  }
  ~Slot() {
    --owner_.in_flight_;
    owner_.slots_.release();
  }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  BoundedBackend& owner_;
};

BoundedBackend::BoundedBackend(std::shared_ptr<Backend> inner, int max_in_flight)
    : inner_(std::move(inner)), slots_(max_in_flight < 1 ? 1 : max_in_flight) {
  if (!inner_) throw ContractViolation("BoundedBackend: null backend");
  if (max_in_flight < 1) throw ContractViolation("BoundedBackend: max_in_flight must be >= 1");
}

ChatResponse BoundedBackend::complete(const ChatRequest& req) {
  Slot slot(*this);
  return inner_->complete(req);
}

std::vector<double> BoundedBackend::score_logprobs(std::string_view text) {
  Slot slot(*this);
  return inner_->score_logprobs(text);
}

std::shared_ptr<Backend> make_backend(const RunConfig& cfg) {
  std::shared_ptr<Backend> inner;
  switch (cfg.backend.kind) {
    case BackendKind::Http:
      inner = std::make_shared<HttpBackend>(cfg.backend, api_key_from_env());
      break;
    case BackendKind::Mock:
      inner = std::make_shared<MockBackend>(MockScript::load(cfg.backend.mock_script));
      break;
    case BackendKind::Synthetic: {
      SyntheticPolicy::Options opts;
      opts.base_agreement = cfg.backend.synthetic_base_agreement;
      opts.agreement_step = cfg.backend.synthetic_agreement_step;
      opts.tasks_per_completion = cfg.backend.synthetic_tasks_per_completion;
      opts.trials_per_class = cfg.intrinsic_trials_per_class;
      opts.seed = cfg.rng_seed;
      inner = std::make_shared<SyntheticPolicy>(opts);
      break;
    }
  }
  return std::make_shared<BoundedBackend>(std::move(inner), cfg.backend.max_in_flight);
}

}  // namespace knowrl
