#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace knowrl {

enum class BackendKind {
  Http,       // OpenAI-compatible chat-completions server
  Mock,       // replays a MockScript file
  Synthetic,  // built-in simulated policy for dry runs
};

enum class SamplingMode {
  Batched,  // one request with n = k
  Unary,    // k requests with n = 1
};

enum class ScoringMode {
  None,
  CompletionsEcho,  // POST /v1/completions with echo=true, logprobs=0
};

struct BackendConfig {
  BackendKind kind = BackendKind::Synthetic;
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "policy";
  SamplingMode sampling = SamplingMode::Batched;
  ScoringMode scoring = ScoringMode::None;
  int max_tokens = 1024;
  double timeout_s = 120.0;
  int max_attempts = 3;
  int backoff_initial_ms = 1000;
  int max_in_flight = 8;
  std::string mock_script;  // path, Mock only

  // Synthetic policy knobs. Agreement rates are percentages; the rate used
  // at policy iteration t is clamp(base + t * step, 0, 100).
  double synthetic_base_agreement = 40.0;
  double synthetic_agreement_step = 5.0;
  int synthetic_tasks_per_completion = 5;

  bool operator==(const BackendConfig&) const = default;
};

struct RunConfig {
  int k = 8;
  double temp_introspection = 1.0;
  double temp_analysis = 0.0;
  int introspection_runs_per_phase = 12;
  int candidate_target = 55;
  int total_iterations = 30;
  int eval_every = 5;
  double promotion_threshold = 7.0 / 8.0;
  double rouge_threshold = 0.7;
  double ppl_threshold = 100.0;
  std::vector<std::string> keyword_list = default_keywords();
  BackendConfig backend;
  std::uint64_t rng_seed = 0;

  int few_shot_count = 3;
  double promoted_weight = 1.0;
  int intrinsic_trials_per_class = 250;
  int extrinsic_per_class = 500;
  std::string extrinsic_dataset;  // empty => extrinsic protocol skipped
  std::string seed_path = "seeds.jsonl";
  std::string templates_dir = "templates";
  std::string trainer_hook;  // empty => batches are emitted, not trained

  static std::vector<std::string> default_keywords();

  bool operator==(const RunConfig&) const = default;
};

// Throws ConfigError naming the first offending key.
void validate(const RunConfig& cfg);

RunConfig parse_config_toml(std::string_view text);
std::string dump_config_toml(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

// KNOWRL_BACKEND_URL replaces backend.base_url when set.
void apply_env_overrides(RunConfig& cfg);

// Bearer token from KNOWRL_API_KEY, if any.
std::optional<std::string> api_key_from_env();

}  // namespace knowrl
