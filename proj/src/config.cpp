#include "knowrl/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "knowrl/error.hpp"

namespace knowrl {
namespace {

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Http:
      return "http";
    case BackendKind::Mock:
      return "mock";
    case BackendKind::Synthetic:
      return "synthetic";
  }
  return "synthetic";
}

BackendKind parse_backend_kind(std::string_view s) {
  if (s == "http") return BackendKind::Http;
  if (s == "mock") return BackendKind::Mock;
  if (s == "synthetic") return BackendKind::Synthetic;
  throw ConfigError("backend.kind: expected http|mock|synthetic, got '" + std::string(s) + "'");
}

std::string_view to_string(SamplingMode m) { return m == SamplingMode::Batched ? "batched" : "unary"; }

SamplingMode parse_sampling(std::string_view s) {
  if (s == "batched") return SamplingMode::Batched;
  if (s == "unary") return SamplingMode::Unary;
  throw ConfigError("backend.sampling: expected batched|unary, got '" + std::string(s) + "'");
}

std::string_view to_string(ScoringMode m) { return m == ScoringMode::None ? "none" : "completions_echo"; }

ScoringMode parse_scoring(std::string_view s) {
  if (s == "none") return ScoringMode::None;
  if (s == "completions_echo") return ScoringMode::CompletionsEcho;
  throw ConfigError("backend.scoring: expected none|completions_echo, got '" + std::string(s) + "'");
}

template <typename T>
void read(const toml::table& tbl, std::string_view key, T& out) {
  const toml::node* node = tbl.get(key);
  if (!node) return;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) {
      out = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (auto v = node->value<std::int64_t>()) {
      if (*v < 0) throw ConfigError(std::string(key) + ": must be non-negative");
      out = static_cast<std::uint64_t>(*v);
      return;
    }
  } else if constexpr (std::is_integral_v<T>) {
    if (auto v = node->value<std::int64_t>()) {
      out = static_cast<T>(*v);
      return;
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) {
      out = *v;
      return;
    }
  }
  throw ConfigError(std::string(key) + ": wrong type");
}

// Shortest text that parses back to the same double.
std::string exact_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// JSON string escapes are a subset of TOML basic-string escapes.
std::string quoted(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

void require(bool ok, std::string_view key, std::string_view what) {
  if (!ok) throw ConfigError(std::string(key) + ": " + std::string(what));
}

}  // namespace

std::vector<std::string> RunConfig::default_keywords() {
  return {"image", "video", "generating images", "training models", "audio", "draw"};
}

void validate(const RunConfig& c) {
  require(c.k >= 2, "k", "must be >= 2");
  require(std::isfinite(c.temp_introspection) && c.temp_introspection >= 0, "temp_introspection", "must be >= 0");
  require(std::isfinite(c.temp_analysis) && c.temp_analysis >= 0, "temp_analysis", "must be >= 0");
  require(c.introspection_runs_per_phase >= 1, "introspection_runs_per_phase", "must be >= 1");
  require(c.candidate_target >= 1, "candidate_target", "must be >= 1");
  require(c.total_iterations >= 0, "total_iterations", "must be >= 0");
  require(c.eval_every >= 1, "eval_every", "must be >= 1");
  require(c.promotion_threshold > 0 && c.promotion_threshold <= 1, "promotion_threshold", "must be in (0, 1]");
  require(c.rouge_threshold > 0 && c.rouge_threshold <= 1, "rouge_threshold", "must be in (0, 1]");
  require(std::isfinite(c.ppl_threshold) && c.ppl_threshold > 0, "ppl_threshold", "must be a positive number");
  for (const auto& kw : c.keyword_list) require(!kw.empty(), "keyword_list", "entries must be non-empty");
  require(c.few_shot_count >= 1, "few_shot_count", "must be >= 1");
  require(std::isfinite(c.promoted_weight) && c.promoted_weight > 0, "promoted_weight", "must be > 0");
  require(c.intrinsic_trials_per_class >= 1, "intrinsic_trials_per_class", "must be >= 1");
  require(c.extrinsic_per_class >= 1, "extrinsic_per_class", "must be >= 1");

  const auto& b = c.backend;
  require(b.max_tokens >= 1, "backend.max_tokens", "must be >= 1");
  require(b.timeout_s > 0, "backend.timeout_s", "must be > 0");
  require(b.max_attempts >= 1, "backend.max_attempts", "must be >= 1");
  require(b.backoff_initial_ms >= 0, "backend.backoff_initial_ms", "must be >= 0");
  require(b.max_in_flight >= 1, "backend.max_in_flight", "must be >= 1");
  require(b.kind != BackendKind::Mock || !b.mock_script.empty(), "backend.mock_script", "required for mock backend");
  require(b.synthetic_base_agreement >= 0 && b.synthetic_base_agreement <= 100, "backend.synthetic_base_agreement",
          "must be a percentage");
  require(b.synthetic_tasks_per_completion >= 1, "backend.synthetic_tasks_per_completion", "must be >= 1");
}

RunConfig parse_config_toml(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }

  RunConfig c;
  read(root, "k", c.k);
  read(root, "temp_introspection", c.temp_introspection);
  read(root, "temp_analysis", c.temp_analysis);
  read(root, "introspection_runs_per_phase", c.introspection_runs_per_phase);
  read(root, "candidate_target", c.candidate_target);
  read(root, "total_iterations", c.total_iterations);
  read(root, "eval_every", c.eval_every);
  read(root, "promotion_threshold", c.promotion_threshold);
  read(root, "rouge_threshold", c.rouge_threshold);
  read(root, "ppl_threshold", c.ppl_threshold);
  read(root, "rng_seed", c.rng_seed);
  read(root, "few_shot_count", c.few_shot_count);
  read(root, "promoted_weight", c.promoted_weight);
  read(root, "intrinsic_trials_per_class", c.intrinsic_trials_per_class);
  read(root, "extrinsic_per_class", c.extrinsic_per_class);
  read(root, "extrinsic_dataset", c.extrinsic_dataset);
  read(root, "seed_path", c.seed_path);
  read(root, "templates_dir", c.templates_dir);
  read(root, "trainer_hook", c.trainer_hook);

  if (const toml::node* kw = root.get("keyword_list")) {
    const toml::array* arr = kw->as_array();
    if (!arr) throw ConfigError("keyword_list: expected an array of strings");
    c.keyword_list.clear();
    for (const auto& el : *arr) {
      auto s = el.value<std::string>();
      if (!s) throw ConfigError("keyword_list: expected an array of strings");
      c.keyword_list.push_back(*s);
    }
  }

  if (const toml::node* bn = root.get("backend")) {
    const toml::table* bt = bn->as_table();
    if (!bt) throw ConfigError("backend: expected a table");
    auto& b = c.backend;
    std::string s;
    if (bt->contains("kind")) {
      read(*bt, "kind", s);
      b.kind = parse_backend_kind(s);
    }
    if (bt->contains("sampling")) {
      read(*bt, "sampling", s);
      b.sampling = parse_sampling(s);
    }
    if (bt->contains("scoring")) {
      read(*bt, "scoring", s);
      b.scoring = parse_scoring(s);
    }
    read(*bt, "base_url", b.base_url);
    read(*bt, "model", b.model);
    read(*bt, "max_tokens", b.max_tokens);
    read(*bt, "timeout_s", b.timeout_s);
    read(*bt, "max_attempts", b.max_attempts);
    read(*bt, "backoff_initial_ms", b.backoff_initial_ms);
    read(*bt, "max_in_flight", b.max_in_flight);
    read(*bt, "mock_script", b.mock_script);
    read(*bt, "synthetic_base_agreement", b.synthetic_base_agreement);
    read(*bt, "synthetic_agreement_step", b.synthetic_agreement_step);
    read(*bt, "synthetic_tasks_per_completion", b.synthetic_tasks_per_completion);
  }

  validate(c);
  return c;
}

// Hand-written so the key order is fixed and floats are emitted with enough
// digits to parse back bit-exactly.
std::string dump_config_toml(const RunConfig& c) {
  std::ostringstream os;
  os << "k = " << c.k << '\n';
  os << "temp_introspection = " << exact_double(c.temp_introspection) << '\n';
  os << "temp_analysis = " << exact_double(c.temp_analysis) << '\n';
  os << "introspection_runs_per_phase = " << c.introspection_runs_per_phase << '\n';
  os << "candidate_target = " << c.candidate_target << '\n';
  os << "total_iterations = " << c.total_iterations << '\n';
  os << "eval_every = " << c.eval_every << '\n';
  os << "promotion_threshold = " << exact_double(c.promotion_threshold) << '\n';
  os << "rouge_threshold = " << exact_double(c.rouge_threshold) << '\n';
  os << "ppl_threshold = " << exact_double(c.ppl_threshold) << '\n';
  os << "keyword_list = [";
  for (std::size_t i = 0; i < c.keyword_list.size(); ++i) {
    os << (i ? ", " : "") << quoted(c.keyword_list[i]);
  }
  os << "]\n";
  os << "rng_seed = " << c.rng_seed << '\n';
  os << "few_shot_count = " << c.few_shot_count << '\n';
  os << "promoted_weight = " << exact_double(c.promoted_weight) << '\n';
  os << "intrinsic_trials_per_class = " << c.intrinsic_trials_per_class << '\n';
  os << "extrinsic_per_class = " << c.extrinsic_per_class << '\n';
  os << "extrinsic_dataset = " << quoted(c.extrinsic_dataset) << '\n';
  os << "seed_path = " << quoted(c.seed_path) << '\n';
  os << "templates_dir = " << quoted(c.templates_dir) << '\n';
  os << "trainer_hook = " << quoted(c.trainer_hook) << '\n';

  const auto& b = c.backend;
  os << "\n[backend]\n";
  os << "kind = " << quoted(to_string(b.kind)) << '\n';
  os << "base_url = " << quoted(b.base_url) << '\n';
  os << "model = " << quoted(b.model) << '\n';
  os << "sampling = " << quoted(to_string(b.sampling)) << '\n';
  os << "scoring = " << quoted(to_string(b.scoring)) << '\n';
  os << "max_tokens = " << b.max_tokens << '\n';
  os << "timeout_s = " << exact_double(b.timeout_s) << '\n';
  os << "max_attempts = " << b.max_attempts << '\n';
  os << "backoff_initial_ms = " << b.backoff_initial_ms << '\n';
  os << "max_in_flight = " << b.max_in_flight << '\n';
  os << "mock_script = " << quoted(b.mock_script) << '\n';
  os << "synthetic_base_agreement = " << exact_double(b.synthetic_base_agreement) << '\n';
  os << "synthetic_agreement_step = " << exact_double(b.synthetic_agreement_step) << '\n';
  os << "synthetic_tasks_per_completion = " << b.synthetic_tasks_per_completion << '\n';
  return os.str();
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_toml(ss.str());
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << dump_config_toml(cfg);
  if (!out) throw IoError("write failed: " + path.string());
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* url = std::getenv("KNOWRL_BACKEND_URL"); url && *url) cfg.backend.base_url = url;
}

std::optional<std::string> api_key_from_env() {
  if (const char* key = std::getenv("KNOWRL_API_KEY"); key && *key) return std::string(key);
  return std::nullopt;
}

}  // namespace knowrl
