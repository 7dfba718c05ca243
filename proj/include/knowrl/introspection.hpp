#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knowrl/inference.hpp"
#include "knowrl/types.hpp"

namespace knowrl {

struct RunConfig;

enum class TemplateName {
  IntrospectFeasible,
  IntrospectInfeasible,
  SelfAnalysis,
  FeasibleValidation,
  InfeasibleValidation,
  AnswerabilityIcl,
};

std::string_view to_string(TemplateName name);
std::string_view template_file_name(TemplateName name);

// Template files are UTF-8 text. An optional header of "# key: value" lines
// terminated by a line containing only "---" carries metadata (version,
// provenance); everything after it is the body.
struct PromptTemplate {
  TemplateName name = TemplateName::SelfAnalysis;
  std::string body;
  std::string version;
  bool reconstructed = false;

  // Throws TemplateError if required placeholders are missing, a forbidden
  // one is present, or an unknown {placeholder} appears.
  void validate() const;

  // Substitutes {few_shot_block} and {task_description}. Braces in the
  // substituted values are left untouched.
  std::string render(std::string_view few_shot_block, std::string_view task_description) const;

  static PromptTemplate parse(TemplateName name, std::string_view file_text);
};

class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir);

  const PromptTemplate& get(TemplateName name) const;
  const PromptTemplate& introspection(FeasibilityLabel label) const;
  void set(PromptTemplate tmpl);

 private:
  std::map<TemplateName, PromptTemplate> templates_;
};

// Portable uniform integer in [0, bound) (rejection sampling, so the result
// sequence does not depend on the standard library's distributions).
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound);

// splitmix64 over the arguments; used to derive independent, replayable
// seeds for every call site from the run seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

enum class SeedVerification { ConsistentSolutions, VerifiedInfeasibilityExplanation };

std::string_view to_string(SeedVerification v);
SeedVerification parse_seed_verification(std::string_view text);

struct SeedExample {
  std::string text;
  FeasibilityLabel label = FeasibilityLabel::Feasible;
  SeedVerification verification = SeedVerification::ConsistentSolutions;
  std::string verifier_note;

  bool operator==(const SeedExample&) const = default;
};

// Throws DatasetError on malformed lines or a class/verification mismatch.
std::vector<SeedExample> load_seed_set(const std::filesystem::path& path);
void save_seed_set(std::span<const SeedExample> seeds, const std::filesystem::path& path);

struct PromotedExample {
  TaskCandidate task;
  ConsensusResult consensus;

  bool operator==(const PromotedExample&) const = default;
};

// Verified seeds plus high-consensus generated tasks, drawn from as one
// merged pool per class.
class FewShotPool {
 public:
  FewShotPool() = default;
  // Throws ConfigError unless both classes are represented.
  explicit FewShotPool(std::vector<SeedExample> seeds, double promoted_weight = 1.0);

  // Rejects (ContractViolation) entries that are not promotable.
  void promote(const TaskCandidate& task, const ConsensusResult& result, double promotion_threshold);

  // `count` distinct example texts of `label`, sampled without replacement,
  // each eligible text weighted 1 (seed) or promoted_weight (promoted).
  // Texts equal to `exclude_text` are never served. Throws ConfigError if
  // fewer than `count` eligible examples exist.
  std::vector<std::string> select(FeasibilityLabel label, int count, std::mt19937_64& rng,
                                  std::string_view exclude_text = {}) const;

  std::size_t eligible_count(FeasibilityLabel label) const;

  const std::vector<SeedExample>& seeds() const noexcept { return seeds_; }
  const std::vector<PromotedExample>& promoted() const noexcept { return promoted_; }
  double promoted_weight() const noexcept { return promoted_weight_; }

  // Restores a pool from persisted state without re-checking promotion.
  void restore_promoted(std::vector<PromotedExample> promoted) { promoted_ = std::move(promoted); }

 private:
  struct Eligible {
    std::string_view text;
    double weight;
  };
  std::vector<Eligible> eligible(FeasibilityLabel label, std::string_view exclude_text) const;

  std::vector<SeedExample> seeds_;
  std::vector<PromotedExample> promoted_;
  double promoted_weight_ = 1.0;
};

std::string render_few_shot_block(std::span<const std::string> examples);

std::string build_introspection_prompt(const TemplateSet& templates, FeasibilityLabel label, const FewShotPool& pool,
                                       int few_shot_count, std::mt19937_64& rng);

std::string build_analysis_prompt(const TemplateSet& templates, const TaskCandidate& task);

// Numbered ("1." / "1)") or bulleted ("-", "*", "•") lines, one task per
// item; items shorter than 10 characters after trimming are dropped.
std::vector<std::string> parse_task_list(std::string_view completion);

struct VerdictMatch {
  Verdict label = Verdict::Unparsable;
  std::string rule;  // "final_line", "last_keyword" or "none"
};

// Rule cascade:
//   1. the last non-empty line is exactly "feasible"/"infeasible" (any case)
//   2. the last standalone occurrence of either word, testing "infeasible"
//      first at each position
//   3. Unparsable
VerdictMatch parse_feasibility_verdict(std::string_view raw);

// The same cascade for an arbitrary word pair where `negative` is
// `positive` with a prefix (e.g. unanswerable/answerable). Returns true
// for positive, false for negative.
struct BinaryMatch {
  std::optional<bool> positive;
  std::string rule;
};
BinaryMatch match_binary_verdict(std::string_view raw, std::string_view positive_word, std::string_view negative_word);

struct GenerationResult {
  std::vector<TaskCandidate> candidates;
  std::vector<std::string> raw_outputs;
  int runs_issued = 0;
};

// Issues up to cfg.introspection_runs_per_phase single-sample generations
// at cfg.temp_introspection and stops as soon as cfg.candidate_target tasks
// are collected (truncating the last run). Throws EmptyGenerationError if no
// run yields a task.
GenerationResult generate_candidates(FeasibilityLabel label, const RunConfig& cfg, const TemplateSet& templates,
                                     const FewShotPool& pool, Backend& backend, int iteration,
                                     std::int64_t created_at);

// --- Seed-set workflow -----------------------------------------------------

struct SeedCandidate {
  std::string id;
  std::string text;
  FeasibilityLabel label = FeasibilityLabel::Feasible;
};

struct ValidationPrompt {
  std::string prompt;
  double temperature = 0.0;
};

// Feasible: three identical attempt prompts at temperature 0.
// Infeasible: one justification prompt.
std::vector<ValidationPrompt> build_seed_validation_prompts(const TemplateSet& templates,
                                                            const SeedCandidate& candidate);

// One reviewed item from a validation package. The reviewer fills in
// `verdict`.
struct ReviewedSeed {
  SeedCandidate candidate;
  std::vector<std::string> outputs;
  std::string verdict;  // consistent | verified | inconsistent | unverified | rejected
  std::string verifier_note;
};

// nullopt when the reviewer rejected the item; throws DatasetError on an
// unknown verdict or one that does not fit the candidate's class.
std::optional<SeedExample> ingest_seed_verdict(const ReviewedSeed& reviewed);

}  // namespace knowrl
