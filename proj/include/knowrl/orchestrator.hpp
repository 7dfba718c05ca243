#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knowrl/config.hpp"
#include "knowrl/evaluation.hpp"
#include "knowrl/introspection.hpp"
#include "knowrl/text_filters.hpp"

namespace knowrl {

inline constexpr int kManifestSchemaVersion = 1;

enum class TrainerStatus { Emitted, Trained, Skipped };

std::string_view to_string(TrainerStatus status);
TrainerStatus parse_trainer_status(std::string_view text);

struct PhaseSummary {
  FeasibilityLabel label = FeasibilityLabel::Feasible;
  int generation_runs = 0;
  int candidates = 0;
  int accepted = 0;
  int rejected_keyword = 0;
  int rejected_redundancy = 0;
  int rejected_perplexity = 0;
  // histogram[a] = number of tasks whose agreement count was a (0..k).
  std::vector<int> consensus_histogram;
  int tied = 0;
  int promoted = 0;
  double mean_reward = 0.0;

  int rejected() const { return rejected_keyword + rejected_redundancy + rejected_perplexity; }

  bool operator==(const PhaseSummary&) const = default;
};

struct IterationRecord {
  int index = 0;
  std::vector<PhaseSummary> phases;
  std::string batch_path;  // relative to the run directory; empty if no records
  int batch_records = 0;
  TrainerStatus trainer_status = TrainerStatus::Emitted;
  std::int64_t started_at = 0;
  double wall_clock_s = 0.0;

  bool operator==(const IterationRecord&) const = default;
};

struct EvalEntry {
  int iteration = 0;
  std::string json_path;
  std::string text_path;

  bool operator==(const EvalEntry&) const = default;
};

struct RunManifest {
  int schema_version = kManifestSchemaVersion;
  std::string run_id;
  std::string config_toml;  // snapshot, immutable after init
  std::uint64_t rng_seed = 0;
  std::string backend;
  std::vector<IterationRecord> iterations;
  std::vector<EvalEntry> evals;

  int completed_iterations() const { return static_cast<int>(iterations.size()); }
  bool has_eval(int iteration) const;

  bool operator==(const RunManifest&) const = default;
};

std::string dump_manifest(const RunManifest& manifest);
// Throws ManifestError with recovery instructions on any defect.
RunManifest parse_manifest(std::string_view json_text);

// --- Batch files -----------------------------------------------------------

// JSONL, one record per line, keys in the order task_id, prompt, response,
// reward, intended_class, iteration, majority, agreement_count, k.
std::string serialize_batch_line(const RewardedRecord& record);
RewardedRecord parse_batch_line(std::string_view line);

// Throws ContractViolation on an empty batch and IoError (after removing
// the partial file) on write failure.
void emit_batch(std::span<const RewardedRecord> records, const std::filesystem::path& path);
std::vector<RewardedRecord> read_batch(const std::filesystem::path& path);

// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// --- Run directory ---------------------------------------------------------

// runs/<id>/
//   manifest.json  config.toml  seeds.jsonl  templates/  .lock
//   iter_<n>/{candidates,verdicts,judgments,batch}.jsonl  state.json
//   iter_<n>.quarantine-<m>/   aborted attempts
//   eval/<n>.json  eval/<n>.txt  eval/<n>.trials.jsonl
class RunDirectory {
 public:
  explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path manifest_path() const { return root_ / "manifest.json"; }
  std::filesystem::path config_path() const { return root_ / "config.toml"; }
  std::filesystem::path seeds_path() const { return root_ / "seeds.jsonl"; }
  std::filesystem::path templates_dir() const { return root_ / "templates"; }
  std::filesystem::path iteration_dir(int n) const;
  std::filesystem::path partial_dir(int n) const;
  std::filesystem::path eval_dir() const { return root_ / "eval"; }

  RunManifest load_manifest() const;
  void save_manifest(const RunManifest& manifest) const;

 private:
  std::filesystem::path root_;
};

// Exclusive advisory lock on <run_dir>/.lock for the object's lifetime.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

// Scaffolds a run directory: copies config, seed set and templates, writes
// an empty manifest. Throws if the directory already holds a manifest.
RunDirectory init_run(const std::filesystem::path& run_dir, const RunConfig& cfg, std::string run_id,
                      const std::filesystem::path& seed_source, const std::filesystem::path& templates_source);

// --- Loop ------------------------------------------------------------------

using Clock = std::function<std::int64_t()>;  // unix seconds
Clock system_clock();
Clock frozen_clock(std::int64_t at = 0);

struct LoopState {
  FewShotPool pool;
  std::vector<TaskCandidate> retained;  // seeds + every accepted task so far
};

// Progress notifications; throwing from the callback aborts the loop as a
// crash would (used to test resume).
struct LoopEvent {
  enum class Kind { IterationCommitted, EvalWritten } kind;
  int iteration = 0;
};

struct RunOptions {
  Clock clock = system_clock();
  std::function<void(const LoopEvent&)> on_event;
  // Stop cleanly once this many iterations are complete.
  std::optional<int> stop_after;
};

// One full cycle, both classes. Artifacts are written under
// iter_<n>.partial/ and only become iter_<n>/ once everything succeeded; on
// failure the partial directory is renamed to a quarantine and the error is
// rethrown with the state untouched.
IterationRecord run_iteration(const RunDirectory& dir, int index, LoopState& state, const RunConfig& cfg,
                              const TemplateSet& templates, Backend& backend, const Clock& clock);

// Starts or resumes a run: quarantines iteration directories the manifest
// does not cover, restores the pool from the last complete iteration,
// evaluates at iteration 0 and every eval_every-th iteration, and runs until
// total_iterations are complete.
RunManifest run_loop(const RunDirectory& dir, Backend& backend, const RunOptions& opts = {});

// Runs the evaluation protocols against the pool state of completed
// iteration `iteration` and writes eval/<n>.{json,txt,trials.jsonl}.
EvalReport evaluate_iteration(const RunDirectory& dir, int iteration, const RunConfig& cfg,
                              const TemplateSet& templates, const FewShotPool& pool, Backend& backend);

// The run's config snapshot with environment overrides applied and relative
// paths resolved against the run directory. Throws ManifestError if
// config.toml was edited after init.
RunConfig load_run_config(const RunDirectory& dir, const RunManifest& manifest);
RunConfig load_run_config(const RunDirectory& dir);

LoopState load_state(const RunDirectory& dir, int completed_iterations, const RunConfig& cfg);

}  // namespace knowrl
