#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knowrl/introspection.hpp"

namespace knowrl {

struct RunConfig;

struct IntrinsicReport {
  int iteration = 0;
  int trials_feasible = 0;
  int trials_infeasible = 0;
  int consistent_feasible = 0;
  int consistent_infeasible = 0;
  int unparsable = 0;
  double accuracy = 0.0;  // percent
  std::optional<double> delta;

  int consistent_count() const { return consistent_feasible + consistent_infeasible; }

  bool operator==(const IntrinsicReport&) const = default;
};

struct Confusion {
  int tp = 0;  // unanswerable predicted unanswerable
  int fp = 0;
  int fn = 0;
  int tn = 0;

  bool operator==(const Confusion&) const = default;
};

// Fractions in [0,1]; zero denominators give 0.
struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
PrfScore precision_recall_f1(const Confusion& c);

struct ExtrinsicReport {
  int iteration = 0;
  int answerable_count = 0;
  int unanswerable_count = 0;
  Confusion confusion;
  int unparsable = 0;
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> delta;

  bool operator==(const ExtrinsicReport&) const = default;
};

struct EvalReport {
  int iteration = 0;
  std::optional<IntrinsicReport> intrinsic;
  std::optional<ExtrinsicReport> extrinsic;

  bool operator==(const EvalReport&) const = default;
};

struct BenchmarkItem {
  std::string question;
  bool answerable = true;
  std::optional<std::string> answer;

  bool operator==(const BenchmarkItem&) const = default;
};

// JSON array of {question, answerable, answer?}. Throws DatasetError naming
// the path and expected format.
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path);

// Normalises the public SelfAware release ({"example": [{question,
// answerable, answer, ...}]}, or a bare array of such objects).
std::vector<BenchmarkItem> convert_selfaware(std::string_view json_text);

// Seeded without-replacement sample of `per_class` items of each type,
// answerable items first. Throws DatasetError if a class is short.
std::vector<BenchmarkItem> sample_benchmark(std::span<const BenchmarkItem> items, int per_class, std::uint64_t seed);

// One audited trial of either protocol.
struct TrialLog {
  std::string protocol;  // "intrinsic" | "extrinsic"
  int ordinal = 0;
  std::string expected;
  std::string prompt;
  std::string generated;
  std::string reply;
  std::string predicted;
  std::string rule;
  bool correct = false;
};

struct IntrinsicRun {
  IntrinsicReport report;
  std::vector<TrialLog> trials;
};

// Per class: generate a task with the introspection prompt, then validate it
// with one analysis sample at temperature 0. A trial is consistent iff the
// validated label equals the class asked for. Unparsable or task-less trials
// count as inconsistent. The pool is read-only.
IntrinsicRun run_intrinsic_eval(const RunConfig& cfg, const TemplateSet& templates, const FewShotPool& pool,
                                Backend& backend, int iteration, int trials_per_class);

struct ExtrinsicRun {
  ExtrinsicReport report;
  std::vector<TrialLog> trials;
};

// Positive class is "unanswerable". Unparsable replies count as answerable.
ExtrinsicRun run_extrinsic_eval(const RunConfig& cfg, const TemplateSet& templates,
                                std::span<const BenchmarkItem> dataset, Backend& backend, int iteration,
                                int per_class);

IntrinsicReport make_intrinsic_report(int iteration, int trials_f, int trials_i, int consistent_f, int consistent_i);
ExtrinsicReport make_extrinsic_report(int iteration, const Confusion& c);

// delta = metric - previous metric, reports taken in iteration order; the
// first report gets no delta.
void assign_deltas(std::span<IntrinsicReport> reports);
void assign_deltas(std::span<ExtrinsicReport> reports);
void assign_deltas(std::span<EvalReport> reports);

// "-" for none, otherwise "|d| ↑" / "|d| ↓" with two decimals.
std::string format_delta(std::optional<double> delta);
std::string iteration_label(int iteration);

std::string dump_eval_report(const EvalReport& report);
// Throws DatasetError on schema violations.
EvalReport parse_eval_report(std::string_view json_text);

// JSON array of reports, as written next to the text table.
std::string dump_eval_reports(std::span<const EvalReport> reports);
std::vector<EvalReport> parse_eval_reports(std::string_view json_text);

std::string dump_trials_jsonl(std::span<const TrialLog> trials);

// Aligned text table: Iteration | Accuracy (%) | Δ (%) [| F1 (%) | Δ (%)].
std::string render_report_table(std::span<const EvalReport> reports);

}  // namespace knowrl
