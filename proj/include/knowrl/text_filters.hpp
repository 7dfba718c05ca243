#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knowrl/types.hpp"

namespace knowrl {

class Backend;
struct RunConfig;

enum class FilterStage { Redundancy, Keyword, Perplexity };

std::string_view to_string(FilterStage stage);
FilterStage parse_filter_stage(std::string_view text);

struct FilterVerdict {
  std::string task_id;
  bool accepted = true;
  std::optional<FilterStage> rejected_by;
  std::string detail;

  bool operator==(const FilterVerdict&) const = default;
};

struct RougeLScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::size_t lcs_length = 0;
};

// Lowercase, split on whitespace, strip punctuation from both token edges;
// tokens that become empty are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Length of the longest common subsequence, O(|a|·|b|) time, O(min) space.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

RougeLScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
RougeLScore rouge_l(std::string_view candidate, std::string_view reference);

FilterVerdict redundancy_filter(const TaskCandidate& task, std::span<const TaskCandidate> retained, double threshold);

// Whole-word (or whole-phrase), case-insensitive match. The first keyword in
// list order that matches is reported.
FilterVerdict keyword_filter(const TaskCandidate& task, std::span<const std::string> keywords);

// exp(mean(-logprob)); nullopt for an empty list.
std::optional<double> perplexity(std::span<const double> token_logprobs);

// Rejects when perplexity > threshold. A backend without scoring support
// yields an accepted verdict with detail "skipped"; transport failures
// propagate.
FilterVerdict perplexity_filter(const TaskCandidate& task, Backend& backend, double threshold);

struct FilterOutcome {
  std::vector<TaskCandidate> accepted;
  std::vector<FilterVerdict> verdicts;  // one per input, input order
};

// Keyword -> Redundancy -> Perplexity. Accepted tasks are appended to
// `retained` as they pass, so later duplicates in the same batch are caught.
FilterOutcome apply_filter_pipeline(std::span<const TaskCandidate> tasks, std::vector<TaskCandidate>& retained,
                                    const RunConfig& cfg, Backend& backend);

}  // namespace knowrl
