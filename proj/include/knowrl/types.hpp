#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace knowrl {

enum class FeasibilityLabel { Feasible, Infeasible };

// A single self-analysis verdict. Unparsable is a value, not an error.
enum class Verdict { Feasible, Infeasible, Unparsable };

enum class TaskSource { Seed, Generated };

std::string_view to_string(FeasibilityLabel label);
std::string_view to_string(Verdict verdict);
std::string_view to_string(TaskSource source);

// Case-insensitive; throws ContractViolation on anything other than
// "feasible"/"infeasible".
FeasibilityLabel parse_label(std::string_view text);
TaskSource parse_source(std::string_view text);

FeasibilityLabel opposite(FeasibilityLabel label);
std::optional<FeasibilityLabel> as_label(Verdict verdict);
Verdict as_verdict(FeasibilityLabel label);

struct TaskCandidate {
  std::string id;
  std::string text;
  FeasibilityLabel intended_class = FeasibilityLabel::Feasible;
  int iteration = 0;
  TaskSource source = TaskSource::Generated;
  std::int64_t created_at = 0;  // unix seconds

  bool operator==(const TaskCandidate&) const = default;
};

struct JudgmentSample {
  int sample_index = 0;
  Verdict label = Verdict::Unparsable;
  std::string raw_text;
  std::string parse_rule;

  bool operator==(const JudgmentSample&) const = default;
};

struct ConsensusResult {
  std::string task_id;
  int k = 0;
  int feasible_count = 0;
  int infeasible_count = 0;
  int unparsable_count = 0;
  std::optional<FeasibilityLabel> majority;
  // max(feasible_count, infeasible_count); reward = agreement_count / k.
  int agreement_count = 0;
  double reward = 0.0;
  bool tied = false;

  int count(FeasibilityLabel label) const {
    return label == FeasibilityLabel::Feasible ? feasible_count : infeasible_count;
  }

  bool operator==(const ConsensusResult&) const = default;
};

// One line of a training batch: the self-analysis prompt, the chosen
// response and the task-level consensus reward.
struct RewardedRecord {
  std::string task_id;
  std::string prompt;
  std::string response;
  double reward = 0.0;
  FeasibilityLabel intended_class = FeasibilityLabel::Feasible;
  int iteration = 0;
  std::optional<FeasibilityLabel> majority;
  int agreement_count = 0;
  int k = 0;

  bool operator==(const RewardedRecord&) const = default;
};

}  // namespace knowrl
