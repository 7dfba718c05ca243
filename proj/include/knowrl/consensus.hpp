#pragma once

#include <span>
#include <string>
#include <vector>

#include "knowrl/types.hpp"

namespace knowrl {

struct RunConfig;

// Tallies k self-analysis verdicts into the majority-agreement reward
//
//   reward = max(#Feasible, #Infeasible) / k
//
// Unparsable samples stay in the denominator but never count as agreement.
// A Feasible/Infeasible tie leaves the majority unset and flags `tied`; the
// reward is still count/k (0.5 at k=8), whichever way Maj would break it.
// All-unparsable input yields reward 0, no majority, not tied.
//
// Throws ContractViolation if samples.size() != k.
ConsensusResult compute_consensus(std::string task_id, std::span<const JudgmentSample> samples, int k);

// True iff the task may be reused as a few-shot example: a clear majority
// that matches what the model was asked to generate, with reward at or
// above the configured promotion threshold.
bool is_promotable(const ConsensusResult& result, FeasibilityLabel intended_class, double promotion_threshold);
bool is_promotable(const ConsensusResult& result, FeasibilityLabel intended_class, const RunConfig& cfg);

// Index of the sample used as the trained response: the first sample whose
// label equals the majority, or 0 when there is no majority.
std::size_t select_response_index(const ConsensusResult& result, std::span<const JudgmentSample> samples);

RewardedRecord make_rewarded_record(const TaskCandidate& task, std::string prompt, const ConsensusResult& result,
                                    std::span<const JudgmentSample> samples);

}  // namespace knowrl
