#include "knowrl/consensus.hpp"

#include <algorithm>
#include <string>

#include "knowrl/config.hpp"
#include "knowrl/error.hpp"

namespace knowrl {

ConsensusResult compute_consensus(std::string task_id, std::span<const JudgmentSample> samples, int k) {
  if (k <= 0 || samples.size() != static_cast<std::size_t>(k)) {
    throw ContractViolation("compute_consensus: expected k=" + std::to_string(k) + " samples, got " +
                            std::to_string(samples.size()));
  }

  ConsensusResult r;
  r.task_id = std::move(task_id);
  r.k = k;
  for (const auto& s : samples) {
    switch (s.label) {
      case Verdict::Feasible:
        ++r.feasible_count;
        break;
      case Verdict::Infeasible:
        ++r.infeasible_count;
        break;
      case Verdict::Unparsable:
        ++r.unparsable_count;
        break;
    }
  }

  r.agreement_count = std::max(r.feasible_count, r.infeasible_count);
  r.reward = static_cast<double>(r.agreement_count) / static_cast<double>(k);
  if (r.feasible_count > r.infeasible_count) {
    r.majority = FeasibilityLabel::Feasible;
  } else if (r.infeasible_count > r.feasible_count) {
    r.majority = FeasibilityLabel::Infeasible;
  } else {
    r.tied = r.feasible_count > 0;
  }
  return r;
}

bool is_promotable(const ConsensusResult& result, FeasibilityLabel intended_class, double promotion_threshold) {
  if (result.tied || !result.majority || *result.majority != intended_class) return false;
  // Compare on the integer grid so 7/8 >= 0.875 holds exactly.
  return static_cast<double>(result.agreement_count) >= promotion_threshold * result.k - 1e-9;
}

bool is_promotable(const ConsensusResult& result, FeasibilityLabel intended_class, const RunConfig& cfg) {
  return is_promotable(result, intended_class, cfg.promotion_threshold);
}

std::size_t select_response_index(const ConsensusResult& result, std::span<const JudgmentSample> samples) {
  if (!result.majority) return 0;
  const Verdict want = as_verdict(*result.majority);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label == want) return i;
  }
  return 0;
}

RewardedRecord make_rewarded_record(const TaskCandidate& task, std::string prompt, const ConsensusResult& result,
                                    std::span<const JudgmentSample> samples) {
  if (samples.empty()) throw ContractViolation("make_rewarded_record: no samples");
  RewardedRecord rec;
  rec.task_id = task.id;
  rec.prompt = std::move(prompt);
  rec.response = samples[select_response_index(result, samples)].raw_text;
  rec.reward = result.reward;
  rec.intended_class = task.intended_class;
  rec.iteration = task.iteration;
  rec.majority = result.majority;
  rec.agreement_count = result.agreement_count;
  rec.k = result.k;
  return rec;
}

}  // namespace knowrl
