#include "knowrl/types.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "knowrl/error.hpp"

namespace knowrl {
namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::string_view to_string(FeasibilityLabel label) {
  return label == FeasibilityLabel::Feasible ? "feasible" : "infeasible";
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Feasible:
      return "feasible";
    case Verdict::Infeasible:
      return "infeasible";
    case Verdict::Unparsable:
      return "unparsable";
  }
  return "unparsable";
}

std::string_view to_string(TaskSource source) { return source == TaskSource::Seed ? "seed" : "generated"; }

FeasibilityLabel parse_label(std::string_view text) {
  const std::string s = lower(text);
  if (s == "feasible") return FeasibilityLabel::Feasible;
  if (s == "infeasible") return FeasibilityLabel::Infeasible;
  throw ContractViolation("unknown feasibility label '" + std::string(text) + "'");
}

TaskSource parse_source(std::string_view text) {
  const std::string s = lower(text);
  if (s == "seed") return TaskSource::Seed;
  if (s == "generated") return TaskSource::Generated;
  throw ContractViolation("unknown task source '" + std::string(text) + "'");
}

FeasibilityLabel opposite(FeasibilityLabel label) {
  return label == FeasibilityLabel::Feasible ? FeasibilityLabel::Infeasible : FeasibilityLabel::Feasible;
}

std::optional<FeasibilityLabel> as_label(Verdict verdict) {
  switch (verdict) {
    case Verdict::Feasible:
      return FeasibilityLabel::Feasible;
    case Verdict::Infeasible:
      return FeasibilityLabel::Infeasible;
    case Verdict::Unparsable:
      break;
  }
  return std::nullopt;
}

Verdict as_verdict(FeasibilityLabel label) {
  return label == FeasibilityLabel::Feasible ? Verdict::Feasible : Verdict::Infeasible;
}

}  // namespace knowrl
