#pragma once

// Deliberately naive reference implementations used only by tests.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "knowrl/types.hpp"

namespace knowrl::oracle {

struct Tally {
  int feasible = 0;
  int infeasible = 0;
  int unparsable = 0;
  int agreement = 0;
  double reward = 0.0;
  bool tied = false;
  bool has_majority = false;
  FeasibilityLabel majority = FeasibilityLabel::Feasible;
};

inline Tally tally(const std::vector<Verdict>& votes) {
  std::map<Verdict, int> counts;
  for (Verdict v : votes) counts[v] += 1;
  Tally t;
  t.feasible = counts[Verdict::Feasible];
  t.infeasible = counts[Verdict::Infeasible];
  t.unparsable = counts[Verdict::Unparsable];
  t.agreement = t.feasible > t.infeasible ? t.feasible : t.infeasible;
  t.reward = votes.empty() ? 0.0 : static_cast<double>(t.agreement) / static_cast<double>(votes.size());
  t.tied = t.feasible == t.infeasible && t.feasible > 0;
  if (t.feasible != t.infeasible) {
    t.has_majority = true;
    t.majority = t.feasible > t.infeasible ? FeasibilityLabel::Feasible : FeasibilityLabel::Infeasible;
  }
  return t;
}

// Full (n+1)x(m+1) table, no space optimisation.
inline std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  return dp[a.size()][b.size()];
}

struct Rouge {
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
};

inline Rouge rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  Rouge out;
  const double l = static_cast<double>(lcs(cand, ref));
  if (cand.empty() || ref.empty() || l == 0.0) return out;
  out.p = l / static_cast<double>(cand.size());
  out.r = l / static_cast<double>(ref.size());
  out.f = 2.0 * out.p * out.r / (out.p + out.r);
  return out;
}

}  // namespace knowrl::oracle
