#include "knowrl/text_filters.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <spdlog/spdlog.h>

#include "knowrl/config.hpp"
#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"

namespace knowrl {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// ASCII letters and digits form words; everything else is a boundary.
bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

FilterVerdict accept(const TaskCandidate& task, std::string detail = {}) {
  return FilterVerdict{task.id, true, std::nullopt, std::move(detail)};
}

FilterVerdict reject(const TaskCandidate& task, FilterStage stage, std::string detail) {
  return FilterVerdict{task.id, false, stage, std::move(detail)};
}

}  // namespace

std::string_view to_string(FilterStage stage) {
  switch (stage) {
    case FilterStage::Redundancy:
      return "redundancy";
    case FilterStage::Keyword:
      return "keyword";
    case FilterStage::Perplexity:
      return "perplexity";
  }
  return "keyword";
}

FilterStage parse_filter_stage(std::string_view text) {
  if (text == "redundancy") return FilterStage::Redundancy;
  if (text == "keyword") return FilterStage::Keyword;
  if (text == "perplexity") return FilterStage::Perplexity;
  throw ContractViolation("unknown filter stage '" + std::string(text) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_punct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && is_punct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) tokens.push_back(lower(text.substr(b, e - b)));
    i = j;
  }
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // Rolling row over the shorter sequence.
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = (x == b[j - 1]) ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

RougeLScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  RougeLScore s;
  if (candidate.empty() || reference.empty()) return s;
  s.lcs_length = lcs_length(candidate, reference);
  const double lcs = static_cast<double>(s.lcs_length);
  s.precision = lcs / static_cast<double>(candidate.size());
  s.recall = lcs / static_cast<double>(reference.size());
  if (s.precision + s.recall > 0) s.f_score = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

RougeLScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_l(c, r);
}

FilterVerdict redundancy_filter(const TaskCandidate& task, std::span<const TaskCandidate> retained,
                                double threshold) {
  if (retained.empty()) return accept(task);
  const auto tokens = tokenize(task.text);
  double best = -1.0;
  const TaskCandidate* best_prior = nullptr;
  for (const auto& prior : retained) {
    const auto prior_tokens = tokenize(prior.text);
    const double f = rouge_l(tokens, prior_tokens).f_score;
    if (f > best) {
      best = f;
      best_prior = &prior;
    }
  }
  std::string detail = "max rouge_l " + format_score(best) + " vs " + best_prior->id;
  if (best >= threshold) return reject(task, FilterStage::Redundancy, std::move(detail));
  return accept(task, std::move(detail));
}

FilterVerdict keyword_filter(const TaskCandidate& task, std::span<const std::string> keywords) {
  const std::string hay = lower(task.text);
  for (const auto& kw : keywords) {
    const std::string needle = lower(kw);
    if (needle.empty()) continue;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
      const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(hay[pos - 1]));
      const std::size_t end = pos + needle.size();
      const bool right_ok = end == hay.size() || !is_word_char(static_cast<unsigned char>(hay[end]));
      if (left_ok && right_ok) return reject(task, FilterStage::Keyword, "keyword \"" + kw + "\"");
    }
  }
  return accept(task);
}

std::optional<double> perplexity(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) return std::nullopt;
  const double nll = -std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
  return std::exp(nll / static_cast<double>(token_logprobs.size()));
}

FilterVerdict perplexity_filter(const TaskCandidate& task, Backend& backend, double threshold) {
  if (!backend.can_score()) {
    spdlog::debug("perplexity filter skipped for {}: backend {} cannot score", task.id, backend.id());
    return accept(task, "skipped");
  }
  std::vector<double> logprobs;
  try {
    logprobs = backend.score_logprobs(task.text);
  } catch (const UnsupportedCapability& e) {
    spdlog::warn("perplexity filter skipped for {}: {}", task.id, e.what());
    return accept(task, "skipped");
  }
  const auto ppl = perplexity(logprobs);
  if (!ppl) return reject(task, FilterStage::Perplexity, "unscoreable");
  std::string detail = "perplexity " + format_score(*ppl);
  if (!std::isfinite(*ppl) || *ppl > threshold) return reject(task, FilterStage::Perplexity, std::move(detail));
  return accept(task, std::move(detail));
}

FilterOutcome apply_filter_pipeline(std::span<const TaskCandidate> tasks, std::vector<TaskCandidate>& retained,
                                    const RunConfig& cfg, Backend& backend) {
  FilterOutcome out;
  out.verdicts.reserve(tasks.size());
  for (const auto& task : tasks) {
    FilterVerdict v = keyword_filter(task, cfg.keyword_list);
    if (v.accepted) v = redundancy_filter(task, retained, cfg.rouge_threshold);
    if (v.accepted) v = perplexity_filter(task, backend, cfg.ppl_threshold);
    if (v.accepted) {
      retained.push_back(task);
      out.accepted.push_back(task);
    }
    out.verdicts.push_back(std::move(v));
  }
  return out;
}

}  // namespace knowrl
