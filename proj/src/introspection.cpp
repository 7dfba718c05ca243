#include "knowrl/introspection.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "knowrl/config.hpp"
#include "knowrl/consensus.hpp"
#include "knowrl/error.hpp"

namespace knowrl {
namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kFewShot = "{few_shot_block}";
constexpr std::string_view kTask = "{task_description}";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::size_t count_of(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

bool needs_few_shot(TemplateName name) {
  return name == TemplateName::IntrospectFeasible || name == TemplateName::IntrospectInfeasible;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool standalone_at(std::string_view text, std::size_t pos, std::string_view word) {
  if (text.compare(pos, word.size(), word) != 0) return false;
  if (pos > 0 && word_char(text[pos - 1])) return false;
  const std::size_t end = pos + word.size();
  return end == text.size() || !word_char(text[end]);
}

}  // namespace

std::string_view to_string(TemplateName name) {
  switch (name) {
    case TemplateName::IntrospectFeasible:
      return "IntrospectFeasible";
    case TemplateName::IntrospectInfeasible:
      return "IntrospectInfeasible";
    case TemplateName::SelfAnalysis:
      return "SelfAnalysis";
    case TemplateName::FeasibleValidation:
      return "FeasibleValidation";
    case TemplateName::InfeasibleValidation:
      return "InfeasibleValidation";
    case TemplateName::AnswerabilityIcl:
      return "AnswerabilityIcl";
  }
  return "SelfAnalysis";
}

std::string_view template_file_name(TemplateName name) {
  switch (name) {
    case TemplateName::IntrospectFeasible:
      return "introspect_feasible.txt";
    case TemplateName::IntrospectInfeasible:
      return "introspect_infeasible.txt";
    case TemplateName::SelfAnalysis:
      return "self_analysis.txt";
    case TemplateName::FeasibleValidation:
      return "feasible_validation.txt";
    case TemplateName::InfeasibleValidation:
      return "infeasible_validation.txt";
    case TemplateName::AnswerabilityIcl:
      return "answerability_icl.txt";
  }
  return "self_analysis.txt";
}

// ---------------------------------------------------------------- templates

void PromptTemplate::validate() const {
  const std::string label(to_string(name));
  const std::string_view required = needs_few_shot(name) ? kFewShot : kTask;
  const std::string_view forbidden = needs_few_shot(name) ? kTask : kFewShot;
  if (count_of(body, required) != 1) {
    throw TemplateError("template " + label + ": must contain " + std::string(required) + " exactly once");
  }
  if (count_of(body, forbidden) != 0) {
    throw TemplateError("template " + label + ": must not contain " + std::string(forbidden));
  }
  std::string rest = body;
  const auto pos = rest.find(required);
  rest.erase(pos, required.size());
  if (rest.find_first_of("{}") != std::string::npos) {
    throw TemplateError("template " + label + ": unknown placeholder or stray brace near '" +
                        rest.substr(rest.find_first_of("{}"), 24) + "'");
  }
}

std::string PromptTemplate::render(std::string_view few_shot_block, std::string_view task_description) const {
  std::string out;
  out.reserve(body.size() + few_shot_block.size() + task_description.size());
  std::size_t i = 0;
  while (i < body.size()) {
    const std::string_view rest = std::string_view(body).substr(i);
    if (rest.starts_with(kFewShot)) {
      out += few_shot_block;
      i += kFewShot.size();
    } else if (rest.starts_with(kTask)) {
      out += task_description;
      i += kTask.size();
    } else {
      out += body[i++];
    }
  }
  return out;
}

PromptTemplate PromptTemplate::parse(TemplateName name, std::string_view file_text) {
  PromptTemplate t;
  t.name = name;
  std::string_view text = file_text;
  // Optional "# key: value" header closed by a "---" line.
  const auto sep = text.find("\n---\n");
  if (text.starts_with("#") && sep != std::string_view::npos) {
    std::istringstream header{std::string(text.substr(0, sep))};
    std::string line;
    while (std::getline(header, line)) {
      const std::string_view l = trim(line);
      if (!l.starts_with("#")) continue;
      const auto colon = l.find(':');
      if (colon == std::string_view::npos) continue;
      const std::string key = lower(trim(l.substr(1, colon - 1)));
      const std::string_view value = trim(l.substr(colon + 1));
      if (key == "version") t.version = value;
      if (key == "reconstructed") t.reconstructed = lower(value) == "true";
    }
    text.remove_prefix(sep + 5);
  }
  t.body = std::string(text);
  while (!t.body.empty() && (t.body.back() == '\n' || t.body.back() == '\r')) t.body.pop_back();
  t.validate();
  return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  TemplateSet set;
  for (auto name : {TemplateName::IntrospectFeasible, TemplateName::IntrospectInfeasible, TemplateName::SelfAnalysis,
                    TemplateName::FeasibleValidation, TemplateName::InfeasibleValidation,
                    TemplateName::AnswerabilityIcl}) {
    const auto path = dir / template_file_name(name);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("missing template file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    set.set(PromptTemplate::parse(name, ss.str()));
  }
  return set;
}

const PromptTemplate& TemplateSet::get(TemplateName name) const {
  const auto it = templates_.find(name);
  if (it == templates_.end()) throw TemplateError("template " + std::string(to_string(name)) + " not loaded");
  return it->second;
}

const PromptTemplate& TemplateSet::introspection(FeasibilityLabel label) const {
  return get(label == FeasibilityLabel::Feasible ? TemplateName::IntrospectFeasible
                                                 : TemplateName::IntrospectInfeasible);
}

void TemplateSet::set(PromptTemplate tmpl) {
  tmpl.validate();
  templates_[tmpl.name] = std::move(tmpl);
}

// ---------------------------------------------------------------- seed set

std::string_view to_string(SeedVerification v) {
  return v == SeedVerification::ConsistentSolutions ? "consistent_solutions" : "verified_infeasibility_explanation";
}

SeedVerification parse_seed_verification(std::string_view text) {
  if (text == "consistent_solutions") return SeedVerification::ConsistentSolutions;
  if (text == "verified_infeasibility_explanation") return SeedVerification::VerifiedInfeasibilityExplanation;
  throw DatasetError("unknown seed verification '" + std::string(text) + "'");
}

namespace {

SeedVerification verification_for(FeasibilityLabel label) {
  return label == FeasibilityLabel::Feasible ? SeedVerification::ConsistentSolutions
                                             : SeedVerification::VerifiedInfeasibilityExplanation;
}

}  // namespace

std::vector<SeedExample> load_seed_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read seed set " + path.string() + " (expected JSONL of {text, class, verification, verifier_note})");
  std::vector<SeedExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      SeedExample s;
      s.text = j.at("text").get<std::string>();
      s.label = parse_label(j.at("class").get<std::string>());
      s.verification = parse_seed_verification(j.at("verification").get<std::string>());
      s.verifier_note = j.value("verifier_note", "");
      if (trim(s.text).empty()) throw DatasetError("empty text");
      if (s.verification != verification_for(s.label)) {
        throw DatasetError("verification '" + std::string(to_string(s.verification)) + "' does not fit class '" +
                           std::string(to_string(s.label)) + "'");
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DatasetError(where + ": " + e.what());
    } catch (const Error& e) {
      throw DatasetError(where + ": " + e.what());
    }
  }
  return out;
}

void save_seed_set(std::span<const SeedExample> seeds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write seed set " + path.string());
  for (const auto& s : seeds) {
    json j = {{"text", s.text},
              {"class", to_string(s.label)},
              {"verification", to_string(s.verification)},
              {"verifier_note", s.verifier_note}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- pool

FewShotPool::FewShotPool(std::vector<SeedExample> seeds, double promoted_weight)
    : seeds_(std::move(seeds)), promoted_weight_(promoted_weight) {
  const auto has = [&](FeasibilityLabel l) {
    return std::any_of(seeds_.begin(), seeds_.end(), [&](const SeedExample& s) { return s.label == l; });
  };
  if (!has(FeasibilityLabel::Feasible) || !has(FeasibilityLabel::Infeasible)) {
    throw ConfigError("seed set must contain both feasible and infeasible examples");
  }
  if (!(promoted_weight_ > 0)) throw ConfigError("promoted_weight must be > 0");
}

void FewShotPool::promote(const TaskCandidate& task, const ConsensusResult& result, double promotion_threshold) {
  if (!is_promotable(result, task.intended_class, promotion_threshold)) {
    throw ContractViolation("task " + task.id + " is not promotable");
  }
  promoted_.push_back({task, result});
}

std::vector<FewShotPool::Eligible> FewShotPool::eligible(FeasibilityLabel label, std::string_view exclude_text) const {
  std::vector<Eligible> out;
  std::set<std::string_view> seen;
  const auto add = [&](std::string_view text, double weight) {
    if (!exclude_text.empty() && text == exclude_text) return;
    if (seen.insert(text).second) out.push_back({text, weight});
  };
  for (const auto& s : seeds_) {
    if (s.label == label) add(s.text, 1.0);
  }
  for (const auto& p : promoted_) {
    if (p.task.intended_class == label) add(p.task.text, promoted_weight_);
  }
  return out;
}

std::size_t FewShotPool::eligible_count(FeasibilityLabel label) const { return eligible(label, {}).size(); }

std::vector<std::string> FewShotPool::select(FeasibilityLabel label, int count, std::mt19937_64& rng,
                                             std::string_view exclude_text) const {
  auto items = eligible(label, exclude_text);
  if (count < 0 || items.size() < static_cast<std::size_t>(count)) {
    throw ConfigError("few-shot pool has " + std::to_string(items.size()) + " " + std::string(to_string(label)) +
                      " examples, need " + std::to_string(count));
  }
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  const bool uniform = std::all_of(items.begin(), items.end(), [](const Eligible& e) { return e.weight == 1.0; });
  for (int i = 0; i < count; ++i) {
    std::size_t chosen;
    if (uniform) {
      chosen = static_cast<std::size_t>(i) + uniform_index(rng, items.size() - static_cast<std::size_t>(i));
    } else {
      double total = 0;
      for (std::size_t j = static_cast<std::size_t>(i); j < items.size(); ++j) total += items[j].weight;
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double acc = 0;
      chosen = items.size() - 1;
      for (std::size_t j = static_cast<std::size_t>(i); j < items.size(); ++j) {
        acc += items[j].weight;
        if (u < acc) {
          chosen = j;
          break;
        }
      }
    }
    std::swap(items[static_cast<std::size_t>(i)], items[chosen]);
    out.emplace_back(items[static_cast<std::size_t>(i)].text);
  }
  return out;
}

// ---------------------------------------------------------------- prompts

std::string render_few_shot_block(std::span<const std::string> examples) {
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i) out += '\n';
    out += "Example " + std::to_string(i + 1) + ": " + examples[i];
  }
  return out;
}

std::string build_introspection_prompt(const TemplateSet& templates, FeasibilityLabel label, const FewShotPool& pool,
                                       int few_shot_count, std::mt19937_64& rng) {
  const auto examples = pool.select(label, few_shot_count, rng);
  return templates.introspection(label).render(render_few_shot_block(examples), {});
}

std::string build_analysis_prompt(const TemplateSet& templates, const TaskCandidate& task) {
  if (trim(task.text).empty()) throw ContractViolation("analysis prompt: task " + task.id + " has empty text");
  return templates.get(TemplateName::SelfAnalysis).render({}, task.text);
}

std::vector<std::string> parse_task_list(std::string_view completion) {
  std::vector<std::string> tasks;
  std::istringstream in{std::string(completion)};
  std::string raw;
  while (std::getline(in, raw)) {
    std::string_view line = trim(raw);
    std::size_t marker = 0;
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) {
      while (marker < line.size() && std::isdigit(static_cast<unsigned char>(line[marker]))) ++marker;
      if (marker >= line.size() || (line[marker] != '.' && line[marker] != ')')) continue;
      ++marker;
    } else if (line.starts_with("-") || line.starts_with("*")) {
      marker = 1;
    } else if (line.starts_with("\xE2\x80\xA2")) {  // U+2022 bullet
      marker = 3;
    } else {
      continue;
    }
    if (marker < line.size() && !std::isspace(static_cast<unsigned char>(line[marker]))) continue;
    const std::string_view task = trim(line.substr(marker));
    if (task.size() < 10) continue;
    tasks.emplace_back(task);
  }
  return tasks;
}

BinaryMatch match_binary_verdict(std::string_view raw, std::string_view positive_word, std::string_view negative_word) {
  const std::string text = lower(raw);
  const std::string pos = lower(positive_word);
  const std::string neg = lower(negative_word);

  // Rule 1: the final non-empty line is exactly one of the words.
  std::string_view last_line;
  {
    std::string_view rest = text;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      const std::string_view line = trim(rest.substr(0, nl));
      if (!line.empty()) last_line = line;
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  if (last_line == neg) return {false, "final_line"};
  if (last_line == pos) return {true, "final_line"};

  // Rule 2: last standalone occurrence, negative word tested first.
  for (std::size_t i = text.size(); i-- > 0;) {
    if (standalone_at(text, i, neg)) return {false, "last_keyword"};
    if (standalone_at(text, i, pos)) return {true, "last_keyword"};
  }
  return {std::nullopt, "none"};
}

VerdictMatch parse_feasibility_verdict(std::string_view raw) {
  const BinaryMatch m = match_binary_verdict(raw, "feasible", "infeasible");
  if (!m.positive) return {Verdict::Unparsable, m.rule};
  return {*m.positive ? Verdict::Feasible : Verdict::Infeasible, m.rule};
}

// ---------------------------------------------------------------- generation

GenerationResult generate_candidates(FeasibilityLabel label, const RunConfig& cfg, const TemplateSet& templates,
                                     const FewShotPool& pool, Backend& backend, int iteration,
                                     std::int64_t created_at) {
  GenerationResult out;
  const auto label_code = static_cast<std::uint64_t>(label);
  const char tag = label == FeasibilityLabel::Feasible ? 'f' : 'i';
  const std::size_t target = static_cast<std::size_t>(cfg.candidate_target);

  for (int run = 0; run < cfg.introspection_runs_per_phase && out.candidates.size() < target; ++run) {
    const auto it = static_cast<std::uint64_t>(iteration);
    const auto r = static_cast<std::uint64_t>(run);
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, {it, label_code, r, 0x5eed}));
    ChatRequest req;
    req.messages = {{Role::User, build_introspection_prompt(templates, label, pool, cfg.few_shot_count, rng)}};
    req.temperature = cfg.temp_introspection;
    req.n = 1;
    req.max_tokens = cfg.backend.max_tokens;
    req.trace = {"introspect." + std::string(to_string(label)), r, derive_seed(cfg.rng_seed, {it, label_code, r})};

    ChatResponse resp = backend.complete(req);
    ++out.runs_issued;
    const std::string& completion = resp.completions.front();
    out.raw_outputs.push_back(completion);

    const auto tasks = parse_task_list(completion);
    if (tasks.empty()) {
      spdlog::info("iteration {} {} run {}: no recognizable task lines", iteration, to_string(label), run);
    }
    for (const auto& text : tasks) {
      if (out.candidates.size() >= target) break;
      char id[48];
      std::snprintf(id, sizeof id, "it%d-%c-%03zu", iteration, tag, out.candidates.size());
      out.candidates.push_back({id, text, label, iteration, TaskSource::Generated, created_at});
    }
  }
  if (out.candidates.empty()) {
    throw EmptyGenerationError("iteration " + std::to_string(iteration) + " " + std::string(to_string(label)) +
                                   ": no parseable tasks in " + std::to_string(out.runs_issued) + " runs",
                               out.raw_outputs);
  }
  return out;
}

// ---------------------------------------------------------------- seed workflow

std::vector<ValidationPrompt> build_seed_validation_prompts(const TemplateSet& templates,
                                                            const SeedCandidate& candidate) {
  if (candidate.label == FeasibilityLabel::Feasible) {
    const std::string p = templates.get(TemplateName::FeasibleValidation).render({}, candidate.text);
    return {{p, 0.0}, {p, 0.0}, {p, 0.0}};
  }
  return {{templates.get(TemplateName::InfeasibleValidation).render({}, candidate.text), 0.0}};
}

std::optional<SeedExample> ingest_seed_verdict(const ReviewedSeed& reviewed) {
  const std::string v = lower(trim(reviewed.verdict));
  if (v == "inconsistent" || v == "unverified" || v == "rejected") return std::nullopt;
  if (v != "consistent" && v != "verified" && v != "accepted") {
    throw DatasetError("seed " + reviewed.candidate.id + ": unknown verdict '" + reviewed.verdict +
                       "' (expected consistent|verified|accepted|inconsistent|unverified|rejected)");
  }
  if (trim(reviewed.candidate.text).empty()) throw DatasetError("seed " + reviewed.candidate.id + ": empty text");
  SeedExample s;
  s.text = reviewed.candidate.text;
  s.label = reviewed.candidate.label;
  s.verification = verification_for(s.label);
  s.verifier_note = reviewed.verifier_note;
  return s;
}

}  // namespace knowrl
