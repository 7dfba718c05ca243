#include <gtest/gtest.h>

#include <map>

#include "knowrl/config.hpp"
#include "knowrl/consensus.hpp"
#include "knowrl/error.hpp"
#include "knowrl/introspection.hpp"
#include "test_support.hpp"

using namespace knowrl;
namespace kt = knowrl::testing;

namespace {

std::vector<SeedExample> tiny_seeds(int per_class) {
  std::vector<SeedExample> out;
  for (int i = 0; i < per_class; ++i) {
    out.push_back({"feasible seed " + std::to_string(i), FeasibilityLabel::Feasible,
                   SeedVerification::ConsistentSolutions, ""});
    out.push_back({"infeasible seed " + std::to_string(i), FeasibilityLabel::Infeasible,
                   SeedVerification::VerifiedInfeasibilityExplanation, ""});
  }
  return out;
}

ConsensusResult unanimous(FeasibilityLabel label, int k = 8) {
  std::vector<JudgmentSample> s;
  const Verdict v = label == FeasibilityLabel::Feasible ? Verdict::Feasible : Verdict::Infeasible;
  for (int i = 0; i < k; ++i) s.push_back({i, v, "", "final_line"});
  return compute_consensus("t", s, k);
}

// Every completion lists `per_run` numbered tasks unique to that call.
class ListingBackend final : public Backend {
 public:
  explicit ListingBackend(int per_run) : per_run_(per_run) {}
  ChatResponse complete(const ChatRequest& req) override {
    ChatResponse r;
    std::string text = "Here are some tasks:\n";
    for (int i = 1; i <= per_run_; ++i) {
      text += std::to_string(i) + ". Task number " + std::to_string(calls_ * 100 + i) + " about something\n";
    }
    ++calls_;
    r.completions.assign(static_cast<std::size_t>(req.n), text);
    return r;
  }
  std::vector<double> score_logprobs(std::string_view) override { return {}; }
  bool can_score() const override { return false; }
  std::string id() const override { return "listing"; }
  int calls() const { return calls_; }

 private:
  int per_run_;
  int calls_ = 0;
};

}  // namespace

TEST(PromptTemplate, ParsesHeaderAndBody) {
  const auto t = PromptTemplate::parse(TemplateName::SelfAnalysis,
                                       "# version: 3\n# reconstructed: true\n---\nJudge: {task_description}\n");
  EXPECT_EQ(t.version, "3");
  EXPECT_TRUE(t.reconstructed);
  EXPECT_EQ(t.body, "Judge: {task_description}");
}

TEST(PromptTemplate, SubstitutedValuesAreNotRescanned) {
  const auto t = PromptTemplate::parse(TemplateName::IntrospectFeasible, "Examples:\n{few_shot_block}\nMore tasks:");
  EXPECT_EQ(t.render("Example 1: A", ""), "Examples:\nExample 1: A\nMore tasks:");
  EXPECT_EQ(t.render("{task_description}", "ignored"), "Examples:\n{task_description}\nMore tasks:");
}

TEST(PromptTemplate, RejectsBadPlaceholders) {
  EXPECT_THROW(PromptTemplate::parse(TemplateName::SelfAnalysis, "No placeholder here"), TemplateError);
  EXPECT_THROW(PromptTemplate::parse(TemplateName::SelfAnalysis, "{task_description} {task_description}"),
               TemplateError);
  EXPECT_THROW(PromptTemplate::parse(TemplateName::SelfAnalysis, "{task_description} {few_shot_block}"),
               TemplateError);
  EXPECT_THROW(PromptTemplate::parse(TemplateName::IntrospectInfeasible, "{few_shot_block} {other}"), TemplateError);
}

TEST(TemplateSet, LoadsShippedTemplates) {
  const auto set = TemplateSet::load(kt::templates_dir());
  EXPECT_EQ(set.get(TemplateName::FeasibleValidation).render({}, "Add 2 and 2"),
            "Please attempt the following task and provide a solution: Add 2 and 2");
  EXPECT_TRUE(set.get(TemplateName::SelfAnalysis).reconstructed);
  EXPECT_FALSE(set.get(TemplateName::InfeasibleValidation).reconstructed);
  kt::TempDir tmp;
  EXPECT_THROW(TemplateSet::load(tmp.path()), TemplateError);
}

TEST(TaskList, NumberedAndBulleted) {
  const auto tasks = parse_task_list(
      "Sure!\n1. Explain photosynthesis simply\n2) Summarise the French Revolution\n"
      "- Write a haiku about rain\n* Translate a poem to Spanish\n\xE2\x80\xA2 List prime numbers below fifty\n"
      "3. short\n10.No space after marker here\nnot a list item at all\n");
  EXPECT_EQ(tasks, (std::vector<std::string>{"Explain photosynthesis simply", "Summarise the French Revolution",
                                             "Write a haiku about rain", "Translate a poem to Spanish",
                                             "List prime numbers below fifty"}));
  EXPECT_TRUE(parse_task_list("Just prose with no items.").empty());
}

TEST(Verdict, RuleCascade) {
  auto v = parse_feasibility_verdict("I think this can't be done.\nConclusion: Infeasible");
  EXPECT_EQ(v.label, Verdict::Infeasible);
  EXPECT_EQ(v.rule, "last_keyword");

  v = parse_feasibility_verdict("Reasoning...\n  FEASIBLE  \n");
  EXPECT_EQ(v.label, Verdict::Feasible);
  EXPECT_EQ(v.rule, "final_line");

  v = parse_feasibility_verdict("This task is not possible.");
  EXPECT_EQ(v.label, Verdict::Unparsable);
  EXPECT_EQ(v.rule, "none");
}

TEST(Verdict, InfeasibleIsNotReadAsFeasible) {
  EXPECT_EQ(parse_feasibility_verdict("It is infeasible.").label, Verdict::Infeasible);
  EXPECT_EQ(parse_feasibility_verdict("Feasible? No: infeasible").label, Verdict::Infeasible);
  EXPECT_EQ(parse_feasibility_verdict("Infeasible at first, but actually feasible.").label, Verdict::Feasible);
  EXPECT_EQ(parse_feasibility_verdict("feasibleness").label, Verdict::Unparsable);
}

TEST(Verdict, BinaryWordPair) {
  EXPECT_EQ(match_binary_verdict("Answer: unanswerable", "answerable", "unanswerable").positive, false);
  EXPECT_EQ(match_binary_verdict("Answerable", "answerable", "unanswerable").positive, true);
  EXPECT_FALSE(match_binary_verdict("no idea", "answerable", "unanswerable").positive);
}

TEST(FewShotPool, NeedsBothClasses) {
  auto only_f = tiny_seeds(3);
  std::erase_if(only_f, [](const SeedExample& s) { return s.label == FeasibilityLabel::Infeasible; });
  EXPECT_THROW(FewShotPool{only_f}, ConfigError);
}

TEST(FewShotPool, DeterministicAndDistinct) {
  const FewShotPool pool(tiny_seeds(10));
  std::mt19937_64 a(5), b(5);
  const auto x = pool.select(FeasibilityLabel::Feasible, 3, a);
  EXPECT_EQ(x, pool.select(FeasibilityLabel::Feasible, 3, b));
  EXPECT_EQ(std::set<std::string>(x.begin(), x.end()).size(), 3u);
  for (const auto& t : x) EXPECT_TRUE(t.starts_with("feasible seed"));
}

TEST(FewShotPool, TooFewExamples) {
  const FewShotPool pool(tiny_seeds(2));
  std::mt19937_64 rng(1);
  EXPECT_THROW(pool.select(FeasibilityLabel::Feasible, 3, rng), ConfigError);
}

TEST(FewShotPool, PromotedEntriesDrawnAtUniformRate) {
  FewShotPool pool(tiny_seeds(5));
  for (int i = 0; i < 5; ++i) {
    const TaskCandidate t{"p" + std::to_string(i), "promoted task " + std::to_string(i), FeasibilityLabel::Feasible, 1,
                          TaskSource::Generated, 0};
    pool.promote(t, unanimous(FeasibilityLabel::Feasible), 7.0 / 8.0);
  }
  ASSERT_EQ(pool.eligible_count(FeasibilityLabel::Feasible), 10u);

  std::map<std::string, int> hits;
  std::mt19937_64 rng(77);
  constexpr int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    for (const auto& t : pool.select(FeasibilityLabel::Feasible, 3, rng)) ++hits[t];
  }
  ASSERT_EQ(hits.size(), 10u);
  for (const auto& [text, n] : hits) {
    // Expected 300 per text; binomial sd is about 14.5.
    EXPECT_NEAR(n, 300, 60) << text;
  }
}

TEST(FewShotPool, RejectsUnpromotable) {
  FewShotPool pool(tiny_seeds(3));
  const TaskCandidate t{"p", "x task text", FeasibilityLabel::Feasible, 1, TaskSource::Generated, 0};
  EXPECT_THROW(pool.promote(t, unanimous(FeasibilityLabel::Infeasible), 7.0 / 8.0), ContractViolation);
}

TEST(SeedSet, ShippedSetLoads) {
  const auto seeds = load_seed_set(kt::seeds_path());
  EXPECT_EQ(seeds.size(), 100u);
  kt::TempDir tmp;
  save_seed_set(seeds, tmp / "s.jsonl");
  EXPECT_EQ(load_seed_set(tmp / "s.jsonl"), seeds);
}

TEST(SeedSet, MismatchedVerificationRejected) {
  kt::TempDir tmp;
  kt::write_text(tmp / "bad.jsonl",
                      R"({"text":"x","class":"feasible","verification":"verified_infeasibility_explanation"})"
                      "\n");
  EXPECT_THROW(load_seed_set(tmp / "bad.jsonl"), DatasetError);
}

TEST(Generation, StopsAtTarget) {
  RunConfig cfg;
  cfg.introspection_runs_per_phase = 12;
  cfg.candidate_target = 55;
  const auto templates = TemplateSet::load(kt::templates_dir());
  const FewShotPool pool(tiny_seeds(4));
  ListingBackend backend(5);
  const auto out = generate_candidates(FeasibilityLabel::Infeasible, cfg, templates, pool, backend, 2, 0);
  EXPECT_EQ(out.candidates.size(), 55u);
  EXPECT_EQ(out.runs_issued, 11);
  EXPECT_EQ(out.candidates.front().id, "it2-i-000");
  EXPECT_EQ(out.candidates.back().id, "it2-i-054");
  for (const auto& c : out.candidates) {
    EXPECT_EQ(c.intended_class, FeasibilityLabel::Infeasible);
    EXPECT_EQ(c.iteration, 2);
  }
}

TEST(Generation, TruncatesLastRun) {
  RunConfig cfg;
  cfg.introspection_runs_per_phase = 12;
  cfg.candidate_target = 7;
  const auto templates = TemplateSet::load(kt::templates_dir());
  const FewShotPool pool(tiny_seeds(4));
  ListingBackend backend(5);
  const auto out = generate_candidates(FeasibilityLabel::Feasible, cfg, templates, pool, backend, 0, 0);
  EXPECT_EQ(out.candidates.size(), 7u);
  EXPECT_EQ(out.runs_issued, 2);
}

TEST(Generation, NoTasksIsAnError) {
  RunConfig cfg;
  cfg.introspection_runs_per_phase = 3;
  const auto templates = TemplateSet::load(kt::templates_dir());
  const FewShotPool pool(tiny_seeds(4));
  MockScript prose;
  prose.default_behavior = MockScript::Default::RoundRobin;
  prose.round_robin = {"I would rather not list anything."};
  MockBackend backend(prose);
  EXPECT_THROW(generate_candidates(FeasibilityLabel::Feasible, cfg, templates, pool, backend, 0, 0),
               EmptyGenerationError);
}

TEST(SeedWorkflow, ValidationPrompts) {
  const auto templates = TemplateSet::load(kt::templates_dir());
  const auto f = build_seed_validation_prompts(templates, {"s1", "Sort these numbers", FeasibilityLabel::Feasible});
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0].prompt, f[1].prompt);
  EXPECT_EQ(f[1].prompt, f[2].prompt);
  EXPECT_DOUBLE_EQ(f[0].temperature, 0.0);
  const auto i = build_seed_validation_prompts(templates, {"s2", "Smell this rose", FeasibilityLabel::Infeasible});
  ASSERT_EQ(i.size(), 1u);
  EXPECT_NE(i[0].prompt.find("Smell this rose"), std::string::npos);
}

TEST(SeedWorkflow, Ingest) {
  ReviewedSeed r{{"s1", "Sort these numbers", FeasibilityLabel::Feasible}, {"1 2 3", "1 2 3", "1 2 3"}, "consistent",
                 "ok"};
  const auto s = ingest_seed_verdict(r);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->verification, SeedVerification::ConsistentSolutions);
  EXPECT_EQ(s->verifier_note, "ok");

  r.verdict = "inconsistent";
  EXPECT_FALSE(ingest_seed_verdict(r));
  r.verdict = "maybe";
  EXPECT_THROW(ingest_seed_verdict(r), DatasetError);
}
