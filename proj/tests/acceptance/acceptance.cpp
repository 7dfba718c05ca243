// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "knowrl/consensus.hpp"
#include "knowrl/evaluation.hpp"
#include "knowrl/orchestrator.hpp"
#include "knowrl/text_filters.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace knowrl;
using knowrl::testing::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

// ---------------------------------------------------------------- 1

Outcome consensus_oracle() {
  constexpr int k = 8;
  const auto start = std::chrono::steady_clock::now();
  int cases = 0;
  for (int code = 0; code < 6561; ++code) {
    std::vector<Verdict> votes;
    std::vector<JudgmentSample> samples;
    for (int i = 0, c = code; i < k; ++i, c /= 3) {
      const auto v = static_cast<Verdict>(c % 3);
      votes.push_back(v);
      samples.push_back({i, v, "", ""});
    }
    const oracle::Tally want = oracle::tally(votes);
    const ConsensusResult got = compute_consensus("t", samples, k);
    const bool majority_ok = want.has_majority ? (got.majority && *got.majority == want.majority) : !got.majority;
    if (got.feasible_count != want.feasible || got.infeasible_count != want.infeasible ||
        got.unparsable_count != want.unparsable || got.agreement_count != want.agreement ||
        got.reward != want.reward || got.tied != want.tied || !majority_ok || got.k != k) {
      return fail("mismatch at assignment " + std::to_string(code));
    }
    ++cases;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs >= 1.0) return fail("took " + std::to_string(secs) + " s");
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d assignments exact in %.3f s", cases, secs);
  return {true, buf};
}

// ---------------------------------------------------------------- 2

bool rouge_matches(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const oracle::Rouge want = oracle::rouge_l(a, b);
  const RougeLScore got = rouge_l(a, b);
  return std::fabs(got.f_score - want.f) <= 1e-9 && std::fabs(got.precision - want.p) <= 1e-9 &&
         std::fabs(got.recall - want.r) <= 1e-9;
}

Outcome rouge_oracle() {
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  std::vector<std::vector<std::string>> seqs{{}};
  for (std::size_t begin = 0, len = 1; len <= 6; ++len) {
    const std::size_t end = seqs.size();
    for (std::size_t i = begin; i < end; ++i) {
      for (const auto& tok : alphabet) {
        auto s = seqs[i];
        s.push_back(tok);
        seqs.push_back(std::move(s));
      }
    }
    begin = end;
  }
  long long pairs = 0;
  for (const auto& a : seqs) {
    for (const auto& b : seqs) {
      if (!rouge_matches(a, b)) return fail("exhaustive pair mismatch after " + std::to_string(pairs));
      ++pairs;
    }
  }
  std::mt19937_64 rng(20240917);
  const std::vector<std::string> vocab = {"the", "cat", "sat", "on", "a", "mat", "dog", "ran"};
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::string> a(rng() % 41), b(rng() % 41);
    for (auto& t : a) t = vocab[rng() % vocab.size()];
    for (auto& t : b) t = vocab[rng() % vocab.size()];
    if (!rouge_matches(a, b)) return fail("random pair " + std::to_string(i) + " mismatch");
  }
  return {true, std::to_string(pairs) + " exhaustive pairs + 10000 random pairs within 1e-9"};
}

// ---------------------------------------------------------------- 3

Outcome filter_fixture() {
  const std::vector<std::string> texts = {
      "Summarise the causes of the Great Depression in four sentences.",
      "Explain how a hash table resolves collisions with chaining.",
      "Write a limerick about a forgetful astronaut.",
      "Create an image of a sunset over a mountain lake.",  // keyword
      "Translate the phrase 'good morning, friends' into Italian.",
      "List three differences between alligators and crocodiles.",
      "Explain how a hash table resolves collisions with chaining.",  // duplicate
      "Describe the rules of cricket to an American baseball fan.",
      "Record a video tutorial on tying a bowline knot.",  // keyword
      "Convert 72 degrees Fahrenheit to Celsius and show the working.",
      "Outline the plot of Homer's Odyssey in chronological order.",
      "Compose a short audio jingle for a bakery.",  // keyword
      "Suggest a weekly vegetarian meal plan for a student budget.",
      "Write a limerick about a forgetful astronaut.",  // duplicate
      "Qzv blorft xanthic prumble wocket snee glib.",  // high perplexity
      "Define photosynthesis for a nine-year-old reader.",
      "Proofread this sentence: their going too the park tomorow.",
      "Give two arguments for and against a four-day work week.",
      "Explain why the Moon shows phases to observers on Earth.",
      "Draft a polite reminder email about an overdue invoice.",
  };
  std::vector<TaskCandidate> tasks;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    tasks.push_back({"t" + std::to_string(i), texts[i], FeasibilityLabel::Feasible, 1, TaskSource::Generated, 0});
  }
  MockScript script;
  script.constant_logprob = -1.0;
  script.scores[texts[14]] = std::vector<double>(7, -9.0);
  MockBackend backend(script);
  RunConfig cfg;
  std::vector<TaskCandidate> retained;
  const FilterOutcome out = apply_filter_pipeline(tasks, retained, cfg, backend);

  const std::map<std::size_t, FilterStage> expected = {{3, FilterStage::Keyword},    {8, FilterStage::Keyword},
                                                       {11, FilterStage::Keyword},   {6, FilterStage::Redundancy},
                                                       {13, FilterStage::Redundancy}, {14, FilterStage::Perplexity}};
  int rejected = 0;
  for (std::size_t i = 0; i < out.verdicts.size(); ++i) {
    const auto& v = out.verdicts[i];
    const auto it = expected.find(i);
    if (it == expected.end()) {
      if (!v.accepted) return fail("t" + std::to_string(i) + " wrongly rejected: " + v.detail);
      continue;
    }
    if (v.accepted || !v.rejected_by || *v.rejected_by != it->second) {
      return fail("t" + std::to_string(i) + " expected rejection by " + std::string(to_string(it->second)));
    }
    ++rejected;
  }
  if (rejected != 6 || out.accepted.size() != 14) return fail("wrong totals");
  return {true, "6/20 rejected: 3 keyword, 2 redundancy, 1 perplexity"};
}

// ---------------------------------------------------------------- 4

struct RunArtifacts {
  std::vector<std::string> batches;
  std::string manifest;
  std::string eval0;
};

RunArtifacts collect(const RunDirectory& dir, int iterations) {
  RunArtifacts a;
  for (int n = 1; n <= iterations; ++n) a.batches.push_back(testing::slurp(dir.iteration_dir(n) / "batch.jsonl"));
  a.manifest = testing::slurp(dir.manifest_path());
  a.eval0 = testing::slurp(dir.eval_dir() / "0.json");
  return a;
}

RunDirectory fresh_run(const std::filesystem::path& root, const RunConfig& cfg) {
  return init_run(root, cfg, "dry-run", testing::seeds_path(), testing::templates_dir());
}

RunOptions frozen() {
  RunOptions o;
  o.clock = frozen_clock(1700000000);
  return o;
}

Outcome dry_run_determinism() {
  RunConfig cfg = testing::small_config();
  cfg.total_iterations = 3;
  TempDir tmp;

  std::vector<RunArtifacts> runs;
  for (const char* name : {"a", "b"}) {
    const RunDirectory dir = fresh_run(tmp / name, cfg);
    MockBackend backend(testing::loop_script());
    const RunManifest m = run_loop(dir, backend, frozen());
    if (m.completed_iterations() != 3) return fail("run did not finish");
    for (const auto& rec : m.iterations) {
      if (rec.trainer_status != TrainerStatus::Emitted) return fail("trainer_status is not emitted");
    }
    runs.push_back(collect(dir, 3));
  }
  if (runs[0].batches != runs[1].batches) return fail("batch.jsonl differs between identical runs");
  if (runs[0].manifest != runs[1].manifest) return fail("manifest.json differs between identical runs");

  // Killed right after iteration 2 was committed, then resumed.
  {
    const RunDirectory dir = fresh_run(tmp / "killed", cfg);
    MockBackend backend(testing::loop_script());
    RunOptions opts = frozen();
    opts.on_event = [](const LoopEvent& e) {
      if (e.kind == LoopEvent::Kind::IterationCommitted && e.iteration == 2) throw std::runtime_error("kill");
    };
    try {
      run_loop(dir, backend, opts);
      return fail("simulated kill did not interrupt the run");
    } catch (const std::runtime_error&) {
    }
    MockBackend fresh(testing::loop_script());
    run_loop(dir, fresh, frozen());
    const RunArtifacts r = collect(dir, 3);
    if (r.batches != runs[0].batches || r.manifest != runs[0].manifest || r.eval0 != runs[0].eval0) {
      return fail("resume after kill at iteration 2 diverged");
    }
  }
  // Backend dies in the middle of iteration 2, then resumed.
  {
    const RunDirectory dir = fresh_run(tmp / "crashed", cfg);
    MockBackend inner(testing::loop_script());
    RunOptions opts = frozen();
    opts.stop_after = 1;
    run_loop(dir, inner, opts);
    testing::FailingBackend flaky(inner, 10);
    try {
      run_loop(dir, flaky, frozen());
      return fail("injected failure did not abort iteration 2");
    } catch (const TransportError&) {
    }
    if (!std::filesystem::exists(dir.root() / "iter_2.quarantine-1") || std::filesystem::exists(dir.iteration_dir(2))) {
      return fail("aborted iteration was not quarantined");
    }
    MockBackend fresh(testing::loop_script());
    run_loop(dir, fresh, frozen());
    const RunArtifacts r = collect(dir, 3);
    if (r.batches != runs[0].batches || r.manifest != runs[0].manifest) {
      return fail("resume after mid-iteration failure diverged");
    }
  }
  return {true, "3 iterations byte-identical across runs; resume after kill at iteration 2 identical"};
}

// ---------------------------------------------------------------- 5

Outcome evaluation_arithmetic() {
  const ExtrinsicReport e = make_extrinsic_report(0, Confusion{3, 1, 2, 4});
  if (std::fabs(e.precision - 75.0) > 0.01 || std::fabs(e.recall - 60.0) > 0.01 || std::fabs(e.f1 - 66.67) > 0.01) {
    return fail("P/R/F1 = " + std::to_string(e.precision) + "/" + std::to_string(e.recall) + "/" +
                std::to_string(e.f1));
  }

  // Stored report sequences, read back and annotated.
  std::vector<EvalReport> stored(2);
  stored[0].iteration = 0;
  stored[1].iteration = 5;
  stored[0].intrinsic = IntrinsicReport{};
  stored[0].intrinsic->accuracy = 33.56;
  stored[1].intrinsic = IntrinsicReport{};
  stored[1].intrinsic->accuracy = 36.78;
  stored[0].extrinsic = ExtrinsicReport{};
  stored[0].extrinsic->f1 = 56.12;
  stored[1].extrinsic = ExtrinsicReport{};
  stored[1].extrinsic->f1 = 58.01;
  std::vector<EvalReport> reports = parse_eval_reports(dump_eval_reports(stored));
  assign_deltas(reports);

  if (reports[0].intrinsic->delta || reports[0].extrinsic->delta) return fail("first row has a delta");
  const double d_acc = *reports[1].intrinsic->delta;
  const double d_f1 = *reports[1].extrinsic->delta;
  if (std::fabs(d_acc - 3.22) > 0.005 || std::fabs(d_f1 - 1.89) > 0.005) return fail("deltas off");
  if (format_delta(reports[1].intrinsic->delta) != "3.22 ↑" || format_delta(reports[1].extrinsic->delta) != "1.89 ↑" ||
      format_delta(reports[0].intrinsic->delta) != "-") {
    return fail("delta formatting");
  }
  return {true, "P=75.00 R=60.00 F1=66.67; accuracy delta 3.22, F1 delta 1.89"};
}

// ---------------------------------------------------------------- 6

Outcome rising_agreement() {
  RunConfig cfg = testing::small_config();
  cfg.backend.kind = BackendKind::Synthetic;
  cfg.backend.synthetic_base_agreement = 40.0;
  cfg.backend.synthetic_agreement_step = 5.0;
  cfg.total_iterations = 10;
  cfg.eval_every = 5;
  cfg.intrinsic_trials_per_class = 250;
  cfg.backend.max_in_flight = 8;
  TempDir tmp;
  const RunDirectory dir = fresh_run(tmp / "rising", cfg);
  auto backend = make_backend(cfg);
  const RunManifest m = run_loop(dir, *backend, frozen());

  std::vector<double> acc;
  for (const auto& e : m.evals) {
    acc.push_back(parse_eval_report(testing::slurp(dir.root() / e.json_path)).intrinsic->accuracy);
  }
  const std::vector<double> scripted = {40.0, 65.0, 90.0};
  if (acc != scripted) {
    std::ostringstream os;
    for (double a : acc) os << a << " ";
    return fail("accuracy at iterations 0/5/10 = " + os.str());
  }
  return {true, "accuracy 40.00 -> 65.00 -> 90.00 at iterations 0/5/10, exactly as scripted"};
}

// ---------------------------------------------------------------- 7

Outcome full_scale_documented() {
  const std::string readme = testing::slurp(testing::source_dir() / "README.md");
  for (const char* needle : {"## Reproducing at full scale", "not reproducible", "5e-7", "Reinforce++"}) {
    if (readme.find(needle) == std::string::npos) return fail(std::string("README lacks '") + needle + "'");
  }
  return {true, "absolute full-scale numbers are out of reach offline; recipe documented in README"};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"consensus reward matches brute-force tally on all 3^8 assignments", consensus_oracle},
      {"ROUGE-L matches quadratic DP oracle", rouge_oracle},
      {"filter pipeline rejects exactly the 6 planted tasks", filter_fixture},
      {"deterministic 3-iteration dry run and resume equivalence", dry_run_determinism},
      {"evaluation arithmetic and delta column", evaluation_arithmetic},
      {"intrinsic accuracy tracks scripted +5 pp/iteration agreement", rising_agreement},
      {"full-scale results documented as not reproducible at desk scale", full_scale_documented},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  AC" << (i + 1) << "  " << criteria[i].first << "  (" << o.detail
              << ")\n";
    if (!o.pass) ++failed;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " acceptance criteria passed\n";
  return failed == 0 ? 0 : 1;
}
