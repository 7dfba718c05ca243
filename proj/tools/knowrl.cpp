// knowrl: command-line driver for runs, evaluation and seed-set tooling.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "knowrl/config.hpp"
#include "knowrl/error.hpp"
#include "knowrl/evaluation.hpp"
#include "knowrl/inference.hpp"
#include "knowrl/introspection.hpp"
#include "knowrl/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace knowrl;
using json = nlohmann::ordered_json;

namespace {

fs::path relative_to(const fs::path& base_file, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_file.parent_path() / path;
}


Clock clock_for(const RunConfig& cfg) {
  return cfg.backend.kind == BackendKind::Http ? system_clock() : frozen_clock();
}

int cmd_init(const fs::path& config_path, const fs::path& run_dir, std::string run_id) {
  RunConfig cfg = load_config(config_path);
  const fs::path seeds = relative_to(config_path, cfg.seed_path);
  const fs::path templates = relative_to(config_path, cfg.templates_dir);
  if (!cfg.extrinsic_dataset.empty()) cfg.extrinsic_dataset = relative_to(config_path, cfg.extrinsic_dataset).string();
  if (!cfg.backend.mock_script.empty()) {
    cfg.backend.mock_script = relative_to(config_path, cfg.backend.mock_script).string();
  }
  if (run_id.empty()) run_id = run_dir.filename().string();
  init_run(run_dir, cfg, run_id, seeds, templates);
  std::cout << "initialised run '" << run_id << "' in " << run_dir.string() << "\n";
  return 0;
}

int cmd_run(const fs::path& run_dir, std::optional<int> stop_after, bool resume_only) {
  const RunDirectory dir(run_dir);
  const RunManifest before = dir.load_manifest();
  if (resume_only && before.completed_iterations() == 0 && before.evals.empty()) {
    spdlog::info("nothing to resume yet; starting from iteration 1");
  }
  const RunConfig cfg = load_run_config(dir, before);
  auto backend = make_backend(cfg);
  RunOptions opts;
  opts.clock = clock_for(cfg);
  opts.stop_after = stop_after;
  const RunManifest m = run_loop(dir, *backend, opts);
  std::cout << "run '" << m.run_id << "': " << m.completed_iterations() << "/" << cfg.total_iterations
            << " iterations complete, " << m.evals.size() << " evaluation reports\n";
  if (!m.evals.empty()) std::cout << read_file(dir.root() / m.evals.back().text_path);
  return 0;
}

int cmd_eval(const fs::path& run_dir, int iteration) {
  const RunDirectory dir(run_dir);
  RunLock lock(dir.root());
  RunManifest m = dir.load_manifest();
  if (iteration < 0 || iteration > m.completed_iterations()) {
    throw ContractViolation("iteration " + std::to_string(iteration) + " is not complete (run has " +
                            std::to_string(m.completed_iterations()) + ")");
  }
  const RunConfig cfg = load_run_config(dir, m);
  const TemplateSet templates = TemplateSet::load(cfg.templates_dir);
  const LoopState state = load_state(dir, iteration, cfg);
  auto backend = make_backend(cfg);
  backend->set_policy_iteration(iteration);
  (void)evaluate_iteration(dir, iteration, cfg, templates, state.pool, *backend);
  if (!m.has_eval(iteration)) {
    const std::string stem = std::to_string(iteration);
    m.evals.push_back({iteration, "eval/" + stem + ".json", "eval/" + stem + ".txt"});
    dir.save_manifest(m);
  }
  std::cout << read_file(dir.eval_dir() / (std::to_string(iteration) + ".txt"));
  return 0;
}

int cmd_inspect(const fs::path& run_dir, int iteration) {
  const RunDirectory dir(run_dir);
  (void)dir.load_manifest();  // validates
  const json doc = json::parse(read_file(dir.manifest_path()));
  const auto& iterations = doc.at("iterations");
  if (iteration < 1 || iteration > static_cast<int>(iterations.size())) {
    throw ContractViolation("iteration " + std::to_string(iteration) + " is not recorded in the manifest");
  }
  std::cout << iterations[static_cast<std::size_t>(iteration - 1)].dump(2) << "\n";
  return 0;
}

// Input: JSONL of {text, class}. Output: a review package, one line per
// candidate with the validation prompts and the model's outputs; the reviewer
// fills in "verdict" and "verifier_note" before `seed ingest`.
int cmd_seed_build(const fs::path& config_path, const fs::path& candidates_path, const fs::path& out_path) {
  RunConfig cfg = load_config(config_path);
  apply_env_overrides(cfg);
  if (!cfg.backend.mock_script.empty()) {
    cfg.backend.mock_script = relative_to(config_path, cfg.backend.mock_script).string();
  }
  const TemplateSet templates = TemplateSet::load(relative_to(config_path, cfg.templates_dir));
  auto backend = make_backend(cfg);

  std::ifstream in(candidates_path);
  if (!in) throw DatasetError("cannot read " + candidates_path.string() + " (expected JSONL of {text, class})");
  std::string out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    SeedCandidate c{"cand-" + std::to_string(n), j.at("text").get<std::string>(),
                    parse_label(j.at("class").get<std::string>())};
    json prompts = json::array();
    json outputs = json::array();
    std::uint64_t ordinal = 0;
    for (const auto& vp : build_seed_validation_prompts(templates, c)) {
      ChatRequest req;
      req.messages = {{Role::User, vp.prompt}};
      req.temperature = vp.temperature;
      req.max_tokens = cfg.backend.max_tokens;
      req.trace = {"seed.validate." + std::string(to_string(c.label)), ordinal++, 0};
      const ChatResponse resp = backend->complete(req);
      prompts.push_back(vp.prompt);
      outputs.push_back(resp.completions.at(0));
    }
    const json row = {{"id", c.id},       {"text", c.text},       {"class", to_string(c.label)},
                      {"prompts", prompts}, {"outputs", outputs}, {"verdict", ""},
                      {"verifier_note", ""}};
    out += row.dump() + "\n";
    ++n;
  }
  write_file_atomic(out_path, out);
  std::cout << "wrote " << n << " candidates for review to " << out_path.string() << "\n";
  return 0;
}

int cmd_seed_ingest(const fs::path& package_path, const fs::path& out_path) {
  std::ifstream in(package_path);
  if (!in) throw DatasetError("cannot read review package " + package_path.string());
  std::vector<SeedExample> seeds;
  std::string line;
  int rejected = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ReviewedSeed r;
      r.candidate = {j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                     parse_label(j.at("class").get<std::string>())};
      r.outputs = j.at("outputs").get<std::vector<std::string>>();
      r.verdict = j.at("verdict").get<std::string>();
      r.verifier_note = j.value("verifier_note", "");
      if (auto s = ingest_seed_verdict(r)) {
        seeds.push_back(std::move(*s));
      } else {
        ++rejected;
      }
    } catch (const json::exception& e) {
      throw DatasetError(package_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError(package_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  save_seed_set(seeds, out_path);
  std::cout << "accepted " << seeds.size() << ", rejected " << rejected << "; wrote " << out_path.string() << "\n";
  return 0;
}

int cmd_convert(const fs::path& in_path, const fs::path& out_path) {
  const auto items = convert_selfaware(read_file(in_path));
  json arr = json::array();
  for (const auto& it : items) {
    json row = {{"question", it.question}, {"answerable", it.answerable}};
    if (it.answer) row["answer"] = *it.answer;
    arr.push_back(std::move(row));
  }
  write_file_atomic(out_path, arr.dump(1) + "\n");
  std::cout << "converted " << items.size() << " items to " << out_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowrl: self-knowledge reinforcement loop driver"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  std::string config_path, run_dir, run_id;
  std::optional<int> stop_after;
  int iteration = 0;

  auto* init = app.add_subcommand("init", "Scaffold a run directory from a config file");
  init->add_option("--config", config_path, "TOML config")->required()->check(CLI::ExistingFile);
  init->add_option("--run-dir", run_dir, "Run directory to create")->required();
  init->add_option("--run-id", run_id, "Run identifier (defaults to the directory name)");

  auto* run = app.add_subcommand("run", "Run (or continue) the loop until total_iterations");
  run->add_option("--run-dir", run_dir)->required()->check(CLI::ExistingDirectory);
  run->add_option("--stop-after", stop_after, "Stop once this many iterations are complete");

  auto* resume = app.add_subcommand("resume", "Resume an interrupted run from its last complete iteration");
  resume->add_option("--run-dir", run_dir)->required()->check(CLI::ExistingDirectory);
  resume->add_option("--stop-after", stop_after, "Stop once this many iterations are complete");

  auto* eval = app.add_subcommand("eval", "Evaluate the state after iteration N");
  eval->add_option("--run-dir", run_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--iter", iteration)->required();

  auto* inspect = app.add_subcommand("inspect", "Print the record of iteration N");
  inspect->add_option("--run-dir", run_dir)->required()->check(CLI::ExistingDirectory);
  inspect->add_option("--iter", iteration)->required();

  auto* seed = app.add_subcommand("seed", "Seed-set construction workflow");
  seed->require_subcommand(1);
  std::string candidates_path, out_path, package_path;
  auto* build = seed->add_subcommand("build", "Query the model for validation outputs of seed candidates");
  build->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  build->add_option("--candidates", candidates_path, "JSONL of {text, class}")->required()->check(CLI::ExistingFile);
  build->add_option("--out", out_path, "Review package (JSONL)")->required();
  auto* ingest = seed->add_subcommand("ingest", "Turn a reviewed package into a seed set");
  ingest->add_option("--package", package_path)->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out_path, "Seed set (JSONL)")->required();

  std::string in_path;
  auto* convert = app.add_subcommand("convert-selfaware", "Normalise the public SelfAware release");
  convert->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  convert->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_default_logger(spdlog::default_logger());

  try {
    if (*init) return cmd_init(config_path, run_dir, run_id.empty() ? std::string() : run_id);
    if (*run) return cmd_run(run_dir, stop_after, false);
    if (*resume) return cmd_run(run_dir, stop_after, true);
    if (*eval) return cmd_eval(run_dir, iteration);
    if (*inspect) return cmd_inspect(run_dir, iteration);
    if (*build) return cmd_seed_build(config_path, candidates_path, out_path);
    if (*ingest) return cmd_seed_ingest(package_path, out_path);
    if (*convert) return cmd_convert(in_path, out_path);
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const knowrl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
