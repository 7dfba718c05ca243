#include "knowrl/orchestrator.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "knowrl/consensus.hpp"
#include "knowrl/error.hpp"
#include "parallel.hpp"

namespace knowrl {
namespace fs = std::filesystem;
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kAnalysisSalt = 0xa4a1;

const char* const kRecovery =
    "To recover: restore manifest.json from a backup, or move this run directory aside and start a new run "
    "with `knowrl init`. Completed iterations stay readable under iter_<n>/.";

json to_json(const TaskCandidate& t) {
  return {{"id", t.id},
          {"text", t.text},
          {"intended_class", to_string(t.intended_class)},
          {"iteration", t.iteration},
          {"source", to_string(t.source)},
          {"created_at", t.created_at}};
}

TaskCandidate candidate_from_json(const json& j) {
  return {j.at("id").get<std::string>(),
          j.at("text").get<std::string>(),
          parse_label(j.at("intended_class").get<std::string>()),
          j.at("iteration").get<int>(),
          parse_source(j.at("source").get<std::string>()),
          j.at("created_at").get<std::int64_t>()};
}

json optional_label(const std::optional<FeasibilityLabel>& l) {
  return l ? json(std::string(to_string(*l))) : json(nullptr);
}

std::optional<FeasibilityLabel> read_optional_label(const json& j) {
  if (j.is_null()) return std::nullopt;
  return parse_label(j.get<std::string>());
}

json to_json(const ConsensusResult& c) {
  return {{"task_id", c.task_id},
          {"k", c.k},
          {"feasible", c.feasible_count},
          {"infeasible", c.infeasible_count},
          {"unparsable", c.unparsable_count},
          {"majority", optional_label(c.majority)},
          {"agreement_count", c.agreement_count},
          {"reward", c.reward},
          {"tied", c.tied}};
}

ConsensusResult consensus_from_json(const json& j) {
  ConsensusResult c;
  c.task_id = j.at("task_id").get<std::string>();
  c.k = j.at("k").get<int>();
  c.feasible_count = j.at("feasible").get<int>();
  c.infeasible_count = j.at("infeasible").get<int>();
  c.unparsable_count = j.at("unparsable").get<int>();
  c.majority = read_optional_label(j.at("majority"));
  c.agreement_count = j.at("agreement_count").get<int>();
  c.reward = j.at("reward").get<double>();
  c.tied = j.at("tied").get<bool>();
  return c;
}

json to_json(const FilterVerdict& v) {
  return {{"task_id", v.task_id},
          {"accepted", v.accepted},
          {"rejected_by", v.rejected_by ? json(std::string(to_string(*v.rejected_by))) : json(nullptr)},
          {"detail", v.detail}};
}

json to_json(const PhaseSummary& p) {
  return {{"class", to_string(p.label)},
          {"generation_runs", p.generation_runs},
          {"candidates", p.candidates},
          {"accepted", p.accepted},
          {"rejected",
           {{"keyword", p.rejected_keyword}, {"redundancy", p.rejected_redundancy}, {"perplexity", p.rejected_perplexity}}},
          {"consensus_histogram", p.consensus_histogram},
          {"tied", p.tied},
          {"promoted", p.promoted},
          {"mean_reward", p.mean_reward}};
}

PhaseSummary phase_from_json(const json& j) {
  PhaseSummary p;
  p.label = parse_label(j.at("class").get<std::string>());
  p.generation_runs = j.at("generation_runs").get<int>();
  p.candidates = j.at("candidates").get<int>();
  p.accepted = j.at("accepted").get<int>();
  const json& r = j.at("rejected");
  p.rejected_keyword = r.at("keyword").get<int>();
  p.rejected_redundancy = r.at("redundancy").get<int>();
  p.rejected_perplexity = r.at("perplexity").get<int>();
  p.consensus_histogram = j.at("consensus_histogram").get<std::vector<int>>();
  p.tied = j.at("tied").get<int>();
  p.promoted = j.at("promoted").get<int>();
  p.mean_reward = j.at("mean_reward").get<double>();
  return p;
}

json to_json(const IterationRecord& r) {
  json phases = json::array();
  for (const auto& p : r.phases) phases.push_back(to_json(p));
  return {{"index", r.index},
          {"started_at", r.started_at},
          {"wall_clock_s", r.wall_clock_s},
          {"batch_path", r.batch_path},
          {"batch_records", r.batch_records},
          {"trainer_status", to_string(r.trainer_status)},
          {"phases", std::move(phases)}};
}

IterationRecord record_from_json(const json& j) {
  IterationRecord r;
  r.index = j.at("index").get<int>();
  r.started_at = j.at("started_at").get<std::int64_t>();
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  r.batch_path = j.at("batch_path").get<std::string>();
  r.batch_records = j.at("batch_records").get<int>();
  r.trainer_status = parse_trainer_status(j.at("trainer_status").get<std::string>());
  for (const auto& p : j.at("phases")) r.phases.push_back(phase_from_json(p));
  return r;
}

void append_line(std::string& buf, const json& j) {
  buf += j.dump();
  buf += '\n';
}

fs::path resolve(const RunDirectory& dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::absolute(dir.root() / path);
}

fs::path quarantine(const fs::path& path) {
  for (int m = 1;; ++m) {
    fs::path target = path;
    std::string name = path.filename().string();
    if (name.ends_with(".partial")) name.resize(name.size() - 8);
    target.replace_filename(name + ".quarantine-" + std::to_string(m));
    if (!fs::exists(target)) {
      fs::rename(path, target);
      spdlog::warn("quarantined {} -> {}", path.string(), target.filename().string());
      return target;
    }
  }
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

TrainerStatus invoke_trainer(const RunDirectory& dir, const RunConfig& cfg, int index, const fs::path& batch) {
  const fs::path ckpt_in = dir.root() / "checkpoints" / (index == 1 ? "base" : "iter_" + std::to_string(index - 1));
  const fs::path ckpt_out = dir.root() / "checkpoints" / ("iter_" + std::to_string(index));
  fs::create_directories(ckpt_out.parent_path());
  std::string cmd = cfg.trainer_hook;
  const bool templated = cmd.find('{') != std::string::npos;
  replace_all(cmd, "{batch}", shell_quote(batch.string()));
  replace_all(cmd, "{checkpoint_in}", shell_quote(ckpt_in.string()));
  replace_all(cmd, "{checkpoint_out}", shell_quote(ckpt_out.string()));
  if (!templated) {
    cmd += " --batch " + shell_quote(batch.string()) + " --in " + shell_quote(ckpt_in.string()) + " --out " +
           shell_quote(ckpt_out.string());
  }
  spdlog::info("iteration {}: trainer hook: {}", index, cmd);
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw Error("trainer hook exited with status " + std::to_string(rc) + ": " + cmd);
  return TrainerStatus::Trained;
}

std::string backend_descriptor(const RunConfig& cfg) {
  switch (cfg.backend.kind) {
    case BackendKind::Http:
      return "http:" + cfg.backend.base_url + "#" + cfg.backend.model;
    case BackendKind::Mock:
      return "mock:" + cfg.backend.mock_script;
    case BackendKind::Synthetic:
      return "synthetic";
  }
  return "synthetic";
}

bool eval_due(const RunConfig& cfg, int n) { return n == 0 || n % cfg.eval_every == 0; }

}  // namespace

// ---------------------------------------------------------------- enums

std::string_view to_string(TrainerStatus status) {
  switch (status) {
    case TrainerStatus::Emitted:
      return "emitted";
    case TrainerStatus::Trained:
      return "trained";
    case TrainerStatus::Skipped:
      return "skipped";
  }
  return "emitted";
}

TrainerStatus parse_trainer_status(std::string_view text) {
  if (text == "emitted") return TrainerStatus::Emitted;
  if (text == "trained") return TrainerStatus::Trained;
  if (text == "skipped") return TrainerStatus::Skipped;
  throw ContractViolation("unknown trainer status '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- manifest

bool RunManifest::has_eval(int iteration) const {
  return std::any_of(evals.begin(), evals.end(), [&](const EvalEntry& e) { return e.iteration == iteration; });
}

std::string dump_manifest(const RunManifest& m) {
  json iterations = json::array();
  for (const auto& r : m.iterations) iterations.push_back(to_json(r));
  json evals = json::array();
  for (const auto& e : m.evals) {
    evals.push_back({{"iteration", e.iteration}, {"json", e.json_path}, {"text", e.text_path}});
  }
  const json doc = {{"schema_version", m.schema_version},
                    {"run_id", m.run_id},
                    {"rng_seed", m.rng_seed},
                    {"backend", m.backend},
                    {"config_toml", m.config_toml},
                    {"iterations", std::move(iterations)},
                    {"evals", std::move(evals)}};
  return doc.dump(2) + "\n";
}

RunManifest parse_manifest(std::string_view json_text) {
  RunManifest m;
  try {
    const json doc = json::parse(json_text);
    m.schema_version = doc.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
      throw ManifestError("manifest schema_version " + std::to_string(m.schema_version) + " is not supported (expected " +
                          std::to_string(kManifestSchemaVersion) + "). " + kRecovery);
    }
    m.run_id = doc.at("run_id").get<std::string>();
    m.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    m.backend = doc.at("backend").get<std::string>();
    m.config_toml = doc.at("config_toml").get<std::string>();
    for (const auto& r : doc.at("iterations")) m.iterations.push_back(record_from_json(r));
    for (const auto& e : doc.at("evals")) {
      m.evals.push_back({e.at("iteration").get<int>(), e.at("json").get<std::string>(), e.at("text").get<std::string>()});
    }
  } catch (const ManifestError&) {
    throw;
  } catch (const std::exception& e) {
    throw ManifestError(std::string("manifest.json is corrupted: ") + e.what() + ". " + kRecovery);
  }

  for (std::size_t i = 0; i < m.iterations.size(); ++i) {
    const auto& r = m.iterations[i];
    if (r.index != static_cast<int>(i) + 1) {
      throw ManifestError("manifest.json is corrupted: iteration records out of sequence at position " +
                          std::to_string(i) + ". " + kRecovery);
    }
    for (const auto& p : r.phases) {
      if (p.candidates != p.accepted + p.rejected() || p.mean_reward < 0 || p.mean_reward > 1) {
        throw ManifestError("manifest.json is corrupted: counts of iteration " + std::to_string(r.index) +
                            " do not reconcile. " + kRecovery);
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------- batch files

std::string serialize_batch_line(const RewardedRecord& r) {
  const json j = {{"task_id", r.task_id},
                  {"prompt", r.prompt},
                  {"response", r.response},
                  {"reward", r.reward},
                  {"intended_class", to_string(r.intended_class)},
                  {"iteration", r.iteration},
                  {"majority", optional_label(r.majority)},
                  {"agreement_count", r.agreement_count},
                  {"k", r.k}};
  return j.dump();
}

RewardedRecord parse_batch_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    RewardedRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.reward = j.at("reward").get<double>();
    r.intended_class = parse_label(j.at("intended_class").get<std::string>());
    r.iteration = j.at("iteration").get<int>();
    r.majority = read_optional_label(j.at("majority"));
    r.agreement_count = j.at("agreement_count").get<int>();
    r.k = j.at("k").get<int>();
    return r;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("batch line: ") + e.what());
  }
}

void emit_batch(std::span<const RewardedRecord> records, const fs::path& path) {
  if (records.empty()) throw ContractViolation("emit_batch: no records");
  std::string buf;
  for (const auto& r : records) {
    if (r.prompt.empty() || r.response.empty()) {
      throw ContractViolation("emit_batch: record " + r.task_id + " has an empty prompt or response");
    }
    if (!(r.reward >= 0.0 && r.reward <= 1.0)) {
      throw ContractViolation("emit_batch: record " + r.task_id + " has reward outside [0, 1]");
    }
    buf += serialize_batch_line(r);
    buf += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (out) out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (out) out.close();
  if (!out) {
    std::error_code ec;
    fs::remove(path, ec);
    throw IoError("emit_batch: cannot write " + path.string());
  }
}

std::vector<RewardedRecord> read_batch(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read batch " + path.string());
  std::vector<RewardedRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_batch_line(line));
  }
  return out;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- run directory

fs::path RunDirectory::iteration_dir(int n) const { return root_ / ("iter_" + std::to_string(n)); }
fs::path RunDirectory::partial_dir(int n) const { return root_ / ("iter_" + std::to_string(n) + ".partial"); }

RunManifest RunDirectory::load_manifest() const {
  if (!fs::exists(manifest_path())) {
    throw ManifestError("no manifest.json in " + root_.string() + "; run `knowrl init` first");
  }
  return parse_manifest(read_file(manifest_path()));
}

void RunDirectory::save_manifest(const RunManifest& manifest) const {
  write_file_atomic(manifest_path(), dump_manifest(manifest));
}

RunLock::RunLock(const fs::path& run_dir) {
  const fs::path lock = run_dir / ".lock";
  fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open lock file " + lock.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ManifestError("run directory " + run_dir.string() + " is locked by another orchestrator");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

RunDirectory init_run(const fs::path& run_dir, const RunConfig& cfg, std::string run_id, const fs::path& seed_source,
                      const fs::path& templates_source) {
  validate(cfg);
  RunDirectory dir(run_dir);
  if (fs::exists(dir.manifest_path())) {
    throw ManifestError("run directory " + run_dir.string() + " is already initialised");
  }
  fs::create_directories(run_dir);
  fs::create_directories(dir.eval_dir());

  // Validate inputs before copying anything.
  const auto seeds = load_seed_set(seed_source);
  FewShotPool probe(seeds, cfg.promoted_weight);
  (void)TemplateSet::load(templates_source);

  RunConfig snapshot = cfg;
  fs::copy_file(seed_source, dir.seeds_path(), fs::copy_options::overwrite_existing);
  snapshot.seed_path = "seeds.jsonl";
  fs::create_directories(dir.templates_dir());
  for (auto name : {TemplateName::IntrospectFeasible, TemplateName::IntrospectInfeasible, TemplateName::SelfAnalysis,
                    TemplateName::FeasibleValidation, TemplateName::InfeasibleValidation,
                    TemplateName::AnswerabilityIcl}) {
    const auto file = template_file_name(name);
    fs::copy_file(templates_source / file, dir.templates_dir() / file, fs::copy_options::overwrite_existing);
  }
  snapshot.templates_dir = "templates";
  if (!cfg.extrinsic_dataset.empty()) {
    (void)load_benchmark(cfg.extrinsic_dataset);
    fs::copy_file(cfg.extrinsic_dataset, run_dir / "benchmark.json", fs::copy_options::overwrite_existing);
    snapshot.extrinsic_dataset = "benchmark.json";
  }
  if (cfg.backend.kind == BackendKind::Mock) {
    (void)MockScript::load(cfg.backend.mock_script);
    fs::copy_file(cfg.backend.mock_script, run_dir / "mock_script.json", fs::copy_options::overwrite_existing);
    snapshot.backend.mock_script = "mock_script.json";
  }

  const std::string toml = dump_config_toml(snapshot);
  write_file_atomic(dir.config_path(), toml);

  RunManifest m;
  m.run_id = std::move(run_id);
  m.config_toml = toml;
  m.rng_seed = snapshot.rng_seed;
  m.backend = backend_descriptor(snapshot);
  dir.save_manifest(m);
  return dir;
}

// ---------------------------------------------------------------- state

Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

Clock frozen_clock(std::int64_t at) {
  return [at] { return at; };
}

LoopState load_state(const RunDirectory& dir, int completed_iterations, const RunConfig& cfg) {
  auto seeds = load_seed_set(resolve(dir, cfg.seed_path));
  LoopState state;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    state.retained.push_back(
        {"seed-" + std::to_string(i), seeds[i].text, seeds[i].label, 0, TaskSource::Seed, 0});
  }
  state.pool = FewShotPool(std::move(seeds), cfg.promoted_weight);
  if (completed_iterations == 0) return state;

  const fs::path path = dir.iteration_dir(completed_iterations) / "state.json";
  try {
    const json doc = json::parse(read_file(path));
    std::vector<PromotedExample> promoted;
    for (const auto& p : doc.at("promoted")) {
      promoted.push_back({candidate_from_json(p.at("task")), consensus_from_json(p.at("consensus"))});
    }
    state.pool.restore_promoted(std::move(promoted));
    for (const auto& t : doc.at("retained")) state.retained.push_back(candidate_from_json(t));
  } catch (const json::exception& e) {
    throw ManifestError("state of iteration " + std::to_string(completed_iterations) + " (" + path.string() +
                        ") is corrupted: " + e.what() + ". " + kRecovery);
  } catch (const IoError& e) {
    throw ManifestError(std::string(e.what()) + ". " + kRecovery);
  }
  return state;
}

namespace {

std::string dump_state(int index, const LoopState& state) {
  json promoted = json::array();
  for (const auto& p : state.pool.promoted()) {
    promoted.push_back({{"task", to_json(p.task)}, {"consensus", to_json(p.consensus)}});
  }
  json retained = json::array();
  for (const auto& t : state.retained) {
    if (t.source == TaskSource::Generated) retained.push_back(to_json(t));
  }
  const json doc = {{"iteration", index}, {"promoted", std::move(promoted)}, {"retained", std::move(retained)}};
  return doc.dump(1) + "\n";
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------- iteration

IterationRecord run_iteration(const RunDirectory& dir, int index, LoopState& state, const RunConfig& cfg,
                              const TemplateSet& templates, Backend& backend, const Clock& clock) {
  const fs::path partial = dir.partial_dir(index);
  const fs::path final_dir = dir.iteration_dir(index);
  if (fs::exists(partial)) quarantine(partial);
  if (fs::exists(final_dir)) quarantine(final_dir);
  fs::create_directories(partial);

  fs::path live = partial;
  try {
    IterationRecord rec;
    rec.index = index;
    rec.started_at = clock();

    LoopState work = state;
    std::string candidates_buf, verdicts_buf, judgments_buf;
    std::vector<RewardedRecord> records;

    for (auto label : {FeasibilityLabel::Feasible, FeasibilityLabel::Infeasible}) {
      PhaseSummary phase;
      phase.label = label;
      phase.consensus_histogram.assign(static_cast<std::size_t>(cfg.k) + 1, 0);

      GenerationResult gen = generate_candidates(label, cfg, templates, work.pool, backend, index, rec.started_at);
      phase.generation_runs = gen.runs_issued;
      phase.candidates = static_cast<int>(gen.candidates.size());
      for (const auto& c : gen.candidates) append_line(candidates_buf, to_json(c));

      FilterOutcome filtered = apply_filter_pipeline(gen.candidates, work.retained, cfg, backend);
      for (const auto& v : filtered.verdicts) {
        append_line(verdicts_buf, to_json(v));
        if (v.accepted) continue;
        switch (*v.rejected_by) {
          case FilterStage::Keyword:
            ++phase.rejected_keyword;
            break;
          case FilterStage::Redundancy:
            ++phase.rejected_redundancy;
            break;
          case FilterStage::Perplexity:
            ++phase.rejected_perplexity;
            break;
        }
      }
      phase.accepted = static_cast<int>(filtered.accepted.size());

      // k self-analysis samples per accepted task, fanned out.
      const auto& accepted = filtered.accepted;
      std::vector<std::string> prompts(accepted.size());
      std::vector<std::vector<JudgmentSample>> samples(accepted.size());
      detail::parallel_for(accepted.size(), cfg.backend.max_in_flight, [&](std::size_t i) {
        prompts[i] = build_analysis_prompt(templates, accepted[i]);
        ChatRequest req;
        req.messages = {{Role::User, prompts[i]}};
        req.temperature = cfg.temp_analysis;
        req.n = cfg.k;
        req.max_tokens = cfg.backend.max_tokens;
        req.trace = {"analysis", i,
                     derive_seed(cfg.rng_seed, {kAnalysisSalt, static_cast<std::uint64_t>(index),
                                                static_cast<std::uint64_t>(label), i})};
        const ChatResponse resp = backend.complete(req);
        if (resp.completions.size() != static_cast<std::size_t>(cfg.k)) {
          throw ProtocolError("analysis returned " + std::to_string(resp.completions.size()) + " samples",
                              "expected k=" + std::to_string(cfg.k));
        }
        for (int s = 0; s < cfg.k; ++s) {
          const auto& raw = resp.completions[static_cast<std::size_t>(s)];
          const VerdictMatch m = parse_feasibility_verdict(raw);
          samples[i].push_back({s, m.label, raw, m.rule});
        }
      });

      double reward_sum = 0.0;
      for (std::size_t i = 0; i < accepted.size(); ++i) {
        for (const auto& s : samples[i]) {
          append_line(judgments_buf, {{"task_id", accepted[i].id},
                                      {"sample_index", s.sample_index},
                                      {"label", to_string(s.label)},
                                      {"parse_rule", s.parse_rule},
                                      {"raw_text", s.raw_text}});
        }
        const ConsensusResult result = compute_consensus(accepted[i].id, samples[i], cfg.k);
        ++phase.consensus_histogram[static_cast<std::size_t>(result.agreement_count)];
        if (result.tied) ++phase.tied;
        reward_sum += result.reward;
        if (is_promotable(result, accepted[i].intended_class, cfg)) {
          work.pool.promote(accepted[i], result, cfg.promotion_threshold);
          ++phase.promoted;
        }
        records.push_back(make_rewarded_record(accepted[i], prompts[i], result, samples[i]));
      }
      phase.mean_reward = accepted.empty() ? 0.0 : reward_sum / static_cast<double>(accepted.size());
      rec.phases.push_back(std::move(phase));
    }

    write_text(partial / "candidates.jsonl", candidates_buf);
    write_text(partial / "verdicts.jsonl", verdicts_buf);
    write_text(partial / "judgments.jsonl", judgments_buf);
    if (!records.empty()) {
      emit_batch(records, partial / "batch.jsonl");
      rec.batch_path = "iter_" + std::to_string(index) + "/batch.jsonl";
    }
    rec.batch_records = static_cast<int>(records.size());
    write_text(partial / "state.json", dump_state(index, work));

    fs::rename(partial, final_dir);
    live = final_dir;

    if (records.empty()) {
      rec.trainer_status = TrainerStatus::Skipped;
    } else if (!cfg.trainer_hook.empty()) {
      rec.trainer_status = invoke_trainer(dir, cfg, index, final_dir / "batch.jsonl");
    } else {
      rec.trainer_status = TrainerStatus::Emitted;
    }
    rec.wall_clock_s = static_cast<double>(clock() - rec.started_at);
    state = std::move(work);
    return rec;
  } catch (...) {
    std::error_code ec;
    if (fs::exists(live, ec)) quarantine(live);
    throw;
  }
}

// ---------------------------------------------------------------- evaluation

EvalReport evaluate_iteration(const RunDirectory& dir, int iteration, const RunConfig& cfg,
                              const TemplateSet& templates, const FewShotPool& pool, Backend& backend) {
  EvalReport report;
  report.iteration = iteration;
  std::vector<TrialLog> trials;

  IntrinsicRun intrinsic =
      run_intrinsic_eval(cfg, templates, pool, backend, iteration, cfg.intrinsic_trials_per_class);
  report.intrinsic = intrinsic.report;
  trials = std::move(intrinsic.trials);

  if (!cfg.extrinsic_dataset.empty()) {
    const auto dataset = load_benchmark(resolve(dir, cfg.extrinsic_dataset));
    ExtrinsicRun extrinsic = run_extrinsic_eval(cfg, templates, dataset, backend, iteration, cfg.extrinsic_per_class);
    report.extrinsic = extrinsic.report;
    trials.insert(trials.end(), extrinsic.trials.begin(), extrinsic.trials.end());
  }

  // Deltas against the previous stored reports of this run.
  std::vector<EvalReport> history;
  if (fs::exists(dir.manifest_path())) {
    const RunManifest m = dir.load_manifest();
    for (const auto& e : m.evals) {
      if (e.iteration < iteration) history.push_back(parse_eval_report(read_file(dir.root() / e.json_path)));
    }
  }
  std::sort(history.begin(), history.end(), [](const auto& a, const auto& b) { return a.iteration < b.iteration; });
  history.push_back(report);
  assign_deltas(history);
  report = history.back();

  fs::create_directories(dir.eval_dir());
  const std::string stem = std::to_string(iteration);
  write_text(dir.eval_dir() / (stem + ".trials.jsonl"), dump_trials_jsonl(trials));
  write_file_atomic(dir.eval_dir() / (stem + ".txt"), render_report_table(history));
  write_file_atomic(dir.eval_dir() / (stem + ".json"), dump_eval_report(report));
  return report;
}

// ---------------------------------------------------------------- loop

RunConfig load_run_config(const RunDirectory& dir, const RunManifest& manifest) {
  RunConfig cfg;
  try {
    cfg = parse_config_toml(manifest.config_toml);
  } catch (const ConfigError& e) {
    throw ManifestError(std::string("manifest config snapshot is invalid: ") + e.what() + ". " + kRecovery);
  }
  if (fs::exists(dir.config_path()) && read_file(dir.config_path()) != manifest.config_toml) {
    throw ManifestError("config.toml differs from the snapshot taken at init; the configuration of a run is "
                        "immutable. Restore config.toml or start a new run.");
  }
  apply_env_overrides(cfg);
  cfg.seed_path = resolve(dir, cfg.seed_path).string();
  cfg.templates_dir = resolve(dir, cfg.templates_dir).string();
  if (!cfg.extrinsic_dataset.empty()) cfg.extrinsic_dataset = resolve(dir, cfg.extrinsic_dataset).string();
  if (!cfg.backend.mock_script.empty()) cfg.backend.mock_script = resolve(dir, cfg.backend.mock_script).string();
  return cfg;
}

RunConfig load_run_config(const RunDirectory& dir) { return load_run_config(dir, dir.load_manifest()); }

RunManifest run_loop(const RunDirectory& dir, Backend& backend, const RunOptions& opts) {
  RunLock lock(dir.root());
  RunManifest manifest = dir.load_manifest();

  const RunConfig cfg = load_run_config(dir, manifest);
  const TemplateSet templates = TemplateSet::load(resolve(dir, cfg.templates_dir));

  const int completed = manifest.completed_iterations();
  for (int n = 1; n <= completed; ++n) {
    if (!fs::exists(dir.iteration_dir(n))) {
      throw ManifestError("manifest lists iteration " + std::to_string(n) + " but " + dir.iteration_dir(n).string() +
                          " is missing. " + kRecovery);
    }
  }
  // Anything beyond the manifest is an interrupted attempt.
  static const std::regex kIterDir(R"(iter_(\d+)(\.partial)?)");
  std::vector<fs::path> stray;
  for (const auto& entry : fs::directory_iterator(dir.root())) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, kIterDir) &&
        (m[2].matched || std::stoi(m[1].str()) > completed)) {
      stray.push_back(entry.path());
    }
  }
  std::sort(stray.begin(), stray.end());
  for (const auto& p : stray) quarantine(p);

  if (completed > 0) spdlog::info("resuming run {} after iteration {}", manifest.run_id, completed);
  LoopState state = load_state(dir, completed, cfg);
  backend.set_policy_iteration(completed);

  const auto notify = [&](LoopEvent::Kind kind, int n) {
    if (opts.on_event) opts.on_event(LoopEvent{kind, n});
  };
  const auto maybe_eval = [&](int n) {
    if (!eval_due(cfg, n) || manifest.has_eval(n)) return;
    const EvalReport report = evaluate_iteration(dir, n, cfg, templates, state.pool, backend);
    const std::string stem = std::to_string(n);
    manifest.evals.push_back({n, "eval/" + stem + ".json", "eval/" + stem + ".txt"});
    dir.save_manifest(manifest);
    spdlog::info("evaluation at {}: accuracy {:.2f}%{}", iteration_label(n), report.intrinsic->accuracy,
                 report.extrinsic ? fmt::format(", F1 {:.2f}%", report.extrinsic->f1) : std::string());
    notify(LoopEvent::Kind::EvalWritten, n);
  };

  maybe_eval(completed);
  for (int n = completed + 1; n <= cfg.total_iterations; ++n) {
    if (opts.stop_after && manifest.completed_iterations() >= *opts.stop_after) break;
    IterationRecord rec = run_iteration(dir, n, state, cfg, templates, backend, opts.clock);
    spdlog::info("iteration {}: {} records, trainer {}", n, rec.batch_records, to_string(rec.trainer_status));
    manifest.iterations.push_back(std::move(rec));
    dir.save_manifest(manifest);
    notify(LoopEvent::Kind::IterationCommitted, n);
    backend.set_policy_iteration(n);
    maybe_eval(n);
  }
  return manifest;
}

}  // namespace knowrl
