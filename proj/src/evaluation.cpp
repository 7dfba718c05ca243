#include "knowrl/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "knowrl/config.hpp"
#include "knowrl/error.hpp"
#include "parallel.hpp"

namespace knowrl {
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kIntrinsicSalt = 0x1a7e;
constexpr std::uint64_t kExtrinsicSalt = 0xe871;

double percent(double num, double den) { return den > 0 ? 100.0 * num / den : 0.0; }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

// Display width of a UTF-8 string, counting code points.
std::size_t display_width(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  const std::size_t w = display_width(s);
  if (w < width) out.append(width - w, ' ');
  return out;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- metrics

PrfScore precision_recall_f1(const Confusion& c) {
  PrfScore s;
  if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
  if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
  if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

IntrinsicReport make_intrinsic_report(int iteration, int trials_f, int trials_i, int consistent_f, int consistent_i) {
  IntrinsicReport r;
  r.iteration = iteration;
  r.trials_feasible = trials_f;
  r.trials_infeasible = trials_i;
  r.consistent_feasible = consistent_f;
  r.consistent_infeasible = consistent_i;
  r.accuracy = percent(consistent_f + consistent_i, trials_f + trials_i);
  return r;
}

ExtrinsicReport make_extrinsic_report(int iteration, const Confusion& c) {
  ExtrinsicReport r;
  r.iteration = iteration;
  r.confusion = c;
  r.unanswerable_count = c.tp + c.fn;
  r.answerable_count = c.fp + c.tn;
  const PrfScore s = precision_recall_f1(c);
  r.precision = 100.0 * s.precision;
  r.recall = 100.0 * s.recall;
  r.f1 = 100.0 * s.f1;
  return r;
}

void assign_deltas(std::span<IntrinsicReport> reports) {
  for (std::size_t i = 0; i < reports.size(); ++i) {
    reports[i].delta = i == 0 ? std::nullopt : std::optional(reports[i].accuracy - reports[i - 1].accuracy);
  }
}

void assign_deltas(std::span<ExtrinsicReport> reports) {
  for (std::size_t i = 0; i < reports.size(); ++i) {
    reports[i].delta = i == 0 ? std::nullopt : std::optional(reports[i].f1 - reports[i - 1].f1);
  }
}

void assign_deltas(std::span<EvalReport> reports) {
  const IntrinsicReport* prev_in = nullptr;
  const ExtrinsicReport* prev_ex = nullptr;
  for (auto& r : reports) {
    if (r.intrinsic) {
      r.intrinsic->delta = prev_in ? std::optional(r.intrinsic->accuracy - prev_in->accuracy) : std::nullopt;
      prev_in = &*r.intrinsic;
    }
    if (r.extrinsic) {
      r.extrinsic->delta = prev_ex ? std::optional(r.extrinsic->f1 - prev_ex->f1) : std::nullopt;
      prev_ex = &*r.extrinsic;
    }
  }
}

std::string format_delta(std::optional<double> delta) {
  if (!delta) return "-";
  const double rounded = std::round(*delta * 100.0) / 100.0;
  if (rounded == 0.0) return "0.00";
  return fixed2(std::fabs(rounded)) + (rounded > 0 ? " ↑" : " ↓");
}

std::string iteration_label(int iteration) {
  return iteration == 0 ? "Base Model" : "Iter " + std::to_string(iteration);
}

// ---------------------------------------------------------------- benchmark

std::vector<BenchmarkItem> convert_selfaware(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("SelfAware file is not valid JSON: ") + e.what());
  }
  const json* list = &doc;
  if (doc.is_object() && doc.contains("example")) list = &doc["example"];
  if (!list->is_array()) throw DatasetError("SelfAware file: expected {\"example\": [...]} or a JSON array");

  std::vector<BenchmarkItem> out;
  for (const auto& e : *list) {
    if (!e.is_object() || !e.contains("question") || !e.contains("answerable")) {
      throw DatasetError("SelfAware entry without question/answerable");
    }
    BenchmarkItem item;
    item.question = e["question"].get<std::string>();
    item.answerable = e["answerable"].get<bool>();
    if (e.contains("answer") && !e["answer"].is_null()) {
      if (e["answer"].is_string()) {
        item.answer = e["answer"].get<std::string>();
      } else if (e["answer"].is_array()) {
        std::string joined;
        for (const auto& a : e["answer"]) {
          if (!a.is_string()) continue;
          if (!joined.empty()) joined += " | ";
          joined += a.get<std::string>();
        }
        if (!joined.empty()) item.answer = std::move(joined);
      }
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path) {
  static const std::string kFormat = "expected a JSON array of {question: string, answerable: bool, answer?: string}";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("benchmark file not found: " + path.string() + " (" + kFormat + ")");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DatasetError("benchmark " + path.string() + ": " + e.what() + " (" + kFormat + ")");
  }
  if (!doc.is_array()) throw DatasetError("benchmark " + path.string() + ": " + kFormat);
  std::vector<BenchmarkItem> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& e = doc[i];
    if (!e.is_object() || !e.contains("question") || !e["question"].is_string() || !e.contains("answerable") ||
        !e["answerable"].is_boolean()) {
      throw DatasetError("benchmark " + path.string() + " item " + std::to_string(i) + ": " + kFormat);
    }
    BenchmarkItem item{e["question"].get<std::string>(), e["answerable"].get<bool>(), std::nullopt};
    if (e.contains("answer") && e["answer"].is_string()) item.answer = e["answer"].get<std::string>();
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<BenchmarkItem> sample_benchmark(std::span<const BenchmarkItem> items, int per_class, std::uint64_t seed) {
  std::vector<const BenchmarkItem*> answerable, unanswerable;
  for (const auto& it : items) (it.answerable ? answerable : unanswerable).push_back(&it);
  const auto need = static_cast<std::size_t>(per_class);
  if (answerable.size() < need || unanswerable.size() < need) {
    throw DatasetError("benchmark has " + std::to_string(answerable.size()) + " answerable and " +
                       std::to_string(unanswerable.size()) + " unanswerable items; need " +
                       std::to_string(per_class) + " of each");
  }
  std::mt19937_64 rng(seed);
  std::vector<BenchmarkItem> out;
  out.reserve(2 * need);
  for (auto* group : {&answerable, &unanswerable}) {
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + uniform_index(rng, group->size() - i);
      std::swap((*group)[i], (*group)[j]);
      out.push_back(*(*group)[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------- protocols

IntrinsicRun run_intrinsic_eval(const RunConfig& cfg, const TemplateSet& templates, const FewShotPool& pool,
                                Backend& backend, int iteration, int trials_per_class) {
  struct Job {
    FeasibilityLabel label;
    int ordinal;
  };
  std::vector<Job> jobs;
  for (auto label : {FeasibilityLabel::Feasible, FeasibilityLabel::Infeasible}) {
    for (int t = 0; t < trials_per_class; ++t) jobs.push_back({label, t});
  }
  std::vector<TrialLog> logs(jobs.size());

  detail::parallel_for(jobs.size(), cfg.backend.max_in_flight, [&](std::size_t idx) {
    const Job& job = jobs[idx];
    const auto it = static_cast<std::uint64_t>(iteration);
    const auto lc = static_cast<std::uint64_t>(job.label);
    const auto o = static_cast<std::uint64_t>(job.ordinal);
    TrialLog& log = logs[idx];
    log.protocol = "intrinsic";
    log.ordinal = job.ordinal;
    log.expected = to_string(job.label);

    std::mt19937_64 rng(derive_seed(cfg.rng_seed, {kIntrinsicSalt, it, lc, o, 0x5eed}));
    ChatRequest gen;
    gen.messages = {{Role::User, build_introspection_prompt(templates, job.label, pool, cfg.few_shot_count, rng)}};
    gen.temperature = cfg.temp_introspection;
    gen.max_tokens = cfg.backend.max_tokens;
    gen.trace = {"introspect." + std::string(to_string(job.label)), o,
                 derive_seed(cfg.rng_seed, {kIntrinsicSalt, it, lc, o})};
    const auto tasks = parse_task_list(backend.complete(gen).completions.front());
    if (tasks.empty()) {
      log.predicted = "none";
      log.rule = "no_task";
      return;
    }
    log.generated = tasks.front();

    const TaskCandidate task{"eval" + std::to_string(iteration) + "-" + log.expected + "-" + std::to_string(o),
                             tasks.front(), job.label, iteration, TaskSource::Generated, 0};
    ChatRequest val;
    val.messages = {{Role::User, build_analysis_prompt(templates, task)}};
    val.temperature = 0.0;
    val.max_tokens = cfg.backend.max_tokens;
    val.trace = {"intrinsic.validate", static_cast<std::uint64_t>(idx),
                 derive_seed(cfg.rng_seed, {kIntrinsicSalt, it, lc, o, 1})};
    log.prompt = val.messages.front().content;
    log.reply = backend.complete(val).completions.front();
    const VerdictMatch m = parse_feasibility_verdict(log.reply);
    log.predicted = to_string(m.label);
    log.rule = m.rule;
    log.correct = m.label == as_verdict(job.label);
  });

  int consistent_f = 0, consistent_i = 0, unparsable = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (logs[i].correct) (jobs[i].label == FeasibilityLabel::Feasible ? consistent_f : consistent_i)++;
    if (!logs[i].correct && (logs[i].predicted == "unparsable" || logs[i].predicted == "none")) {
      ++unparsable;
      spdlog::debug("intrinsic trial {} {}: {}", logs[i].expected, logs[i].ordinal, logs[i].rule);
    }
  }
  IntrinsicRun run;
  run.report = make_intrinsic_report(iteration, trials_per_class, trials_per_class, consistent_f, consistent_i);
  run.report.unparsable = unparsable;
  run.trials = std::move(logs);
  return run;
}

ExtrinsicRun run_extrinsic_eval(const RunConfig& cfg, const TemplateSet& templates,
                                std::span<const BenchmarkItem> dataset, Backend& backend, int iteration,
                                int per_class) {
  // Same sample at every iteration so checkpoints are comparable.
  const auto sample = sample_benchmark(dataset, per_class, derive_seed(cfg.rng_seed, {kExtrinsicSalt}));
  const PromptTemplate& tmpl = templates.get(TemplateName::AnswerabilityIcl);
  std::vector<TrialLog> logs(sample.size());

  detail::parallel_for(sample.size(), cfg.backend.max_in_flight, [&](std::size_t i) {
    const BenchmarkItem& item = sample[i];
    TrialLog& log = logs[i];
    log.protocol = "extrinsic";
    log.ordinal = static_cast<int>(i);
    log.expected = item.answerable ? "answerable" : "unanswerable";
    ChatRequest req;
    req.messages = {{Role::User, tmpl.render({}, item.question)}};
    req.temperature = 0.0;
    req.max_tokens = cfg.backend.max_tokens;
    req.trace = {"extrinsic", i, derive_seed(cfg.rng_seed, {kExtrinsicSalt, static_cast<std::uint64_t>(iteration), i})};
    log.prompt = req.messages.front().content;
    log.reply = backend.complete(req).completions.front();
    const BinaryMatch m = match_binary_verdict(log.reply, "answerable", "unanswerable");
    log.rule = m.rule;
    log.predicted = m.positive.value_or(true) ? "answerable" : "unanswerable";
    log.correct = log.predicted == log.expected;
  });

  Confusion c;
  int unparsable = 0;
  for (const auto& log : logs) {
    const bool truth_pos = log.expected == "unanswerable";
    const bool pred_pos = log.predicted == "unanswerable";
    if (log.rule == "none") {
      ++unparsable;
      spdlog::debug("extrinsic item {}: unparsable reply counted as answerable", log.ordinal);
    }
    if (truth_pos && pred_pos) ++c.tp;
    if (!truth_pos && pred_pos) ++c.fp;
    if (truth_pos && !pred_pos) ++c.fn;
    if (!truth_pos && !pred_pos) ++c.tn;
  }
  ExtrinsicRun run;
  run.report = make_extrinsic_report(iteration, c);
  run.report.unparsable = unparsable;
  run.trials = std::move(logs);
  return run;
}

// ---------------------------------------------------------------- reports

namespace {

json to_json(const EvalReport& r) {
  json j;
  j["schema_version"] = 1;
  j["iteration"] = r.iteration;
  if (r.intrinsic) {
    const auto& in = *r.intrinsic;
    j["intrinsic"] = {
        {"trials_feasible", in.trials_feasible},
        {"trials_infeasible", in.trials_infeasible},
        {"consistent_feasible", in.consistent_feasible},
        {"consistent_infeasible", in.consistent_infeasible},
        {"unparsable", in.unparsable},
        {"accuracy", in.accuracy},
        {"delta", optional_number(in.delta)},
    };
  } else {
    j["intrinsic"] = nullptr;
  }
  if (r.extrinsic) {
    const auto& ex = *r.extrinsic;
    j["extrinsic"] = {
        {"answerable_count", ex.answerable_count},
        {"unanswerable_count", ex.unanswerable_count},
        {"tp", ex.confusion.tp},
        {"fp", ex.confusion.fp},
        {"fn", ex.confusion.fn},
        {"tn", ex.confusion.tn},
        {"unparsable", ex.unparsable},
        {"precision", ex.precision},
        {"recall", ex.recall},
        {"f1", ex.f1},
        {"delta", optional_number(ex.delta)},
    };
  } else {
    j["extrinsic"] = nullptr;
  }
  return j;
}

EvalReport from_json(const json& j) {
  EvalReport r;
  r.iteration = j.at("iteration").get<int>();
  if (j.contains("intrinsic") && !j["intrinsic"].is_null()) {
    const json& in = j["intrinsic"];
    IntrinsicReport x;
    x.iteration = r.iteration;
    x.trials_feasible = in.at("trials_feasible").get<int>();
    x.trials_infeasible = in.at("trials_infeasible").get<int>();
    x.consistent_feasible = in.at("consistent_feasible").get<int>();
    x.consistent_infeasible = in.at("consistent_infeasible").get<int>();
    x.unparsable = in.value("unparsable", 0);
    x.accuracy = in.at("accuracy").get<double>();
    x.delta = read_optional_number(in, "delta");
    r.intrinsic = x;
  }
  if (j.contains("extrinsic") && !j["extrinsic"].is_null()) {
    const json& ex = j["extrinsic"];
    ExtrinsicReport x;
    x.iteration = r.iteration;
    x.answerable_count = ex.at("answerable_count").get<int>();
    x.unanswerable_count = ex.at("unanswerable_count").get<int>();
    x.confusion = {ex.at("tp").get<int>(), ex.at("fp").get<int>(), ex.at("fn").get<int>(), ex.at("tn").get<int>()};
    x.unparsable = ex.value("unparsable", 0);
    x.precision = ex.at("precision").get<double>();
    x.recall = ex.at("recall").get<double>();
    x.f1 = ex.at("f1").get<double>();
    x.delta = read_optional_number(ex, "delta");
    r.extrinsic = x;
  }
  return r;
}

}  // namespace

std::string dump_eval_report(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

EvalReport parse_eval_report(std::string_view json_text) {
  try {
    return from_json(json::parse(json_text));
  } catch (const json::exception& e) {
    throw DatasetError(std::string("eval report: ") + e.what());
  }
}

std::string dump_eval_reports(std::span<const EvalReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

std::vector<EvalReport> parse_eval_reports(std::string_view json_text) {
  try {
    const json arr = json::parse(json_text);
    if (!arr.is_array()) throw DatasetError("eval reports: expected a JSON array");
    std::vector<EvalReport> out;
    for (const auto& j : arr) out.push_back(from_json(j));
    return out;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("eval reports: ") + e.what());
  }
}

std::string dump_trials_jsonl(std::span<const TrialLog> trials) {
  std::string out;
  for (const auto& t : trials) {
    json j = {{"protocol", t.protocol}, {"ordinal", t.ordinal},   {"expected", t.expected},
              {"prompt", t.prompt},     {"generated", t.generated}, {"reply", t.reply},
              {"predicted", t.predicted}, {"rule", t.rule},       {"correct", t.correct}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string render_report_table(std::span<const EvalReport> reports) {
  bool any_in = false, any_ex = false;
  for (const auto& r : reports) {
    any_in |= r.intrinsic.has_value();
    any_ex |= r.extrinsic.has_value();
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Iteration"};
  if (any_in) header.insert(header.end(), {"Accuracy (%)", "Δ (%)"});
  if (any_ex) header.insert(header.end(), {"F1 (%)", "Δ (%)"});
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{iteration_label(r.iteration)};
    if (any_in) {
      row.push_back(r.intrinsic ? fixed2(r.intrinsic->accuracy) : "n/a");
      row.push_back(r.intrinsic ? format_delta(r.intrinsic->delta) : "-");
    }
    if (any_ex) {
      row.push_back(r.extrinsic ? fixed2(r.extrinsic->f1) : "n/a");
      row.push_back(r.extrinsic ? format_delta(r.extrinsic->delta) : "-");
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c) line += "  ";
      line += pad(rows[r][c], widths[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace knowrl
