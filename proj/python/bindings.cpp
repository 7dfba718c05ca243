#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "knowrl/config.hpp"
#include "knowrl/consensus.hpp"
#include "knowrl/error.hpp"
#include "knowrl/evaluation.hpp"
#include "knowrl/introspection.hpp"
#include "knowrl/orchestrator.hpp"
#include "knowrl/text_filters.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace knowrl;

namespace {

py::dict consensus_dict(const ConsensusResult& r) {
  py::dict d;
  d["k"] = r.k;
  d["feasible"] = r.feasible_count;
  d["infeasible"] = r.infeasible_count;
  d["unparsable"] = r.unparsable_count;
  d["majority"] = r.majority ? py::object(py::str(std::string(to_string(*r.majority)))) : py::object(py::none());
  d["agreement"] = r.agreement_count;
  d["reward"] = r.reward;
  d["tied"] = r.tied;
  return d;
}

// Accepts raw completions and parses each with the verdict cascade.
py::dict consensus_from_texts(const std::vector<std::string>& completions, int k) {
  std::vector<JudgmentSample> samples;
  for (std::size_t i = 0; i < completions.size(); ++i) {
    const VerdictMatch m = parse_feasibility_verdict(completions[i]);
    samples.push_back({static_cast<int>(i), m.label, completions[i], m.rule});
  }
  return consensus_dict(compute_consensus("py", samples, k));
}

std::string init_from_config(const fs::path& config_path, const fs::path& run_dir, std::string run_id) {
  RunConfig cfg = load_config(config_path);
  const auto rel = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : config_path.parent_path() / path;
  };
  const fs::path seeds = rel(cfg.seed_path);
  const fs::path templates = rel(cfg.templates_dir);
  if (!cfg.extrinsic_dataset.empty()) cfg.extrinsic_dataset = rel(cfg.extrinsic_dataset).string();
  if (!cfg.backend.mock_script.empty()) cfg.backend.mock_script = rel(cfg.backend.mock_script).string();
  if (run_id.empty()) run_id = run_dir.filename().string();
  return dump_manifest(init_run(run_dir, cfg, run_id, seeds, templates).load_manifest());
}

std::string run(const fs::path& run_dir, std::optional<int> stop_after) {
  const RunDirectory dir(run_dir);
  const RunConfig cfg = load_run_config(dir);
  auto backend = make_backend(cfg);
  RunOptions opts;
  opts.clock = cfg.backend.kind == BackendKind::Http ? system_clock() : frozen_clock();
  opts.stop_after = stop_after;
  py::gil_scoped_release release;
  return dump_manifest(run_loop(dir, *backend, opts));
}

}  // namespace

PYBIND11_MODULE(_knowrl, m) {
  m.doc() = "Native core of the knowrl self-knowledge training loop";

  py::register_exception<Error>(m, "KnowrlError");
  py::register_exception<ManifestError>(m, "ManifestError");

  m.def("compute_consensus", &consensus_from_texts, py::arg("completions"), py::arg("k"),
        "Parse k analysis completions and return the consensus tally and reward.");

  m.def(
      "parse_verdict",
      [](const std::string& text) {
        const VerdictMatch v = parse_feasibility_verdict(text);
        return py::make_tuple(std::string(to_string(v.label)), v.rule);
      },
      py::arg("text"));

  m.def(
      "rouge_l",
      [](const std::string& a, const std::string& b) {
        const RougeLScore s = rouge_l(a, b);
        py::dict d;
        d["lcs"] = s.lcs_length;
        d["precision"] = s.precision;
        d["recall"] = s.recall;
        d["f"] = s.f_score;
        return d;
      },
      py::arg("a"), py::arg("b"));

  m.def("tokenize", &tokenize, py::arg("text"));

  m.def(
      "perplexity", [](const std::vector<double>& logprobs) { return perplexity(logprobs); }, py::arg("logprobs"));

  m.def(
      "keyword_hit",
      [](const std::string& text, std::optional<std::vector<std::string>> keywords) -> std::optional<std::string> {
        const TaskCandidate t{"py", text, FeasibilityLabel::Feasible, 0, TaskSource::Generated, 0};
        const auto v = keyword_filter(t, keywords.value_or(RunConfig::default_keywords()));
        if (v.accepted) return std::nullopt;
        return v.detail;
      },
      py::arg("text"), py::arg("keywords") = py::none(),
      "Detail of the first blocked keyword found in text, or None.");

  m.def(
      "precision_recall_f1",
      [](int tp, int fp, int fn, int tn) {
        const PrfScore s = precision_recall_f1({tp, fp, fn, tn});
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

  m.def("format_delta", &format_delta, py::arg("delta"));

  m.def("default_config_toml", [] { return dump_config_toml(RunConfig{}); });
  m.def("validate_config_toml", [](const std::string& text) { return dump_config_toml(parse_config_toml(text)); },
        py::arg("text"), "Parse, validate and re-emit a config in canonical form.");

  m.def("init_run", &init_from_config, py::arg("config"), py::arg("run_dir"), py::arg("run_id") = "",
        "Scaffold a run directory; returns the manifest as JSON text.");
  m.def("run", &run, py::arg("run_dir"), py::arg("stop_after") = py::none(),
        "Start or resume a run; returns the manifest as JSON text.");
}
