#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"

namespace knowrl {
namespace {

using json = nlohmann::ordered_json;

std::size_t whitespace_token_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  std::string tok;
  while (in >> tok) ++n;
  return n;
}

std::vector<double> read_doubles(const json& arr, std::string_view where) {
  if (!arr.is_array()) throw ConfigError("mock script: " + std::string(where) + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& v : arr) {
    if (!v.is_number()) throw ConfigError("mock script: " + std::string(where) + " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

MockScript MockScript::parse(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("mock script: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("mock script: top level must be an object");

  MockScript s;
  if (doc.contains("default")) {
    const json& d = doc["default"];
    const std::string behavior = d.value("behavior", "echo");
    if (behavior == "echo") {
      s.default_behavior = Default::Echo;
    } else if (behavior == "fail") {
      s.default_behavior = Default::Fail;
    } else if (behavior == "round_robin") {
      s.default_behavior = Default::RoundRobin;
      if (!d.contains("completions") || !d["completions"].is_array() || d["completions"].empty()) {
        throw ConfigError("mock script: round_robin needs a non-empty completions list");
      }
      for (const auto& c : d["completions"]) s.round_robin.push_back(c.get<std::string>());
    } else {
      throw ConfigError("mock script: unknown default behavior '" + behavior + "'");
    }
  }
  if (doc.contains("constant_logprob")) s.constant_logprob = doc["constant_logprob"].get<double>();
  if (doc.contains("scores")) {
    for (const auto& [text, arr] : doc["scores"].items()) s.scores[text] = read_doubles(arr, "scores");
  }
  if (doc.contains("entries")) {
    for (const auto& [fp, list] : doc["entries"].items()) {
      if (!list.is_array() || list.empty()) {
        throw ConfigError("mock script: entry " + fp + " must be a non-empty array");
      }
      auto& out = s.entries[fp];
      for (const auto& item : list) {
        if (item.is_string()) {
          out.push_back({item.get<std::string>(), std::nullopt});
        } else if (item.is_object() && item.contains("text")) {
          MockCompletion c{item["text"].get<std::string>(), std::nullopt};
          if (item.contains("logprobs")) c.logprobs = read_doubles(item["logprobs"], "entry logprobs");
          out.push_back(std::move(c));
        } else {
          throw ConfigError("mock script: entry " + fp + " items must be strings or {text, logprobs}");
        }
      }
    }
  }
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read mock script " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string MockScript::dump() const {
  json doc;
  json d;
  switch (default_behavior) {
    case Default::Echo:
      d["behavior"] = "echo";
      break;
    case Default::Fail:
      d["behavior"] = "fail";
      break;
    case Default::RoundRobin:
      d["behavior"] = "round_robin";
      d["completions"] = round_robin;
      break;
  }
  doc["default"] = std::move(d);
  if (constant_logprob) doc["constant_logprob"] = *constant_logprob;
  if (!scores.empty()) doc["scores"] = scores;
  json entries = json::object();
  for (const auto& [fp, list] : this->entries) {
    json arr = json::array();
    for (const auto& c : list) {
      if (c.logprobs) {
        arr.push_back({{"text", c.text}, {"logprobs", *c.logprobs}});
      } else {
        arr.push_back(c.text);
      }
    }
    entries[fp] = std::move(arr);
  }
  doc["entries"] = std::move(entries);
  return doc.dump(2);
}

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {}

bool MockBackend::can_score() const { return script_.constant_logprob.has_value() || !script_.scores.empty(); }

ChatResponse MockBackend::complete(const ChatRequest& req) {
  validate(req);
  const std::string fp = fingerprint(req.messages);
  const auto it = script_.entries.find(fp);

  ChatResponse out;
  out.backend_id = id();
  std::vector<std::vector<double>> logprobs;
  bool logprobs_ok = req.want_logprobs;

  for (int i = 0; i < req.n; ++i) {
    MockCompletion c;
    if (it != script_.entries.end()) {
      c = it->second[static_cast<std::size_t>(i) % it->second.size()];
    } else {
      switch (script_.default_behavior) {
        case MockScript::Default::Echo:
          c.text = req.messages.back().content;
          break;
        case MockScript::Default::Fail:
          throw TransportError("mock backend: scripted failure for " + fp.substr(0, 12),
                               {"attempt 1: scripted failure"});
        case MockScript::Default::RoundRobin: {
          const auto idx = (req.trace.seed + static_cast<std::uint64_t>(i)) % script_.round_robin.size();
          c.text = script_.round_robin[idx];
          break;
        }
      }
    }
    if (logprobs_ok) {
      if (c.logprobs) {
        logprobs.push_back(*c.logprobs);
      } else if (script_.constant_logprob) {
        logprobs.emplace_back(whitespace_token_count(c.text), *script_.constant_logprob);
      } else {
        logprobs_ok = false;
      }
    }
    out.completions.push_back(std::move(c.text));
  }
  if (logprobs_ok) out.token_logprobs = std::move(logprobs);
  return out;
}

std::vector<double> MockBackend::score_logprobs(std::string_view text) {
  if (const auto it = script_.scores.find(std::string(text)); it != script_.scores.end()) return it->second;
  if (!script_.constant_logprob) throw UnsupportedCapability("mock backend: no score scripted for text");
  return std::vector<double>(whitespace_token_count(text), *script_.constant_logprob);
}

}  // namespace knowrl
