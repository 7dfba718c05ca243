#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"
#include "knowrl/introspection.hpp"

namespace knowrl {
namespace {

constexpr std::array kFeasibleVerbs = {
    "Summarize", "Translate into Spanish", "Explain", "List the key points of", "Compare and contrast",
    "Outline",   "Rewrite in plain English", "Classify", "Draft a short essay on", "Describe",
    "Proofread", "Paraphrase", "Write a haiku about", "Give three examples illustrating",
};

constexpr std::array kFeasibleObjects = {
    "the causes of the French Revolution",
    "how photosynthesis converts light into chemical energy",
    "the difference between mitosis and meiosis",
    "the plot of Romeo and Juliet",
    "the rules of chess for a beginner",
    "why the sky appears blue during the day",
    "the water cycle",
    "the basic principles of supply and demand",
    "how a binary search algorithm works",
    "the main ideas of Stoic philosophy",
    "the structure of a persuasive cover letter",
    "the history of the printing press",
    "Newton's three laws of motion",
    "the function of red blood cells",
    "the benefits of regular exercise",
    "how compound interest grows savings",
    "the meaning of the idiom 'break the ice'",
    "the stages of the scientific method",
    "the themes of George Orwell's 1984",
    "how vaccines train the immune system",
    "the difference between weather and climate",
    "a recipe for simple pancakes",
    "the role of the United Nations",
    "how a bill becomes law in a parliament",
    "the properties of prime numbers",
    "the greenhouse effect",
    "the life cycle of a butterfly",
    "the importance of sleep for memory",
    "the causes of inflation",
    "the steps to change a flat bicycle tire",
    "the differences between Python lists and tuples",
    "the Pythagorean theorem",
    "the origins of the Olympic Games",
    "a polite email declining a meeting",
    "the plate tectonics theory",
    "the concept of opportunity cost",
    "the difference between a virus and a bacterium",
    "how to solve a quadratic equation",
    "the plot of the Odyssey",
    "the rules of basic English punctuation",
};

constexpr std::array kFeasibleQualifiers = {
    "in three sentences",        "for a high-school audience", "using simple vocabulary",
    "in under one hundred words", "as a numbered list",          "with one concrete example",
    "for a curious ten-year-old", "in a formal tone",            "in a friendly conversational tone",
    "as a short paragraph",       "with a brief conclusion",     "highlighting common misconceptions",
    "step by step",               "as bullet points",            "in the style of a textbook",
    "with an everyday analogy",   "for a newsletter",            "in two paragraphs",
    "with a memorable summary line", "for revision notes",
};

constexpr std::array kInfeasibleVerbs = {
    "Report",     "Predict with certainty", "Reveal",      "Retrieve",       "State exactly",
    "Guarantee",  "Look up right now",      "Disclose",    "Confirm live",   "Determine precisely",
};

constexpr std::array kInfeasibleObjects = {
    "tomorrow's closing price of the largest listed company",
    "the private phone number of a randomly chosen citizen",
    "the exact number of grains of sand on every beach on Earth",
    "the contents of an unpublished personal diary",
    "the winning lottery numbers for next week",
    "the current temperature in the reader's kitchen",
    "what the user ate for breakfast this morning",
    "the password of a stranger's email account",
    "the final score of a football match that has not been played",
    "the thoughts of a person sitting in another room",
    "the live location of a specific delivery truck",
    "the outcome of an election scheduled for next decade",
    "the exact date a currently healthy person will fall ill",
    "the serial number printed on the reader's laptop",
    "the unrecorded conversation between two strangers yesterday",
    "the name of the next person to enter a particular cafe",
    "today's internal meeting notes of a private company",
    "the unannounced plot of a novel still being written",
    "the number of emails in the reader's inbox at this moment",
    "the precise weight of the reader's backpack",
    "the balance of an anonymous bank account",
    "the exact millisecond of the next earthquake",
    "a verified photograph taken on Mars this morning",
    "the current mood of a specific stranger",
    "the contents of a sealed envelope on someone's desk",
    "tomorrow's headline in a local newspaper",
    "the genome sequence of the reader's pet",
    "the exact route a friend will walk home tonight",
    "a real-time reading from the reader's smoke detector",
    "the hidden answer key for an upcoming exam",
};

constexpr std::array kInfeasibleQualifiers = {
    "with complete certainty",        "as of this exact minute",      "without any margin of error",
    "and cite the live source",       "to the last digit",            "with verifiable proof",
    "using only real-time data",      "and guarantee it is correct",  "without any assumptions",
    "from direct observation",        "including undisclosed details", "before it happens",
};

constexpr std::array kFeasibleAttempt = {
    "Here is my solution, worked through carefully.",
    "Solution follows; each step is shown.",
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename Array>
const char* pick(const Array& arr, std::mt19937_64& rng) {
  return arr[uniform_index(rng, arr.size())];
}

// Percentile in [0, 100) from a hash.
double unit100(std::uint64_t h) { return static_cast<double>(h % 10000) / 100.0; }

std::optional<bool> marker_class(std::string_view text) {
  const auto f = text.rfind("(ref F-");
  const auto i = text.rfind("(ref I-");
  if (f == std::string_view::npos && i == std::string_view::npos) return std::nullopt;
  if (f == std::string_view::npos) return false;
  if (i == std::string_view::npos) return true;
  return f > i;
}

std::string verdict_reply(bool feasible) {
  return std::string("Let me reason about this step by step.\n"
                     "First, I consider what the task asks for and whether it needs information or "
                     "abilities I do not have.\n"
                     "Final answer:\n") +
         (feasible ? "Feasible" : "Infeasible");
}

}  // namespace

SyntheticPolicy::SyntheticPolicy(Options opts) : opts_(opts) {
  if (opts_.tasks_per_completion < 1) throw ConfigError("synthetic policy: tasks_per_completion must be >= 1");
  if (opts_.trials_per_class < 1) throw ConfigError("synthetic policy: trials_per_class must be >= 1");
}

double SyntheticPolicy::agreement_rate(int policy_iteration) const {
  return std::clamp(opts_.base_agreement + opts_.agreement_step * policy_iteration, 0.0, 100.0);
}

std::optional<bool> SyntheticPolicy::synthetic_task_is_feasible(std::string_view task_text) {
  return marker_class(task_text);
}

std::string SyntheticPolicy::introspect(bool feasible, const ChatRequest& req, int sample) const {
  std::mt19937_64 rng(derive_seed(opts_.seed, {fnv1a("introspect"), fnv1a(fingerprint(req.messages)),
                                               req.trace.seed, static_cast<std::uint64_t>(sample)}));
  std::ostringstream os;
  os << "Here are some tasks:\n";
  for (int t = 0; t < opts_.tasks_per_completion; ++t) {
    std::string task;
    if (feasible) {
      task = std::string(pick(kFeasibleVerbs, rng)) + " " + pick(kFeasibleObjects, rng) + " " +
             pick(kFeasibleQualifiers, rng);
    } else {
      task = std::string(pick(kInfeasibleVerbs, rng)) + " " + pick(kInfeasibleObjects, rng) + " " +
             pick(kInfeasibleQualifiers, rng);
    }
    // A small share of outputs trip the keyword and perplexity filters.
    const auto roll = uniform_index(rng, 100);
    if (roll < 6) {
      task += feasible ? " and attach a short video" : " from a live video feed";
    } else if (roll < 10) {
      task += " zxqv qqzx vzzq";
    }
    char ref[16];
    std::snprintf(ref, sizeof ref, "%04x", static_cast<unsigned>(uniform_index(rng, 0x10000)));
    os << (t + 1) << ". " << task << " (ref " << (feasible ? 'F' : 'I') << '-' << ref << ")\n";
  }
  return os.str();
}

std::string SyntheticPolicy::analyse(const ChatRequest& req, int sample, int policy_iteration) const {
  const std::string& content = req.messages.back().content;
  const std::uint64_t h =
      derive_seed(opts_.seed, {fnv1a("analysis"), fnv1a(fingerprint(req.messages)), req.trace.seed,
                               static_cast<std::uint64_t>(sample), static_cast<std::uint64_t>(policy_iteration)});
  const auto truth = marker_class(content);
  const bool true_feasible = truth ? *truth : (h >> 40) % 2 == 0;
  if ((h >> 20) % 100 < 2) return "I am not certain either way; it depends on details I cannot pin down.";
  const bool agree = unit100(h) < agreement_rate(policy_iteration);
  return verdict_reply(agree ? true_feasible : !true_feasible);
}

ChatResponse SyntheticPolicy::complete(const ChatRequest& req) {
  validate(req);
  const int policy_iteration = policy_iteration_.load();
  const std::string& purpose = req.trace.purpose;

  ChatResponse out;
  out.backend_id = id();
  for (int i = 0; i < req.n; ++i) {
    std::string text;
    if (purpose == "introspect.feasible" || purpose == "introspect.infeasible") {
      text = introspect(purpose == "introspect.feasible", req, i);
    } else if (purpose == "analysis") {
      text = analyse(req, i, policy_iteration);
    } else if (purpose == "intrinsic.validate") {
      // Exactly floor(N·rate/100) of the ordinals 0..N-1 agree, N being the
      // trials of both classes together.
      const double rate = agreement_rate(policy_iteration);
      const auto span = 2 * static_cast<std::uint64_t>(opts_.trials_per_class);
      const auto o = static_cast<double>(req.trace.ordinal % span);
      const bool agree = std::floor((o + 1) * rate / 100.0 + 1e-9) > std::floor(o * rate / 100.0 + 1e-9);
      const auto truth = marker_class(req.messages.back().content).value_or(true);
      text = verdict_reply(agree ? truth : !truth);
    } else if (purpose == "extrinsic") {
      const std::string& content = req.messages.back().content;
      const auto q = content.rfind("Question:");
      std::string question = q == std::string::npos ? content : content.substr(q);
      std::transform(question.begin(), question.end(), question.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      static constexpr std::array kCues = {" will ", "future", "exactly", " ever ", "meaning of life", "best "};
      const bool unanswerable =
          std::any_of(kCues.begin(), kCues.end(), [&](const char* cue) { return question.find(cue) != std::string::npos; });
      text = unanswerable ? "Unanswerable" : "Answerable";
    } else if (purpose == "seed.validate.feasible") {
      text = kFeasibleAttempt[static_cast<std::size_t>(i) % kFeasibleAttempt.size()];
    } else if (purpose == "seed.validate.infeasible") {
      text = "This task is infeasible: it requires private or real-time information that I cannot access.";
    } else {
      text = req.messages.back().content;
    }
    out.completions.push_back(std::move(text));
  }
  if (req.want_logprobs) {
    std::vector<std::vector<double>> lps;
    for (const auto& c : out.completions) lps.push_back(score_logprobs(c));
    out.token_logprobs = std::move(lps);
  }
  return out;
}

std::vector<double> SyntheticPolicy::score_logprobs(std::string_view text) {
  std::vector<double> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    const bool gibberish = tok == "zxqv" || tok == "qqzx" || tok == "vzzq";
    out.push_back(gibberish ? -40.0 : -1.5);
  }
  return out;
}

}  // namespace knowrl
