#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "knowrl/error.hpp"
#include "knowrl/inference.hpp"

using namespace knowrl;
using json = nlohmann::json;

namespace {

// Local OpenAI-compatible stub. Responses are produced by a handler set per
// test; every request body and auth header is recorded.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

  StubServer() {
    auto record = [this](const httplib::Request& req, httplib::Response& res) {
      int call;
      {
        std::lock_guard lock(mu_);
        bodies.push_back(req.body);
        paths.push_back(req.path);
        auth.push_back(req.get_header_value("Authorization"));
        call = static_cast<int>(bodies.size());
      }
      handler(req, res, call);
    };
    server_.Post(R"(/.*)", record);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  BackendConfig config() const {
    BackendConfig c;
    c.kind = BackendKind::Http;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.model = "stub-model";
    c.backoff_initial_ms = 1;
    c.timeout_s = 5.0;
    return c;
  }

  Handler handler;
  std::vector<std::string> bodies;
  std::vector<std::string> paths;
  std::vector<std::string> auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mu_;
};

json chat_reply(const std::vector<std::string>& texts) {
  json choices = json::array();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", texts[i]}}}});
  }
  return {{"choices", choices}, {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 2}}}};
}

ChatRequest ask(std::string content, int n = 1) {
  ChatRequest r;
  r.messages = {{Role::User, std::move(content)}};
  r.n = n;
  return r;
}

}  // namespace

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int call) {
    if (call <= 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(chat_reply({"Feasible"}).dump(), "application/json");
  };
  HttpBackend b(stub.config(), std::nullopt);
  const auto r = b.complete(ask("hi"));
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.completions, std::vector<std::string>{"Feasible"});
  EXPECT_EQ(stub.bodies.size(), 3u);
}

TEST(HttpBackend, GivesUpAfterMaxAttempts) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) { res.status = 503; };
  HttpBackend b(stub.config(), std::nullopt);
  try {
    b.complete(ask("hi"));
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts().size(), 3u);
    EXPECT_NE(e.attempts()[0].find("503"), std::string::npos);
  }
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) { res.status = 401; };
  HttpBackend b(stub.config(), std::nullopt);
  EXPECT_THROW(b.complete(ask("hi")), TransportError);
  EXPECT_EQ(stub.bodies.size(), 1u);
}

TEST(HttpBackend, SendsBearerTokenAndOpenAiBody) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(chat_reply({"a", "b"}).dump(), "application/json");
  };
  HttpBackend b(stub.config(), std::string("sk-test"));
  auto req = ask("hello", 2);
  req.temperature = 1.0;
  req.max_tokens = 64;
  req.trace = {"analysis", 3, 99};
  const auto r = b.complete(req);
  EXPECT_EQ(r.completions, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.usage.prompt_tokens, 5);
  ASSERT_EQ(stub.auth.size(), 1u);
  EXPECT_EQ(stub.auth[0], "Bearer sk-test");
  EXPECT_EQ(stub.paths[0], "/v1/chat/completions");
  const json body = json::parse(stub.bodies[0]);
  EXPECT_EQ(body["model"], "stub-model");
  EXPECT_EQ(body["n"], 2);
  EXPECT_EQ(body["max_tokens"], 64);
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 1.0);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
  EXPECT_FALSE(body.contains("trace"));
}

TEST(HttpBackend, PathPrefixIsKept) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(chat_reply({"x"}).dump(), "application/json");
  };
  auto cfg = stub.config();
  cfg.base_url += "/proxy/";
  HttpBackend b(cfg, std::nullopt);
  b.complete(ask("hi"));
  EXPECT_EQ(stub.paths[0], "/proxy/v1/chat/completions");
}

TEST(HttpBackend, UnaryModeIssuesOneRequestPerSample) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int call) {
    res.set_content(chat_reply({"s" + std::to_string(call)}).dump(), "application/json");
  };
  auto cfg = stub.config();
  cfg.sampling = SamplingMode::Unary;
  HttpBackend b(cfg, std::nullopt);
  const auto r = b.complete(ask("hi", 3));
  EXPECT_EQ(r.completions, (std::vector<std::string>{"s1", "s2", "s3"}));
  for (const auto& body : stub.bodies) EXPECT_EQ(json::parse(body)["n"], 1);
}

TEST(HttpBackend, BatchedTopsUpShortReplies) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int call) {
    res.set_content(chat_reply(call == 1 ? std::vector<std::string>{"a", "b"} : std::vector<std::string>{"c"}).dump(),
                    "application/json");
  };
  HttpBackend b(stub.config(), std::nullopt);
  EXPECT_EQ(b.complete(ask("hi", 4)).completions, (std::vector<std::string>{"a", "b", "c", "c"}));
}

TEST(HttpBackend, ChatLogprobsPassThrough) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) {
    json reply = chat_reply({"yes"});
    reply["choices"][0]["logprobs"] = {
        {"content", json::array({{{"token", "y"}, {"logprob", -0.25}}, {{"token", "es"}, {"logprob", -1.5}}})}};
    res.set_content(reply.dump(), "application/json");
  };
  HttpBackend b(stub.config(), std::nullopt);
  auto req = ask("hi");
  req.want_logprobs = true;
  const auto r = b.complete(req);
  ASSERT_TRUE(r.token_logprobs);
  EXPECT_EQ((*r.token_logprobs)[0], (std::vector<double>{-0.25, -1.5}));
}

TEST(HttpBackend, ScoringUsesEchoCompletions) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) {
    const json reply = {{"choices",
                         {{{"text", "one two three!"},
                           {"logprobs",
                            {{"tokens", {"one", " two", " three", "!"}},
                             {"token_logprobs", {-0.5, -1.25, -2.0, -9.0}},
                             {"text_offset", {0, 3, 7, 13}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  };
  auto cfg = stub.config();
  cfg.scoring = ScoringMode::CompletionsEcho;
  HttpBackend b(cfg, std::nullopt);
  ASSERT_TRUE(b.can_score());
  EXPECT_EQ(b.score_logprobs("one two three"), (std::vector<double>{-0.5, -1.25, -2.0}));
  EXPECT_EQ(stub.paths[0], "/v1/completions");
  const json body = json::parse(stub.bodies[0]);
  EXPECT_EQ(body["echo"], true);
  EXPECT_TRUE(b.score_logprobs("").empty());
}

TEST(HttpBackend, ScoringDisabledByDefault) {
  BackendConfig cfg;
  cfg.kind = BackendKind::Http;
  HttpBackend b(cfg, std::nullopt);
  EXPECT_FALSE(b.can_score());
  EXPECT_THROW(b.score_logprobs("x"), UnsupportedCapability);
}

TEST(HttpBackend, MalformedJsonIsAProtocolError) {
  StubServer stub;
  stub.handler = [](const httplib::Request&, httplib::Response& res, int) {
    res.set_content("{not json", "application/json");
  };
  HttpBackend b(stub.config(), std::nullopt);
  EXPECT_THROW(b.complete(ask("hi")), ProtocolError);
}

TEST(HttpBackend, RejectsBadBaseUrl) {
  BackendConfig cfg;
  cfg.base_url = "localhost:8000";
  EXPECT_THROW(HttpBackend(cfg, std::nullopt), ConfigError);
}

TEST(HttpBackend, UnreachableServerIsATransportError) {
  BackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.backoff_initial_ms = 1;
  cfg.max_attempts = 2;
  cfg.timeout_s = 1.0;
  HttpBackend b(cfg, std::nullopt);
  try {
    b.complete(ask("hi"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts().size(), 2u);
  }
}
