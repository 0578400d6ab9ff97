#include <doctest.h>

#include <cmath>
#include <deque>
#include <mutex>
#include <set>

#include "curatrix/clients.hpp"
#include "curatrix/filter.hpp"
#include "curatrix/mock.hpp"
#include "curatrix/prompt.hpp"
#include "support.hpp"

using namespace curatrix;

namespace {

RetryPolicy fast_policy(int attempts = 4) {
  RetryPolicy p;
  p.max_attempts = attempts;
  p.base_backoff_ms = 1;
  return p;
}

Endpoint mock_endpoint(const std::string& fault = {}, const std::string& url = "mock://") {
  Endpoint e;
  e.url = url;
  e.model = "m";
  if (!fault.empty()) e.headers.emplace_back("X-Mock-Fault", fault);
  return e;
}

PromptPayload sample_payload() {
  PromptPayload p;
  p.system_text = system_prompt("chart understanding");
  PromptPart ref;
  ref.kind = PromptPart::Kind::image;
  ref.image = {"https://example.com/ref.png", content_hash(std::string_view{"ref"}), "image/png"};
  p.parts.push_back(ref);
  p.parts.push_back({PromptPart::Kind::text, "Q: what is shown?", {}, {}});
  p.parts.push_back({PromptPart::Kind::text, "A: a chart", {}, {}});
  PromptPart cand;
  cand.kind = PromptPart::Kind::image;
  cand.image = {"c.png", content_hash(std::string_view{"candidate"}), "image/png"};
  cand.data_b64 = base64_encode(std::vector<std::uint8_t>{'c', 'a', 'n', 'd'});
  p.parts.push_back(cand);
  return p;
}

// Replays canned responses and records what was sent.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::deque<HttpResponse> script) : script_(std::move(script)) {}
  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override {
    std::lock_guard lock(mu_);
    paths.push_back(path);
    bodies.push_back(body);
    sent_headers.push_back(headers);
    if (script_.empty()) return {500, "", ""};
    auto r = script_.front();
    script_.pop_front();
    return r;
  }
  std::vector<std::string> paths, bodies;
  std::vector<Headers> sent_headers;

 private:
  std::mutex mu_;
  std::deque<HttpResponse> script_;
};

std::string header(const Headers& h, const std::string& name) {
  for (const auto& [k, v] : h) {
    if (k == name) return v;
  }
  return {};
}

}  // namespace

TEST_CASE("mock generation is deterministic and parses to two pairs") {
  ServiceClient client(mock_endpoint(), kGenerationPath, fast_policy());
  const auto payload = sample_payload();
  const auto a = call_generation(client, payload, {});
  const auto b = call_generation(client, payload, {});
  CHECK(a == b);
  const auto pairs = parse_generation(a);
  CHECK(pairs.size() == 2);
  CHECK(a == MockService::generation_text(content_hash(std::string_view{"cand"}), "what is shown?"));
}

TEST_CASE("two 429s then success takes three attempts") {
  ServiceClient client(mock_endpoint("429:2"), kGenerationPath, fast_policy());
  const auto rec = generate(client, 0, sample_payload(), {});
  CHECK(rec.status == TaskStatus::ok);
  CHECK(rec.attempts == 3);
  CHECK(rec.parsed_pairs.size() == 2);
  CHECK(client.request_count() == 3);
}

TEST_CASE("persistent 500s exhaust the retries") {
  ServiceClient client(mock_endpoint("500:*"), kGenerationPath, fast_policy(4));
  const auto rec = generate(client, 3, sample_payload(), {});
  CHECK(rec.status == TaskStatus::exhausted_retries);
  CHECK(rec.attempts == 4);
  CHECK(rec.task_index == 3);
  CHECK(rec.parsed_pairs.empty());
  CHECK_FALSE(rec.error.empty());
}

TEST_CASE("malformed output is retried with a fresh call") {
  ServiceClient client(mock_endpoint("malformed:1"), kGenerationPath, fast_policy());
  const auto rec = generate(client, 0, sample_payload(), {});
  CHECK(rec.status == TaskStatus::ok);
  CHECK(rec.attempts == 2);

  ServiceClient always(mock_endpoint("malformed:*"), kGenerationPath, fast_policy(3));
  const auto bad = generate(always, 0, sample_payload(), {});
  CHECK(bad.status == TaskStatus::parse_failed);
  CHECK(bad.attempts == 3);
  CHECK_FALSE(bad.raw_output.empty());
}

TEST_CASE("non-retryable client errors are rejected at once") {
  ServiceClient client(mock_endpoint("400:*"), kGenerationPath, fast_policy());
  const auto rec = generate(client, 0, sample_payload(), {});
  CHECK(rec.status == TaskStatus::rejected);
  CHECK(rec.attempts == 1);
}

TEST_CASE("client sends attempt number, bearer key and the default path") {
  auto transport = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{
      {503, "", ""}, {200, R"({"choices":[{"message":{"content":"[{\"Q\":\"q\",\"A\":\"a\"}]"}}]})", ""}});
  Endpoint e;
  e.url = "http://localhost:1";
  e.model = "teacher";
  e.api_key = "secret";
  ServiceClient client(e, kGenerationPath, fast_policy(), transport);
  const auto rec = generate(client, 0, sample_payload(), {});
  CHECK(rec.status == TaskStatus::ok);
  REQUIRE(transport->paths.size() == 2);
  CHECK(transport->paths[0] == kGenerationPath);
  CHECK(header(transport->sent_headers[0], "X-Attempt") == "1");
  CHECK(header(transport->sent_headers[1], "X-Attempt") == "2");
  CHECK(header(transport->sent_headers[0], "Authorization") == "Bearer secret");
  const auto body = nlohmann::json::parse(transport->bodies[0]);
  CHECK(body["model"] == "teacher");
  CHECK(body["temperature"] == 1.0);
}

TEST_CASE("embedding client") {
  ServiceClient client(mock_endpoint({}, "mock://?dim=8"), kEmbeddingPath, fast_policy());
  const std::string text = "a photo of a map";
  std::vector<EmbeddingInput> items{{content_hash(text), text},
                                    {content_hash(text), text},
                                    {"h", std::vector<std::uint8_t>{1, 2, 3}}};
  const auto v = call_embedding(client, items);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == v[1]);
  CHECK(v[0].size() == 8);
  CHECK(v[2] == MockService::embed(content_hash(std::vector<std::uint8_t>{1, 2, 3}), 8));
  CHECK_THROWS_AS(call_embedding(client, items, std::size_t{16}), ConfigError);

  std::vector<EmbeddingInput> empty{{"h", std::string{}}};
  try {
    call_embedding(client, empty);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "empty embedding input");
  }
}

TEST_CASE("scoring client") {
  ServiceClient client(mock_endpoint(), kScoringPath, fast_policy());
  ImageRef img{"c.png", content_hash(std::string_view{"c"}), "image/png"};
  const auto a = call_scoring(client, img, "Yw==", "prompt", "response");
  CHECK(a == call_scoring(client, img, "Yw==", "prompt", "response"));
  CHECK(a == MockService::score("prompt", "response"));

  auto one_token = std::make_shared<ScriptedTransport>(
      std::deque<HttpResponse>{{200, R"({"token_logprobs":[-0.5]})", ""}});
  ServiceClient c1(mock_endpoint({}, "http://x"), kScoringPath, fast_policy(), one_token);
  CHECK(call_scoring(c1, img, "", "p", "r").size() == 1);

  auto positive = std::make_shared<ScriptedTransport>(
      std::deque<HttpResponse>{{200, R"({"token_logprobs":[-0.5, 0.25]})", ""}});
  ServiceClient c2(mock_endpoint({}, "http://x"), kScoringPath, fast_policy(), positive);
  try {
    call_scoring(c2, img, "", "p", "r");
    FAIL("expected an error");
  } catch (const AttemptError& e) {
    CHECK(std::string(e.what()) == "invalid log-probability > 0");
  }

  auto no_logprobs = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{200, R"({"text":"hi"})", ""}});
  ServiceClient c3(mock_endpoint({}, "http://x"), kScoringPath, fast_policy(), no_logprobs);
  CHECK_THROWS_AS(call_scoring(c3, img, "", "p", "r"), ConfigError);
}

TEST_CASE("backoff stays inside the jitter window") {
  RetryPolicy p;
  p.base_backoff_ms = 100;
  for (int attempt = 1; attempt <= 5; ++attempt) {
    for (int i = 0; i < 50; ++i) {
      const auto d = backoff_delay(p, attempt).count();
      CHECK(d >= 0);
      CHECK(d <= 100 * (1 << (attempt - 1)));
    }
  }
}

TEST_CASE("rate limiter spaces requests") {
  RateLimiter limiter(200.0);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 11; ++i) limiter.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK(elapsed >= std::chrono::milliseconds(45));
}

TEST_CASE("record json round trip") {
  GenerationRecord r;
  r.task_index = 7;
  r.raw_output = "[]";
  r.parsed_pairs = {{"q", "a"}};
  r.status = TaskStatus::parse_failed;
  r.attempts = 2;
  r.latency_ms = 31;
  r.error = "parse";
  const auto back = record_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.task_index == 7);
  CHECK(back.parsed_pairs == r.parsed_pairs);
  CHECK(back.status == TaskStatus::parse_failed);
  CHECK(back.attempts == 2);
  CHECK(back.error == "parse");
}

TEST_CASE("url parsing") {
  CHECK(parse_url("http://host:8080/v1/chat/completions").origin == "http://host:8080");
  CHECK(parse_url("http://host:8080/v1/chat/completions").path == "/v1/chat/completions");
  CHECK(parse_url("https://api.example.com").path.empty());
  CHECK_THROWS_AS(parse_url("localhost:80"), ConfigError);
}
