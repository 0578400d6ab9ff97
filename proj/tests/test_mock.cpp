#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "curatrix/clients.hpp"
#include "curatrix/filter.hpp"
#include "curatrix/mock.hpp"
#include "curatrix/prompt.hpp"
#include "support.hpp"

using namespace curatrix;

TEST_CASE("mock score formula against an independent evaluation") {
  for (int i = 0; i < 50; ++i) {
    const std::string prompt = "p" + std::to_string(i), response = "r" + std::to_string(i * 7);
    const auto d = sha256(prompt + response);
    std::uint64_t h = 0;
    for (int b = 0; b < 8; ++b) h = (h << 8) | d[static_cast<std::size_t>(b)];
    const auto lps = MockService::score(prompt, response);
    REQUIRE(lps.size() == 1 + h % 7);
    for (double lp : lps) CHECK(lp == -(1.0 + static_cast<double>(h % 100) / 25.0));
  }
}

TEST_CASE("mock scores spread over 1000 inputs") {
  std::mt19937_64 rng(17);
  std::set<double> distinct;
  for (int i = 0; i < 1'000; ++i) {
    const auto lps = MockService::score("q" + std::to_string(rng()), "a" + std::to_string(rng()));
    distinct.insert(perplexity(lps));
  }
  CHECK(distinct.size() > 1);
  CHECK(MockService::score("x", "y") == MockService::score("x", "y"));
}

TEST_CASE("mock embeddings are deterministic unit vectors") {
  for (std::size_t dim : {1, 3, 64, 512}) {
    const auto v = MockService::embed("abc", dim);
    REQUIRE(v.size() == dim);
    double n = 0;
    for (double x : v) n += x * x;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
    CHECK(v == MockService::embed("abc", dim));
  }
  CHECK(MockService::embed("abc", 16) != MockService::embed("abd", 16));
}

TEST_CASE("mock generation text shape") {
  const auto text = MockService::generation_text(content_hash(std::string_view{"c"}), "first");
  const auto pairs = parse_generation(text);
  REQUIRE(pairs.size() == 2);
  const auto tag = to_hex(sha256(content_hash(std::string_view{"c"}) + "first")).substr(0, 8);
  CHECK(pairs[0].prompt == "mock-q-" + tag + "-1");
  CHECK(pairs[1].response == "mock-a-" + tag + "-2");
}

TEST_CASE("mock rejects malformed requests and unknown routes") {
  MockService mock;
  CHECK(mock.handle("/v1/chat/completions", "not json", {}).status == 400);
  CHECK(mock.handle("/v1/chat/completions", R"({"model":"m"})", {}).status == 400);
  CHECK(mock.handle("/v1/embeddings", R"({"model":"m","inputs":[]})", {}).status == 400);
  CHECK(mock.handle("/v1/score", R"({"model":"m","image":{},"prompt":"p"})", {}).status == 400);
  CHECK(mock.handle("/v1/nothing", "{}", {}).status == 404);
  CHECK(mock.handle("/v1/score", "{}", {{"X-Mock-Fault", "bogus"}}).status == 400);
}

TEST_CASE("fault specs") {
  CHECK(parse_fault("429:2").kind == "429");
  CHECK(parse_fault("429:2").attempts == 2);
  CHECK(parse_fault("500:*").attempts == -1);
  CHECK(parse_fault("malformed:1").kind == "malformed");
  CHECK(parse_fault("429").attempts == -1);
  CHECK_THROWS_AS(parse_fault("teapot:1"), ConfigError);
  const auto o = mock_options_from_url("mock://?dim=7&latency_ms=3&fault=500:1");
  CHECK(o.dim == 7);
  CHECK(o.latency_ms == 3);
  CHECK(o.default_fault == "500:1");
}

TEST_CASE("malformed:1 makes the first reply prose and the second valid") {
  MockService mock;
  const std::string body = generation_request(
                               [] {
                                 PromptPayload p;
                                 p.system_text = "s";
                                 PromptPart img;
                                 img.kind = PromptPart::Kind::image;
                                 img.image = {"https://e.com/a.png", content_hash(std::string_view{"a"}), "image/png"};
                                 p.parts = {img};
                                 return p;
                               }(),
                               "m", 1.0)
                               .dump();
  const auto first = mock.handle("/v1/chat/completions", body, {{"X-Mock-Fault", "malformed:1"}, {"X-Attempt", "1"}});
  const auto second = mock.handle("/v1/chat/completions", body, {{"X-Mock-Fault", "malformed:1"}, {"X-Attempt", "2"}});
  REQUIRE(first.status == 200);
  REQUIRE(second.status == 200);
  const auto content = [](const HttpResponse& r) {
    return nlohmann::json::parse(r.body)["choices"][0]["message"]["content"].get<std::string>();
  };
  CHECK_THROWS_AS(parse_generation(content(first)), ParseError);
  CHECK(parse_generation(content(second)).size() == 2);
  CHECK(mock.handle("/v1/chat/completions", body, {}).body == second.body);
}

TEST_CASE("HTTP mock server serves the real clients") {
  auto service = std::make_shared<MockService>(MockOptions{16, 0, ""});
  MockServer server(service);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);

  RetryPolicy policy;
  policy.base_backoff_ms = 1;
  Endpoint gen{server.url(), "m", "", {{"X-Mock-Fault", "429:2"}}, std::chrono::milliseconds(5'000)};
  ServiceClient generator(gen, kGenerationPath, policy);
  PromptPayload p;
  p.system_text = system_prompt("maps");
  PromptPart img;
  img.kind = PromptPart::Kind::image;
  img.image = {"x.png", content_hash(std::string_view{"x"}), "image/png"};
  img.data_b64 = base64_encode(std::vector<std::uint8_t>{'x'});
  p.parts = {img};
  const auto rec = generate(generator, 0, p, {});
  CHECK(rec.status == TaskStatus::ok);
  CHECK(rec.attempts == 3);

  Endpoint emb{server.url(), "m", "", {}, std::chrono::milliseconds(5'000)};
  ServiceClient embedder(emb, kEmbeddingPath, policy);
  std::vector<EmbeddingInput> items{{"k", std::string("a map")}};
  const auto v = call_embedding(embedder, items);
  CHECK(v.at(0) == MockService::embed(content_hash(std::string_view{"a map"}), 16));

  ServiceClient scorer(emb, kScoringPath, policy);
  CHECK(call_scoring(scorer, img.image, img.data_b64, "p", "r") == MockService::score("p", "r"));

  // Concurrent requests through the listener.
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      if (call_scoring(scorer, img.image, img.data_b64, "p", "r").size() > 0) ++ok;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 8);
  server.stop();

  Endpoint dead{"http://127.0.0.1:" + std::to_string(port), "m", "", {}, std::chrono::milliseconds(500)};
  RetryPolicy two = policy;
  two.max_attempts = 2;
  ServiceClient unreachable(dead, kGenerationPath, two);
  CHECK(generate(unreachable, 0, p, {}).status == TaskStatus::exhausted_retries);
}
