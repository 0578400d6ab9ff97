#include "curatrix/clients.hpp"

#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>

#include "curatrix/hash.hpp"
#include "curatrix/mock.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL lacks a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

HttpTransport::HttpTransport(std::string origin, std::chrono::milliseconds timeout)
    : origin_(std::move(origin)), timeout_(timeout) {}

HttpResponse HttpTransport::post(const std::string& path, const std::string& body, const Headers& headers) {
  httplib::Client cli(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = cli.Post(path, h, body, "application/json");
  if (!res) return {0, "", httplib::to_string(res.error())};
  return {res->status, res->body, ""};
}

std::shared_ptr<Transport> make_transport(const Endpoint& endpoint) {
  if (endpoint.url.starts_with("mock://")) return make_mock_transport(mock_options_from_url(endpoint.url));
  const auto parsed = parse_url(endpoint.url);
  if (!parsed.origin.starts_with("http://") && !parsed.origin.starts_with("https://")) {
    throw ConfigError("unsupported endpoint scheme in '" + endpoint.url + "'");
  }
  return std::make_shared<HttpTransport>(parsed.origin, endpoint.timeout);
}

void RetryPolicy::validate() const {
  if (max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  if (parallelism < 1) throw ConfigError("parallelism must be at least 1");
  if (base_backoff_ms < 0) throw ConfigError("base_backoff_ms must be non-negative");
  if (!(rate_limit >= 0.0) || !std::isfinite(rate_limit)) throw ConfigError("rate_limit must be finite and >= 0");
}

RateLimiter::RateLimiter(double requests_per_second) {
  if (requests_per_second > 0.0) {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  if (interval_.count() == 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  if (policy.base_backoff_ms <= 0) return std::chrono::milliseconds(0);
  thread_local std::mt19937_64 rng{std::hash<std::thread::id>{}(std::this_thread::get_id())};
  const double cap = std::ldexp(static_cast<double>(policy.base_backoff_ms), std::min(attempt - 1, 20));
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::chrono::milliseconds(static_cast<std::int64_t>(u * cap));
}

ServiceClient::ServiceClient(Endpoint endpoint, std::string_view default_path, RetryPolicy policy,
                             std::shared_ptr<Transport> transport)
    : endpoint_(std::move(endpoint)), policy_(policy), transport_(std::move(transport)) {
  policy_.validate();
  if (endpoint_.url.empty()) throw ConfigError("endpoint URL not configured");
  const auto parsed = parse_url(endpoint_.url);
  std::string path = parsed.path;
  if (endpoint_.url.starts_with("mock://")) path = path.substr(0, path.find('?'));
  path_ = path.empty() || path == "/" ? std::string(default_path) : path;
  if (!transport_) transport_ = make_transport(endpoint_);
  limiter_ = std::make_unique<RateLimiter>(policy_.rate_limit);
}

std::uint64_t ServiceClient::request_count() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::string ServiceClient::post_once(const std::string& body, int attempt) {
  limiter_->acquire();
  Headers headers = endpoint_.headers;
  headers.emplace_back("X-Attempt", std::to_string(attempt));
  if (!endpoint_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + endpoint_.api_key);
  {
    std::lock_guard lock(mu_);
    ++requests_;
  }
  auto res = transport_->post(path_, body, headers);
  if (res.status == 0) throw AttemptError(0, true, "transport error: " + res.error);
  if (res.status == 429 || res.status >= 500) {
    throw AttemptError(res.status, true, "HTTP " + std::to_string(res.status));
  }
  if (res.status < 200 || res.status >= 300) {
    throw AttemptError(res.status, false, "HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
  }
  return std::move(res.body);
}

std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::ok:
      return "ok";
    case TaskStatus::parse_failed:
      return "parse_failed";
    case TaskStatus::exhausted_retries:
      return "exhausted_retries";
    case TaskStatus::rejected:
      return "rejected";
  }
  return "ok";
}

TaskStatus task_status_from_string(std::string_view s) {
  if (s == "ok") return TaskStatus::ok;
  if (s == "parse_failed") return TaskStatus::parse_failed;
  if (s == "exhausted_retries") return TaskStatus::exhausted_retries;
  if (s == "rejected") return TaskStatus::rejected;
  throw Error("unknown task status '" + std::string(s) + "'");
}

ordered_json to_json(const GenerationRecord& r) {
  ordered_json j;
  j["task_index"] = r.task_index;
  j["status"] = to_string(r.status);
  j["attempts"] = r.attempts;
  j["latency_ms"] = r.latency_ms;
  ordered_json pairs = ordered_json::array();
  for (const auto& p : r.parsed_pairs) pairs.push_back({{"Q", p.prompt}, {"A", p.response}});
  j["parsed_pairs"] = std::move(pairs);
  j["raw_output"] = r.raw_output;
  j["error"] = r.error;
  return j;
}

GenerationRecord record_from_json(const json& j) {
  GenerationRecord r;
  r.task_index = j.at("task_index").get<std::size_t>();
  r.status = task_status_from_string(j.at("status").get<std::string>());
  r.attempts = j.at("attempts").get<int>();
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  for (const auto& p : j.at("parsed_pairs")) r.parsed_pairs.push_back({p.at("Q"), p.at("A")});
  r.raw_output = j.value("raw_output", "");
  r.error = j.value("error", "");
  return r;
}

std::string call_generation(ServiceClient& client, const PromptPayload& payload, const GenerationOptions& options,
                            int attempt) {
  const auto body =
      generation_request(payload, client.endpoint().model, options.temperature, options.encoding).dump();
  const auto reply = json::parse(client.post_once(body, attempt), nullptr, false);
  if (reply.is_discarded()) throw AttemptError(200, true, "generation reply is not JSON");
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception&) {
    throw AttemptError(200, true, "generation reply lacks choices[0].message.content");
  }
}

GenerationRecord generate(ServiceClient& client, std::size_t task_index, const PromptPayload& payload,
                          const GenerationOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& policy = client.policy();
  GenerationRecord rec;
  rec.task_index = task_index;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    rec.attempts = attempt;
    const bool last = attempt == policy.max_attempts;
    try {
      rec.raw_output = call_generation(client, payload, options, attempt);
    } catch (const AttemptError& e) {
      rec.error = e.what();
      rec.raw_output.clear();
      if (!e.retryable()) {
        rec.status = TaskStatus::rejected;
        break;
      }
      if (last) {
        rec.status = TaskStatus::exhausted_retries;
        break;
      }
      std::this_thread::sleep_for(backoff_delay(policy, attempt));
      continue;
    }
    try {
      rec.parsed_pairs = parse_generation(rec.raw_output);
      rec.status = TaskStatus::ok;
      rec.error.clear();
      break;
    } catch (const ParseError& e) {
      rec.error = std::string("parse: ") + e.what();
      if (last) rec.status = TaskStatus::parse_failed;
    }
  }
  rec.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<Embedding> call_embedding(ServiceClient& client, std::span<const EmbeddingInput> items,
                                      std::optional<std::size_t> expected_dim) {
  if (items.empty()) throw Error("call_embedding needs at least one item");
  ordered_json inputs = ordered_json::array();
  for (const auto& item : items) {
    ordered_json in;
    in["content_hash"] = item.content_hash;
    if (const auto* text = std::get_if<std::string>(&item.content)) {
      if (text->empty()) throw Error("empty embedding input");
      in["text"] = *text;
    } else {
      const auto& bytes = std::get<std::vector<std::uint8_t>>(item.content);
      if (bytes.empty()) throw Error("empty embedding input");
      in["image_b64"] = base64_encode(bytes);
    }
    inputs.push_back(std::move(in));
  }
  ordered_json req;
  req["model"] = client.endpoint().model;
  req["inputs"] = std::move(inputs);
  const auto body = req.dump();

  auto [vectors, attempts] = with_retries(client.policy(), [&](int attempt) {
    const auto reply = json::parse(client.post_once(body, attempt), nullptr, false);
    if (reply.is_discarded() || !reply.contains("vectors") || !reply["vectors"].is_array()) {
      throw AttemptError(200, true, "embedding reply lacks vectors");
    }
    try {
      return reply["vectors"].get<std::vector<Embedding>>();
    } catch (const std::exception&) {
      throw AttemptError(200, true, "embedding reply vectors are not numeric arrays");
    }
  });
  (void)attempts;
  if (vectors.size() != items.size()) {
    throw ConfigError("embedding endpoint returned " + std::to_string(vectors.size()) + " vectors for " +
                      std::to_string(items.size()) + " inputs");
  }
  const std::size_t dim = expected_dim.value_or(vectors.front().size());
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw ConfigError("embedding dimension drift: expected " + std::to_string(dim) + ", got " +
                        std::to_string(v.size()));
    }
  }
  return vectors;
}

std::vector<double> call_scoring(ServiceClient& client, const ImageRef& image, std::string_view image_b64,
                                 std::string_view prompt, std::string_view response) {
  if (response.empty()) throw Error("scoring needs a non-empty response");
  ordered_json img;
  img["content_hash"] = image.content_hash;
  img["media_type"] = image.media_type;
  if (image_b64.empty()) {
    img["url"] = image.uri;
  } else {
    img["data"] = image_b64;
  }
  ordered_json req;
  req["model"] = client.endpoint().model;
  req["image"] = std::move(img);
  req["prompt"] = prompt;
  req["response"] = response;
  const auto body = req.dump();

  auto [logprobs, attempts] = with_retries(client.policy(), [&](int attempt) {
    const auto reply = json::parse(client.post_once(body, attempt), nullptr, false);
    if (reply.is_discarded()) throw AttemptError(200, true, "scoring reply is not JSON");
    if (!reply.contains("token_logprobs") || !reply["token_logprobs"].is_array()) {
      throw ConfigError("scoring endpoint must expose token log-probabilities");
    }
    std::vector<double> out;
    for (const auto& v : reply["token_logprobs"]) {
      if (!v.is_number()) throw AttemptError(200, false, "non-numeric log-probability");
      out.push_back(v.get<double>());
    }
    return out;
  });
  (void)attempts;
  if (logprobs.empty()) throw AttemptError(200, false, "scoring reply has no tokens");
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw AttemptError(200, false, "non-finite log-probability");
    if (lp > 0.0) throw AttemptError(200, false, "invalid log-probability > 0");
  }
  return logprobs;
}

}  // namespace curatrix
