#pragma once

// Wire clients for the generation, embedding, and scoring services.
//
// Requests go through a Transport so the same clients talk to a real HTTP
// service or to the in-process mock ("mock://" URLs).

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "curatrix/dataset.hpp"
#include "curatrix/partitioner.hpp"
#include "curatrix/prompt.hpp"

namespace curatrix {

using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  /// 0 when the request never produced a response (connect failure, timeout).
  int status = 0;
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) = 0;
};

/// cpp-httplib backed transport for http:// and https:// origins.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string origin, std::chrono::milliseconds timeout);
  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override;

 private:
  std::string origin_;
  std::chrono::milliseconds timeout_;
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // empty when the URL has none
};

ParsedUrl parse_url(const std::string& url);

inline constexpr std::string_view kGenerationPath = "/v1/chat/completions";
inline constexpr std::string_view kEmbeddingPath = "/v1/embeddings";
inline constexpr std::string_view kScoringPath = "/v1/score";

/// One remote service: where it lives, which model to ask for, credentials.
struct Endpoint {
  std::string url;
  std::string model;
  std::string api_key;
  /// Extra headers sent with every request (e.g. X-Mock-Fault).
  Headers headers;
  std::chrono::milliseconds timeout{60'000};
};

/// Builds the transport for an endpoint URL. "mock://" yields the in-process mock.
std::shared_ptr<Transport> make_transport(const Endpoint& endpoint);

struct RetryPolicy {
  int max_attempts = 4;
  int base_backoff_ms = 500;
  /// Requests per second across all workers; 0 disables the cap.
  double rate_limit = 0.0;
  int parallelism = 32;

  void validate() const;
};

/// Spaces request starts at least 1/rate apart. Thread-safe.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_{};
  std::chrono::steady_clock::time_point next_{};
};

/// Full-jitter exponential backoff: uniform in [0, base * 2^(attempt-1)] ms.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

/// A failed single attempt. Retryable for transport errors, 429 and 5xx.
class AttemptError : public Error {
 public:
  AttemptError(int status, bool retryable, const std::string& what)
      : Error(what), status_(status), retryable_(retryable) {}
  int status() const { return status_; }
  bool retryable() const { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

/// Everything a client needs to issue requests against one endpoint.
class ServiceClient {
 public:
  ServiceClient(Endpoint endpoint, std::string_view default_path, RetryPolicy policy,
                std::shared_ptr<Transport> transport = nullptr);

  /// One POST; non-2xx responses throw AttemptError. `attempt` is sent as X-Attempt.
  std::string post_once(const std::string& body, int attempt);

  const Endpoint& endpoint() const { return endpoint_; }
  const RetryPolicy& policy() const { return policy_; }
  std::uint64_t request_count() const;

 private:
  Endpoint endpoint_;
  std::string path_;
  RetryPolicy policy_;
  std::shared_ptr<Transport> transport_;
  std::unique_ptr<RateLimiter> limiter_;
  mutable std::mutex mu_;
  std::uint64_t requests_ = 0;
};

/// Runs `fn(attempt)` until it returns, retrying retryable AttemptErrors with
/// backoff. Returns the value and the number of attempts used. Rethrows the
/// last error when attempts run out.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> std::pair<decltype(fn(1)), int>;

// ---- generation ----------------------------------------------------------

enum class TaskStatus { ok, parse_failed, exhausted_retries, rejected };

std::string_view to_string(TaskStatus s);
TaskStatus task_status_from_string(std::string_view s);

struct GenerationRecord {
  std::size_t task_index = 0;
  std::string raw_output;
  std::vector<TextAnnotation> parsed_pairs;
  TaskStatus status = TaskStatus::ok;
  int attempts = 0;
  std::int64_t latency_ms = 0;
  std::string error;
};

nlohmann::ordered_json to_json(const GenerationRecord& r);
GenerationRecord record_from_json(const nlohmann::json& j);

struct GenerationOptions {
  double temperature = 1.0;
  ImageEncoding encoding = ImageEncoding::b64;
};

/// Single attempt: returns the assistant text of the first choice.
std::string call_generation(ServiceClient& client, const PromptPayload& payload, const GenerationOptions& options,
                            int attempt = 1);

/// Retries transport failures, 429/5xx, and unparseable output (a fresh call
/// each time). Never throws for per-task failures; they land in the record.
GenerationRecord generate(ServiceClient& client, std::size_t task_index, const PromptPayload& payload,
                          const GenerationOptions& options);

// ---- embedding -----------------------------------------------------------

struct EmbeddingInput {
  std::string content_hash;
  /// Label text, or raw image bytes.
  std::variant<std::string, std::vector<std::uint8_t>> content;
};

/// One vector per input, in order, with retries. Throws ConfigError when the
/// dimension differs from `expected_dim` (if set) or within the reply.
std::vector<Embedding> call_embedding(ServiceClient& client, std::span<const EmbeddingInput> items,
                                      std::optional<std::size_t> expected_dim = std::nullopt);

// ---- scoring -------------------------------------------------------------

/// Per-token log-probabilities of `response` given image and prompt, with
/// retries. A reply without token_logprobs is a ConfigError; positive or
/// non-finite values throw AttemptError (not retryable).
std::vector<double> call_scoring(ServiceClient& client, const ImageRef& image, std::string_view image_b64,
                                 std::string_view prompt, std::string_view response);

}  // namespace curatrix

#include "curatrix/detail/retry_impl.hpp"
