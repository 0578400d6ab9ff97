#pragma once

// Deterministic stand-in for the generation, embedding, and scoring services.
//
// Every reply is a pure function of the request bytes, the X-Attempt header,
// and the mock's options, so runs against it are reproducible. The same
// MockService backs the in-process transport and the standalone HTTP server.
//
// Fault injection: header "X-Mock-Fault: <kind>:<n>" (or the server's default
// fault) makes attempts 1..n fail, "<kind>:*" makes every attempt fail.
// <kind> is an HTTP status (429, 500, 503, ...) or "malformed" (a 200 whose
// content is prose instead of a JSON array).

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "curatrix/clients.hpp"

namespace curatrix {

struct MockOptions {
  std::size_t dim = 512;
  /// Artificial service time per request.
  int latency_ms = 0;
  /// Applied when a request carries no X-Mock-Fault header.
  std::string default_fault;
};

/// Parses "mock://[host][/path]?dim=N&latency_ms=M&fault=SPEC".
MockOptions mock_options_from_url(const std::string& url);

struct FaultSpec {
  std::string kind;  // "429", "500", "malformed", ...
  int attempts = 0;  // -1 = every attempt
};

/// Throws ConfigError on a malformed spec.
FaultSpec parse_fault(std::string_view spec);

class MockService {
 public:
  explicit MockService(MockOptions options = {});

  HttpResponse handle(std::string_view path, const std::string& body, const Headers& headers);

  /// Two Q/A pairs derived from SHA-256(candidate_hash || first_prompt).
  static std::string generation_text(std::string_view candidate_hash, std::string_view first_prompt);
  /// 1 + (h mod 7) tokens, each -(1 + (h mod 100)/25), h from SHA-256(prompt || response).
  static std::vector<double> score(std::string_view prompt, std::string_view response);
  /// Unit vector of dimension `dim` expanded from SHA-256 of `key`.
  static std::vector<double> embed(std::string_view key, std::size_t dim);

  const MockOptions& options() const { return options_; }
  std::size_t max_in_flight() const { return max_in_flight_.load(); }
  std::uint64_t request_count() const { return requests_.load(); }
  void reset_stats();

 private:
  HttpResponse handle_generation(const std::string& body);
  HttpResponse handle_embedding(const std::string& body) const;
  HttpResponse handle_scoring(const std::string& body) const;

  MockOptions options_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
  std::atomic<std::uint64_t> requests_{0};
};

class MockTransport : public Transport {
 public:
  explicit MockTransport(std::shared_ptr<MockService> service) : service_(std::move(service)) {}
  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override {
    return service_->handle(path, body, headers);
  }

 private:
  std::shared_ptr<MockService> service_;
};

std::shared_ptr<Transport> make_mock_transport(MockOptions options);

/// MockService behind a local HTTP listener.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<MockService> service);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void serve_forever(const std::string& host, int port);
  void stop();
  int port() const { return port_; }
  std::string url() const;

 private:
  struct Impl;
  std::shared_ptr<MockService> service_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace curatrix
