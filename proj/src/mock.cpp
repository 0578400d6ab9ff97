#include "curatrix/mock.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>

#include <httplib.h>

#include "curatrix/hash.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

MockOptions mock_options_from_url(const std::string& url) {
  MockOptions opts;
  const auto q = url.find('?');
  if (q == std::string::npos) return opts;
  std::string_view query(url);
  query.remove_prefix(q + 1);
  while (!query.empty()) {
    const auto amp = query.find('&');
    const auto kv = query.substr(0, amp);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("bad mock URL parameter '" + std::string(kv) + "'");
    const auto key = kv.substr(0, eq);
    const std::string value(kv.substr(eq + 1));
    try {
      if (key == "dim") {
        opts.dim = std::stoul(value);
      } else if (key == "latency_ms") {
        opts.latency_ms = std::stoi(value);
      } else if (key == "fault") {
        parse_fault(value);
        opts.default_fault = value;
      } else {
        throw ConfigError("unknown mock URL parameter '" + std::string(key) + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for mock URL parameter '" + std::string(key) + "'");
    }
    if (amp == std::string_view::npos) break;
    query.remove_prefix(amp + 1);
  }
  if (opts.dim == 0) throw ConfigError("mock embedding dimension must be positive");
  return opts;
}

FaultSpec parse_fault(std::string_view spec) {
  const auto colon = spec.find(':');
  FaultSpec f;
  f.kind = std::string(spec.substr(0, colon));
  const bool is_status = !f.kind.empty() && std::all_of(f.kind.begin(), f.kind.end(), [](unsigned char c) {
    return std::isdigit(c);
  });
  if (!is_status && f.kind != "malformed") throw ConfigError("unknown fault kind '" + f.kind + "'");
  if (colon == std::string_view::npos) {
    f.attempts = -1;
    return f;
  }
  const std::string count(spec.substr(colon + 1));
  if (count == "*") {
    f.attempts = -1;
  } else {
    try {
      f.attempts = std::stoi(count);
    } catch (const std::exception&) {
      throw ConfigError("bad fault attempt count '" + count + "'");
    }
  }
  return f;
}

MockService::MockService(MockOptions options) : options_(std::move(options)) {}

void MockService::reset_stats() {
  max_in_flight_ = 0;
  requests_ = 0;
}

namespace {

std::string header_value(const Headers& headers, std::string_view name) {
  for (const auto& [k, v] : headers) {
    if (k.size() == name.size() && std::equal(k.begin(), k.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
        })) {
      return v;
    }
  }
  return {};
}

HttpResponse json_reply(const ordered_json& j) { return {200, j.dump(), ""}; }

HttpResponse bad_request(const std::string& why) {
  return {400, ordered_json{{"error", why}}.dump(), ""};
}

// Content hash identifying an image part of a chat request.
std::string image_part_key(const json& part) {
  const auto type = part.value("type", "");
  if (type == "image_b64") {
    return content_hash(base64_decode(part.at("image_b64").at("data").get<std::string>()));
  }
  const auto url = part.at("image_url").at("url").get<std::string>();
  if (url.starts_with("data:")) {
    const auto comma = url.find("base64,");
    if (comma == std::string::npos) throw Error("data URL without base64 payload");
    return content_hash(base64_decode(std::string_view(url).substr(comma + 7)));
  }
  return content_hash(url);
}

}  // namespace

std::string MockService::generation_text(std::string_view candidate_hash, std::string_view first_prompt) {
  std::string seed(candidate_hash);
  seed.append(first_prompt);
  const auto tag = to_hex(sha256(seed)).substr(0, 8);
  ordered_json pairs = ordered_json::array();
  for (int i = 1; i <= 2; ++i) {
    const auto n = std::to_string(i);
    pairs.push_back({{"Q", "mock-q-" + tag + "-" + n}, {"A", "mock-a-" + tag + "-" + n}});
  }
  return pairs.dump();
}

std::vector<double> MockService::score(std::string_view prompt, std::string_view response) {
  std::string seed(prompt);
  seed.append(response);
  const auto h = digest_prefix_u64(sha256(seed));
  const double lp = -(1.0 + static_cast<double>(h % 100) / 25.0);
  return std::vector<double>(1 + h % 7, lp);
}

std::vector<double> MockService::embed(std::string_view key, std::size_t dim) {
  std::vector<double> v;
  v.reserve(dim);
  for (std::uint64_t block = 0; v.size() < dim; ++block) {
    const auto d = sha256(std::string(key) + ":" + std::to_string(block));
    for (std::size_t off = 0; off + 8 <= d.size() && v.size() < dim; off += 8) {
      std::uint64_t x = 0;
      for (std::size_t i = 0; i < 8; ++i) x = (x << 8) | d[off + i];
      v.push_back(2.0 * (static_cast<double>(x >> 11) * 0x1.0p-53) - 1.0);
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

HttpResponse MockService::handle(std::string_view path, const std::string& body, const Headers& headers) {
  ++requests_;
  const auto now = ++in_flight_;
  auto prev = max_in_flight_.load();
  while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
  }
  struct Leave {
    std::atomic<std::size_t>& n;
    ~Leave() { --n; }
  } leave{in_flight_};

  if (options_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));

  std::string fault_text = header_value(headers, "X-Mock-Fault");
  if (fault_text.empty()) fault_text = options_.default_fault;
  int attempt = 1;
  if (auto a = header_value(headers, "X-Attempt"); !a.empty()) {
    try {
      attempt = std::stoi(a);
    } catch (const std::exception&) {
      return bad_request("bad X-Attempt header");
    }
  }
  bool malformed = false;
  if (!fault_text.empty()) {
    FaultSpec fault;
    try {
      fault = parse_fault(fault_text);
    } catch (const ConfigError& e) {
      return bad_request(e.what());
    }
    if (fault.attempts < 0 || attempt <= fault.attempts) {
      if (fault.kind == "malformed") {
        malformed = true;
      } else {
        return {std::stoi(fault.kind), ordered_json{{"error", "injected fault"}}.dump(), ""};
      }
    }
  }

  const auto route = path.substr(0, path.find('?'));
  if (route.ends_with("/chat/completions")) {
    if (malformed) {
      ordered_json reply;
      reply["choices"] = ordered_json::array(
          {{{"message", {{"role", "assistant"}, {"content", "Sorry, here are some thoughts about the image instead."}}}}});
      return json_reply(reply);
    }
    return handle_generation(body);
  }
  if (malformed) return {200, "this is not json", ""};
  if (route.ends_with("/embeddings")) return handle_embedding(body);
  if (route.ends_with("/score")) return handle_scoring(body);
  return {404, ordered_json{{"error", "no such route"}}.dump(), ""};
}

HttpResponse MockService::handle_generation(const std::string& body) {
  const auto req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return bad_request("body is not a JSON object");
  try {
    if (!req.at("model").is_string()) return bad_request("model must be a string");
    const auto& messages = req.at("messages");
    if (!messages.is_array()) return bad_request("messages must be an array");
    const json* user_content = nullptr;
    for (const auto& m : messages) {
      if (m.at("role") == "user") user_content = &m.at("content");
    }
    if (user_content == nullptr || !user_content->is_array()) return bad_request("no user message with content parts");
    std::string candidate;
    std::string first_prompt;
    bool have_prompt = false;
    for (const auto& part : *user_content) {
      const auto type = part.at("type").get<std::string>();
      if (type == "text") {
        const auto text = part.at("text").get<std::string>();
        if (!have_prompt && text.starts_with("Q: ")) {
          first_prompt = text.substr(3);
          have_prompt = true;
        }
      } else if (type == "image_b64" || type == "image_url") {
        candidate = image_part_key(part);
      } else {
        return bad_request("unknown content part type '" + type + "'");
      }
    }
    if (candidate.empty()) return bad_request("no image part");
    ordered_json reply;
    reply["choices"] = ordered_json::array(
        {{{"message", {{"role", "assistant"}, {"content", generation_text(candidate, first_prompt)}}}}});
    return json_reply(reply);
  } catch (const std::exception& e) {
    return bad_request(e.what());
  }
}

HttpResponse MockService::handle_embedding(const std::string& body) const {
  const auto req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return bad_request("body is not a JSON object");
  try {
    if (!req.at("model").is_string()) return bad_request("model must be a string");
    const auto& inputs = req.at("inputs");
    if (!inputs.is_array() || inputs.empty()) return bad_request("inputs must be a non-empty array");
    ordered_json vectors = ordered_json::array();
    for (const auto& in : inputs) {
      std::string key;
      if (in.contains("text")) {
        const auto text = in.at("text").get<std::string>();
        if (text.empty()) return bad_request("empty embedding input");
        key = content_hash(text);
      } else if (in.contains("image_b64")) {
        const auto bytes = base64_decode(in.at("image_b64").get<std::string>());
        if (bytes.empty()) return bad_request("empty embedding input");
        key = content_hash(bytes);
      } else if (in.contains("content_hash")) {
        key = in.at("content_hash").get<std::string>();
      } else {
        return bad_request("embedding input needs text, image_b64, or content_hash");
      }
      vectors.push_back(embed(key, options_.dim));
    }
    return json_reply(ordered_json{{"vectors", std::move(vectors)}});
  } catch (const std::exception& e) {
    return bad_request(e.what());
  }
}

HttpResponse MockService::handle_scoring(const std::string& body) const {
  const auto req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return bad_request("body is not a JSON object");
  try {
    if (!req.at("model").is_string()) return bad_request("model must be a string");
    if (!req.at("image").is_object()) return bad_request("image must be an object");
    const auto prompt = req.at("prompt").get<std::string>();
    const auto response = req.at("response").get<std::string>();
    if (response.empty()) return bad_request("response must be non-empty");
    return json_reply(ordered_json{{"token_logprobs", score(prompt, response)}});
  } catch (const std::exception& e) {
    return bad_request(e.what());
  }
}

std::shared_ptr<Transport> make_mock_transport(MockOptions options) {
  return std::make_shared<MockTransport>(std::make_shared<MockService>(std::move(options)));
}

struct MockServer::Impl {
  httplib::Server server;
};

MockServer::MockServer(std::shared_ptr<MockService> service)
    : service_(std::move(service)), impl_(std::make_unique<Impl>()) {
  auto handler = [svc = service_](const httplib::Request& req, httplib::Response& res) {
    Headers headers(req.headers.begin(), req.headers.end());
    auto reply = svc->handle(req.path, req.body, headers);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  impl_->server.Post(".*", handler);
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) throw ConfigError("mock server cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void MockServer::serve_forever(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw ConfigError("mock server cannot bind " + host + ":" + std::to_string(port));
  }
  port_ = port;
  impl_->server.listen_after_bind();
}

void MockServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

}  // namespace curatrix
