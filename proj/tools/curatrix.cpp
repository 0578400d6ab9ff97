// curatrix: command-line driver for the data curation pipeline.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "curatrix/error.hpp"
#include "curatrix/mock.hpp"
#include "curatrix/pipeline.hpp"

namespace {

using namespace curatrix;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitStage = 2;
constexpr int kExitReconcile = 3;

struct EndpointFlags {
  std::optional<std::string> url;
  std::optional<std::string> model;
  std::vector<std::string> headers;
};

struct Overrides {
  std::string config_path;
  std::optional<std::string> task_name;
  std::optional<std::string> types;
  std::optional<std::string> references;
  std::optional<std::string> candidates;
  std::optional<std::string> output;
  std::optional<std::string> embeddings;
  std::optional<std::size_t> n_gen;
  std::optional<std::size_t> in_context;
  bool no_partition = false;
  std::optional<std::string> sampling;
  std::optional<double> retain_fraction;
  std::optional<double> low_discard_share;
  std::optional<double> ref_subsample;
  std::optional<std::uint64_t> seed;
  std::optional<bool> exact_samples;
  std::optional<std::string> label_template;
  std::optional<std::size_t> shard_size;
  std::optional<std::size_t> embedding_batch;
  std::optional<double> temperature;
  std::optional<std::string> image_encoding;
  EndpointFlags gen, emb, score;
  std::optional<int> timeout_ms;
  std::optional<int> max_attempts;
  std::optional<int> backoff_ms;
  std::optional<double> rate_limit;
  std::optional<int> parallelism;
  std::optional<std::size_t> stop_after;
};

void add_endpoint_flags(CLI::App* app, EndpointFlags& f, const std::string& prefix, const std::string& what) {
  app->add_option("--" + prefix + "-url", f.url, what + " endpoint URL (http(s):// or mock://)");
  app->add_option("--" + prefix + "-model", f.model, what + " model id");
  app->add_option("--" + prefix + "-header", f.headers, what + " extra header \"Name: value\" (repeatable)");
}

void add_config_flags(CLI::App* app, Overrides& o, bool stop_after) {
  app->add_option("-c,--config", o.config_path, "JSON config file (default: ./curatrix.json if present)");
  app->add_option("--task-name", o.task_name, "Task description inserted into the generation prompt");
  app->add_option("--types", o.types, "Comma-separated image-type labels");
  app->add_option("--references", o.references, "Reference dataset directory or JSONL file");
  app->add_option("--candidates", o.candidates, "Candidate image directory or list file");
  app->add_option("-o,--output", o.output, "Run directory");
  app->add_option("--embeddings", o.embeddings, "Precomputed embeddings JSONL");
  app->add_option("--n-gen", o.n_gen, "Number of generation tasks");
  app->add_option("--in-context", o.in_context, "Reference samples per prompt");
  app->add_flag("--no-partition", o.no_partition, "Put every item in a single subgroup \"all\"");
  app->add_option("--sampling", o.sampling, "Reference sampling: round_robin or random");
  app->add_option("--retain-fraction", o.retain_fraction, "Fraction of scored samples to keep");
  app->add_option("--low-discard-share", o.low_discard_share, "Share of discards taken from the low end");
  app->add_option("--ref-subsample", o.ref_subsample, "Keep this fraction of the reference set");
  app->add_option("--seed", o.seed, "RNG seed");
  app->add_option("--exact-samples", o.exact_samples, "Cap generated samples at n_gen (true/false)");
  app->add_option("--label-template", o.label_template, "Label text template, \"{}\" is the label");
  app->add_option("--shard-size", o.shard_size, "Records per dataset shard");
  app->add_option("--embedding-batch", o.embedding_batch, "Inputs per embedding request");
  app->add_option("--temperature", o.temperature, "Generation temperature");
  app->add_option("--image-encoding", o.image_encoding, "Inline image encoding: b64 or data_url");
  add_endpoint_flags(app, o.gen, "gen", "Generation");
  add_endpoint_flags(app, o.emb, "emb", "Embedding");
  add_endpoint_flags(app, o.score, "score", "Scoring");
  app->add_option("--timeout-ms", o.timeout_ms, "Per-request timeout for every endpoint");
  app->add_option("--max-attempts", o.max_attempts, "Attempts per request");
  app->add_option("--backoff-ms", o.backoff_ms, "Base retry backoff");
  app->add_option("--rate-limit", o.rate_limit, "Requests per second per endpoint (0 = unlimited)");
  app->add_option("-j,--parallelism", o.parallelism, "Concurrent requests");
  if (stop_after) {
    app->add_option("--stop-after", o.stop_after, "Stop generation after N committed tasks (resumable)");
  }
}

Headers parse_headers(const std::vector<std::string>& raw) {
  Headers out;
  for (const auto& h : raw) {
    const auto colon = h.find(':');
    if (colon == std::string::npos) throw ConfigError("header must look like \"Name: value\": " + h);
    auto value = h.substr(colon + 1);
    value.erase(0, value.find_first_not_of(' '));
    out.emplace_back(h.substr(0, colon), value);
  }
  return out;
}

void apply(EndpointConfig& e, const EndpointFlags& f, const std::optional<int>& timeout_ms) {
  if (f.url) e.url = *f.url;
  if (f.model) e.model = *f.model;
  if (!f.headers.empty()) e.headers = parse_headers(f.headers);
  if (timeout_ms) e.timeout_ms = *timeout_ms;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    auto item = s.substr(start, end - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

PipelineConfig resolve_config(const Overrides& o) {
  PipelineConfig c;
  if (!o.config_path.empty()) {
    c = load_config(o.config_path);
  } else if (fs::exists("curatrix.json")) {
    c = load_config("curatrix.json");
  }
  if (o.task_name) c.task_name = *o.task_name;
  if (o.types) c.types = split_list(*o.types);
  if (o.references) c.reference_path = *o.references;
  if (o.candidates) c.candidate_path = *o.candidates;
  if (o.output) c.output_path = *o.output;
  if (o.embeddings) c.embeddings_path = *o.embeddings;
  if (o.n_gen) c.n_gen = *o.n_gen;
  if (o.in_context) c.in_context = *o.in_context;
  if (o.no_partition) c.partition_enabled = false;
  if (o.sampling) c.sampling = sampling_from_string(*o.sampling);
  if (o.retain_fraction) c.retain_fraction = *o.retain_fraction;
  if (o.low_discard_share) c.low_discard_share = *o.low_discard_share;
  if (o.ref_subsample) c.ref_subsample = *o.ref_subsample;
  if (o.seed) c.seed = *o.seed;
  if (o.exact_samples) c.exact_samples = *o.exact_samples;
  if (o.label_template) c.label_template = *o.label_template;
  if (o.shard_size) c.shard_size = *o.shard_size;
  if (o.embedding_batch) c.embedding_batch = *o.embedding_batch;
  if (o.temperature) c.temperature = *o.temperature;
  if (o.image_encoding) {
    c = config_from_json(nlohmann::json{{"image_encoding", *o.image_encoding}}, c);
  }
  apply(c.generation, o.gen, o.timeout_ms);
  apply(c.embedding, o.emb, o.timeout_ms);
  apply(c.scoring, o.score, o.timeout_ms);
  if (o.max_attempts) c.retry.max_attempts = *o.max_attempts;
  if (o.backoff_ms) c.retry.base_backoff_ms = *o.backoff_ms;
  if (o.rate_limit) c.retry.rate_limit = *o.rate_limit;
  if (o.parallelism) c.retry.parallelism = *o.parallelism;
  c.validate();
  return c;
}

int print_report(const RunReport& report, bool as_json) {
  if (as_json) {
    std::cout << to_json(report).dump(2) << "\n";
  } else {
    std::cout << render_table(report);
  }
  return report.reconciled() ? kExitOk : kExitReconcile;
}

MockServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curatrix: curate task-specific multimodal fine-tuning data"};
  app.require_subcommand(1);

  Overrides o;
  bool as_json = false;
  std::vector<std::pair<CLI::App*, std::string>> stages;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"partition", "Load inputs, embed, and assign image-type subgroups"},
           {"plan", "Allocate the generation budget and write plan.json"},
           {"generate", "Execute the plan against the generation endpoint (resumable)"},
           {"score", "Score generated samples with the scoring endpoint"},
           {"filter", "Keep the middle perplexity band"},
           {"run", "Run every stage and print the report"}}) {
    auto* sub = app.add_subcommand(name, help);
    add_config_flags(sub, o, name == "generate" || name == "run");
    if (name == "run") sub->add_flag("--json", as_json, "Print the report as JSON");
    stages.emplace_back(sub, name);
  }

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Rebuild and reconcile the report of a run directory");
  report_cmd->add_option("run_dir", report_dir, "Run directory")->required();
  report_cmd->add_flag("--json", as_json, "Print the report as JSON");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t dim = 512;
  int latency_ms = 0;
  std::string fault;
  auto* mock_cmd = app.add_subcommand("mock-serve", "Serve the deterministic mock inference service over HTTP");
  mock_cmd->add_option("--host", host, "Bind address");
  mock_cmd->add_option("--port", port, "Port (0 picks a free one)");
  mock_cmd->add_option("--dim", dim, "Embedding dimension");
  mock_cmd->add_option("--latency-ms", latency_ms, "Added latency per request");
  mock_cmd->add_option("--fault", fault, "Default fault spec, e.g. 429:2, 500:*, malformed:1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (report_cmd->parsed()) {
      const auto report = build_report(report_dir);
      return print_report(report, as_json);
    }

    if (mock_cmd->parsed()) {
      MockOptions mo;
      mo.dim = dim;
      mo.latency_ms = latency_ms;
      if (!fault.empty()) parse_fault(fault);
      mo.default_fault = fault;
      MockServer server(std::make_shared<MockService>(mo));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "mock service listening on " << host << ":" << port << "\n";
      server.serve_forever(host, port);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }

  PipelineConfig config;
  try {
    config = resolve_config(o);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::string stage;
  try {
    StageOptions so;
    so.stop_after = o.stop_after;
    for (const auto& [sub, name] : stages) {
      if (!sub->parsed()) continue;
      stage = name;
      if (name == "partition") {
        const auto result = stage_partition(config, so);
        for (const auto& g : result.subgroups) {
          std::cout << g.label << ": " << g.reference_ids.size() << " references, " << g.candidate_ids.size()
                    << " candidates\n";
        }
      } else if (name == "plan") {
        const auto plan = stage_plan(config);
        for (const auto& [label, quota] : plan.per_type_quota) std::cout << label << ": " << quota << " tasks\n";
      } else if (name == "generate") {
        const auto result = stage_generate(config, so);
        std::cout << result.records.size() << " tasks committed (" << result.resumed_tasks << " resumed), "
                  << result.samples_written << " samples\n";
        if (result.interrupted) {
          std::cerr << "generate: stopped early; rerun to resume\n";
          return kExitStage;
        }
      } else if (name == "score") {
        const auto run = stage_score(config, so);
        std::cout << run.scored.size() << " scored, " << run.failures.size() << " failed\n";
      } else if (name == "filter") {
        const auto counts = stage_filter(config);
        std::cout << "kept " << counts.kept << ", discarded_low " << counts.discarded_low << ", discarded_high "
                  << counts.discarded_high << "\n";
      } else if (name == "run") {
        const auto report = run_pipeline(config, so);
        return print_report(report, as_json);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << stage << " failed: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
