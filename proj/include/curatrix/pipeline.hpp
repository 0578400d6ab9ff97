#pragma once

// End-to-end pipeline: configuration, the individual stages, and the run
// report. Every stage reads and writes artifacts in one run directory:
//
//   images/            content-addressed image bytes
//   references/        reference samples (type labels filled in by partition)
//   candidates.jsonl   candidate ImageRefs
//   embeddings.jsonl   embedding cache
//   partition.json     label -> {reference_ids, candidate_ids}
//   plan.json          generation plan
//   generated/         generated dataset (+ checkpoint.json, records.jsonl)
//   scores.jsonl       perplexity report (+ score_failures.jsonl)
//   filtered/          kept samples
//   report.json        RunReport

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "curatrix/clients.hpp"
#include "curatrix/dataset.hpp"
#include "curatrix/filter.hpp"
#include "curatrix/orchestrator.hpp"
#include "curatrix/partitioner.hpp"
#include "curatrix/planner.hpp"

namespace curatrix {

struct EndpointConfig {
  std::string url;
  std::string model;
  Headers headers;
  int timeout_ms = 60'000;
};

struct PipelineConfig {
  std::string task_name;
  std::vector<std::string> types;
  fs::path reference_path;
  fs::path candidate_path;
  fs::path output_path;
  /// Optional precomputed embeddings (JSONL of {content_hash, model_id, values}).
  fs::path embeddings_path;
  std::size_t n_gen = 0;
  std::size_t in_context = 1;
  bool partition_enabled = true;
  Sampling sampling = Sampling::round_robin;
  double retain_fraction = 0.5;
  double low_discard_share = 0.5;
  double ref_subsample = 1.0;
  std::uint64_t seed = 0;
  bool exact_samples = false;
  /// "{}" is replaced by the label; empty embeds labels verbatim.
  std::string label_template;
  std::size_t shard_size = kDefaultShardSize;
  std::size_t embedding_batch = 64;
  double temperature = 1.0;
  ImageEncoding image_encoding = ImageEncoding::b64;
  EndpointConfig generation;
  EndpointConfig embedding;
  EndpointConfig scoring;
  RetryPolicy retry;

  void validate() const;
};

/// Missing keys keep their defaults. API keys in the file are rejected.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
nlohmann::ordered_json to_json(const PipelineConfig& c);
PipelineConfig load_config(const fs::path& path);

/// SHA-256 over the fields that determine the output data (not paths,
/// endpoint URLs, or retry tuning).
std::string config_hash(const PipelineConfig& c);

/// Reads CURATRIX_API_KEY_{GEN,EMB,SCORE}.
Endpoint resolve_endpoint(const EndpointConfig& c, const char* key_env);

/// Transports to use instead of the ones implied by the endpoint URLs.
struct TransportOverrides {
  std::shared_ptr<Transport> generation;
  std::shared_ptr<Transport> embedding;
  std::shared_ptr<Transport> scoring;
};

struct RunPaths {
  fs::path root;

  fs::path images() const { return root / "images"; }
  fs::path references() const { return root / "references"; }
  fs::path candidates() const { return root / "candidates.jsonl"; }
  fs::path embeddings() const { return root / "embeddings.jsonl"; }
  fs::path partition() const { return root / "partition.json"; }
  fs::path plan() const { return root / "plan.json"; }
  fs::path generated() const { return root / "generated"; }
  fs::path checkpoint() const { return root / "generated" / "checkpoint.json"; }
  fs::path records() const { return root / "generated" / "records.jsonl"; }
  fs::path scores() const { return root / "scores.jsonl"; }
  fs::path score_failures() const { return root / "score_failures.jsonl"; }
  fs::path filtered() const { return root / "filtered"; }
  fs::path report() const { return root / "report.json"; }
  fs::path config() const { return root / "config.json"; }
  fs::path timings() const { return root / "timings.json"; }
};

/// Reference inputs: a dataset directory, or JSONL lines of
/// {"image": path, "prompt": .., "response": ..} with paths relative to the file.
std::vector<MultimodalSample> load_references(const fs::path& path, ImageStore& store);
/// Candidate inputs: a directory of image files, or a text file listing one path per line.
/// Duplicate images (same content hash) are kept once.
std::vector<ImageRef> load_candidates(const fs::path& path, ImageStore& store);

std::vector<ImageRef> read_candidates(const fs::path& path);
void write_candidates(const fs::path& path, const std::vector<ImageRef>& candidates);

struct StageOptions {
  TransportOverrides transports;
  /// Forwarded to execute_plan (simulated interruption).
  std::optional<std::size_t> stop_after;
};

PartitionResult stage_partition(const PipelineConfig& c, const StageOptions& opts = {});
GenerationPlan stage_plan(const PipelineConfig& c);
ExecuteResult stage_generate(const PipelineConfig& c, const StageOptions& opts = {});
ScoreRun stage_score(const PipelineConfig& c, const StageOptions& opts = {});
BandCounts stage_filter(const PipelineConfig& c);

struct TypeRow {
  std::string label;
  std::size_t references = 0;
  std::size_t candidates = 0;
  std::size_t quota = 0;
  std::size_t generated = 0;
  std::size_t kept = 0;
};

struct RunReport {
  std::vector<TypeRow> per_type;
  std::size_t references = 0;
  std::size_t candidates = 0;
  std::size_t tasks = 0;
  std::size_t tasks_executed = 0;
  std::size_t ok = 0;
  std::size_t parse_failed = 0;
  std::size_t exhausted_retries = 0;
  std::size_t rejected = 0;
  std::size_t samples_generated = 0;
  std::size_t scored = 0;
  std::size_t score_failures = 0;
  std::size_t kept = 0;
  std::size_t discarded_low = 0;
  std::size_t discarded_high = 0;
  std::map<std::string, double> stage_seconds;
  std::string config_hash;
  std::uint64_t seed = 0;
  /// Reconciliation failures; empty when every count agrees.
  std::vector<std::string> problems;

  bool reconciled() const { return problems.empty(); }
  std::size_t failed_tasks() const { return parse_failed + exhausted_retries + rejected; }
};

/// Rebuilds the report from the artifacts in `run_dir` and reconciles the
/// counts against manifests and shard bytes. Missing artifacts throw.
RunReport build_report(const fs::path& run_dir);
nlohmann::ordered_json to_json(const RunReport& r);
std::string render_table(const RunReport& r);

/// partition -> plan -> generate -> score -> filter, then the report.
RunReport run_pipeline(const PipelineConfig& c, const StageOptions& opts = {});

}  // namespace curatrix
