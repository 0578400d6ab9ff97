#pragma once

// Runs a GenerationPlan against the teacher endpoint with bounded
// parallelism, writing generated samples in plan order and checkpointing
// after every task so an interrupted run resumes to the same output.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "curatrix/clients.hpp"
#include "curatrix/dataset.hpp"
#include "curatrix/planner.hpp"

namespace curatrix {

struct SampleIndex {
  std::unordered_map<std::string, MultimodalSample> references;  // by sample id
  std::unordered_map<std::string, ImageRef> candidates;           // by content hash
};

SampleIndex make_index(const std::vector<MultimodalSample>& references, const std::vector<ImageRef>& candidates);

struct Checkpoint {
  std::vector<std::size_t> completed_task_indices;
  /// Generated records and record-log lines that belong to the completed tasks.
  std::size_t sample_count = 0;
  std::size_t record_count = 0;
  std::string plan_hash;
};

nlohmann::ordered_json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
std::optional<Checkpoint> read_checkpoint(const fs::path& path);
void write_checkpoint(const fs::path& path, const Checkpoint& c);

std::string plan_hash(const GenerationPlan& plan);

struct ExecuteOptions {
  std::string task_name;
  fs::path dataset_dir;
  fs::path checkpoint_path;
  /// records.jsonl: one GenerationRecord per completed task.
  fs::path records_path;
  std::size_t shard_size = kDefaultShardSize;
  /// Truncate the generated samples to the plan's target_count.
  bool exact_samples = false;
  GenerationOptions generation;
  DatasetInfo info;
  /// Stop dispatching after this many tasks commit in this call, leaving the
  /// checkpoint as a killed process would.
  std::optional<std::size_t> stop_after;
};

struct ExecuteResult {
  /// Every completed task's record, in commit order, including earlier sessions.
  std::vector<GenerationRecord> records;
  std::size_t samples_written = 0;
  std::size_t resumed_tasks = 0;
  bool interrupted = false;
};

/// Samples for one ok record: provenance generated, source_ref_id = first reference.
std::vector<MultimodalSample> samples_for(const GenerationTask& task, const GenerationRecord& record,
                                          const ImageRef& candidate, std::size_t first_counter);

/// Resumes from options.checkpoint_path when it exists and matches the plan;
/// otherwise starts the dataset and record log fresh. Per-task failures are
/// recorded, never thrown; ConfigError aborts.
ExecuteResult execute_plan(const GenerationPlan& plan, ServiceClient& generator, const SampleIndex& index,
                           const ImageStore& store, const ExecuteOptions& options);

std::vector<GenerationRecord> read_records(const fs::path& path);

}  // namespace curatrix
