#include "curatrix/orchestrator.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <thread>

#include "curatrix/hash.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

SampleIndex make_index(const std::vector<MultimodalSample>& references, const std::vector<ImageRef>& candidates) {
  SampleIndex index;
  for (const auto& r : references) index.references.emplace(r.id, r);
  for (const auto& c : candidates) index.candidates.emplace(c.content_hash, c);
  return index;
}

ordered_json to_json(const Checkpoint& c) {
  ordered_json j;
  j["completed_task_indices"] = c.completed_task_indices;
  j["sample_count"] = c.sample_count;
  j["record_count"] = c.record_count;
  j["plan_hash"] = c.plan_hash;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  c.completed_task_indices = j.at("completed_task_indices").get<std::vector<std::size_t>>();
  c.sample_count = j.value("sample_count", std::size_t{0});
  c.record_count = j.value("record_count", c.completed_task_indices.size());
  c.plan_hash = j.value("plan_hash", "");
  return c;
}

std::optional<Checkpoint> read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return checkpoint_from_json(json::parse(read_text_file(path)));
  } catch (const std::exception& e) {
    throw ConfigError("unreadable checkpoint " + path.string() + ": " + e.what());
  }
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) { write_file_atomic(path, to_json(c).dump() + "\n"); }

std::string plan_hash(const GenerationPlan& plan) { return content_hash(serialize_plan(plan)); }

std::vector<MultimodalSample> samples_for(const GenerationTask& task, const GenerationRecord& record,
                                          const ImageRef& candidate, std::size_t first_counter) {
  std::vector<MultimodalSample> out;
  if (record.status != TaskStatus::ok) return out;
  for (std::size_t i = 0; i < record.parsed_pairs.size(); ++i) {
    MultimodalSample s;
    s.id = make_sample_id(candidate.content_hash, first_counter + i);
    s.image = candidate;
    s.annotation = record.parsed_pairs[i];
    s.type_label = task.type_label;
    s.provenance = Provenance::generated;
    s.source_ref_id = task.reference_ids.front();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<GenerationRecord> read_records(const fs::path& path) {
  std::vector<GenerationRecord> out;
  if (!fs::exists(path)) return out;
  const auto text = read_text_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    out.push_back(record_from_json(json::parse(std::string_view(text).substr(pos, nl - pos))));
    pos = nl + 1;
  }
  return out;
}

namespace {

// Keeps the first `keep` complete lines of a record log.
void truncate_lines(const fs::path& path, std::size_t keep) {
  if (!fs::exists(path)) return;
  const auto text = read_text_file(path);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) throw ConfigError("record log " + path.string() + " is shorter than its checkpoint");
    pos = nl + 1;
  }
  if (pos != text.size()) fs::resize_file(path, pos);
}

}  // namespace

ExecuteResult execute_plan(const GenerationPlan& plan, ServiceClient& generator, const SampleIndex& index,
                           const ImageStore& store, const ExecuteOptions& options) {
  const auto hash = plan_hash(plan);
  ExecuteResult result;

  // Validate the plan against the index before touching any output.
  for (const auto& task : plan.tasks) {
    for (const auto& id : task.reference_ids) {
      if (!index.references.contains(id)) throw ConfigError("plan references unknown sample " + id);
    }
    if (!index.candidates.contains(task.candidate_id)) {
      throw ConfigError("plan references unknown candidate " + task.candidate_id);
    }
  }

  Checkpoint cp;
  cp.plan_hash = hash;
  std::optional<std::size_t> keep_records = 0;
  if (auto existing = read_checkpoint(options.checkpoint_path)) {
    if (existing->plan_hash != hash) {
      throw ConfigError("checkpoint " + options.checkpoint_path.string() + " belongs to a different plan");
    }
    cp = *existing;
    keep_records = cp.sample_count;
    truncate_lines(options.records_path, cp.record_count);
    result.records = read_records(options.records_path);
    result.resumed_tasks = cp.completed_task_indices.size();
  } else if (fs::exists(options.records_path)) {
    fs::remove(options.records_path);
  }

  ShardWriter writer(options.dataset_dir, options.shard_size, keep_records);
  if (writer.record_count() != cp.sample_count) {
    throw ConfigError("dataset " + options.dataset_dir.string() + " holds " + std::to_string(writer.record_count()) +
                      " records but the checkpoint expects " + std::to_string(cp.sample_count));
  }
  if (!options.records_path.empty() && options.records_path.has_parent_path()) {
    fs::create_directories(options.records_path.parent_path());
  }
  std::ofstream records_out(options.records_path, std::ios::app);
  if (!records_out) throw DatasetError("cannot open record log " + options.records_path.string());

  std::vector<bool> done(plan.tasks.size(), false);
  for (auto i : cp.completed_task_indices) {
    if (i < done.size()) done[i] = true;
  }
  std::vector<std::size_t> pending;
  for (const auto& task : plan.tasks) {
    if (!done[task.task_index]) pending.push_back(task.task_index);
  }

  std::mutex mu;
  std::map<std::size_t, GenerationRecord> ready;  // keyed by position in `pending`
  std::size_t commit_pos = 0;
  std::size_t commits = 0;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;

  auto commit = [&](const GenerationRecord& rec) {
    const auto& task = plan.tasks[rec.task_index];
    auto samples = samples_for(task, rec, index.candidates.at(task.candidate_id), writer.record_count());
    if (options.exact_samples) {
      const auto room = plan.target_count > writer.record_count() ? plan.target_count - writer.record_count() : 0;
      if (samples.size() > room) samples.resize(room);
    }
    writer.append_samples(samples);
    records_out << to_json(rec).dump() << '\n';
    records_out.flush();
    if (!records_out) throw DatasetError("write failed on record log " + options.records_path.string());
    cp.completed_task_indices.push_back(rec.task_index);
    cp.sample_count = writer.record_count();
    cp.record_count += 1;
    write_checkpoint(options.checkpoint_path, cp);
    result.records.push_back(rec);
    ++commits;
    if (options.stop_after && commits >= *options.stop_after) stop = true;
  };

  auto worker = [&] {
    while (!stop.load()) {
      const auto pos = next.fetch_add(1);
      if (pos >= pending.size()) return;
      const auto& task = plan.tasks[pending[pos]];
      try {
        std::vector<MultimodalSample> refs;
        for (const auto& id : task.reference_ids) refs.push_back(index.references.at(id));
        PromptPayload payload;
        try {
          payload = build_prompt(options.task_name, refs, index.candidates.at(task.candidate_id), store);
        } catch (const DatasetError& e) {
          throw ConfigError(std::string("task ") + std::to_string(task.task_index) + ": " + e.what());
        }
        auto rec = generate(generator, task.task_index, payload, options.generation);

        std::lock_guard lock(mu);
        if (stop.load()) return;
        ready.emplace(pos, std::move(rec));
        for (auto it = ready.find(commit_pos); it != ready.end() && !stop.load(); it = ready.find(commit_pos)) {
          commit(it->second);
          ready.erase(it);
          ++commit_pos;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
        return;
      }
    }
  };

  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(generator.policy().parallelism), pending.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  records_out.close();
  if (error) std::rethrow_exception(error);

  result.samples_written = writer.record_count();
  result.interrupted = commit_pos < pending.size();
  if (!result.interrupted) finalize_dataset(options.dataset_dir, options.info);
  return result;
}

}  // namespace curatrix
