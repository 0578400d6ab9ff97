#include "curatrix/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>

#include "curatrix/hash.hpp"
#include "curatrix/orchestrator.hpp"
#include "curatrix/parallel.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

void PipelineConfig::validate() const {
  if (task_name.empty()) throw ConfigError("task_name is required");
  if (n_gen < 1) throw ConfigError("n_gen must be at least 1");
  if (in_context < 1) throw ConfigError("in_context must be at least 1");
  if (partition_enabled && types.empty()) throw ConfigError("types must be non-empty when partitioning is enabled");
  if (!(ref_subsample > 0.0 && ref_subsample <= 1.0)) throw ConfigError("ref_subsample must be in (0, 1]");
  if (output_path.empty()) throw ConfigError("output_path is required");
  if (shard_size < 1) throw ConfigError("shard_size must be positive");
  if (embedding_batch < 1) throw ConfigError("embedding_batch must be positive");
  FilterConfig{retain_fraction, low_discard_share}.validate();
  retry.validate();
}

namespace {

EndpointConfig endpoint_from_json(const json& j, EndpointConfig base) {
  if (j.contains("api_key")) throw ConfigError("API keys belong in environment variables, not the config file");
  base.url = j.value("url", base.url);
  base.model = j.value("model", base.model);
  base.timeout_ms = j.value("timeout_ms", base.timeout_ms);
  if (auto it = j.find("headers"); it != j.end()) {
    base.headers.clear();
    for (const auto& [k, v] : it->items()) base.headers.emplace_back(k, v.get<std::string>());
  }
  return base;
}

ordered_json endpoint_to_json(const EndpointConfig& e) {
  ordered_json headers = ordered_json::object();
  for (const auto& [k, v] : e.headers) headers[k] = v;
  return {{"url", e.url}, {"model", e.model}, {"headers", headers}, {"timeout_ms", e.timeout_ms}};
}

std::string_view to_string(ImageEncoding e) { return e == ImageEncoding::data_url ? "data_url" : "b64"; }

ImageEncoding image_encoding_from_string(std::string_view s) {
  if (s == "b64") return ImageEncoding::b64;
  if (s == "data_url") return ImageEncoding::data_url;
  throw ConfigError("unknown image_encoding '" + std::string(s) + "'");
}

}  // namespace

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  try {
    c.task_name = j.value("task_name", c.task_name);
    if (j.contains("types")) c.types = j.at("types").get<std::vector<std::string>>();
    if (j.contains("reference_path")) c.reference_path = j.at("reference_path").get<std::string>();
    if (j.contains("candidate_path")) c.candidate_path = j.at("candidate_path").get<std::string>();
    if (j.contains("output_path")) c.output_path = j.at("output_path").get<std::string>();
    if (j.contains("embeddings_path")) c.embeddings_path = j.at("embeddings_path").get<std::string>();
    c.n_gen = j.value("n_gen", c.n_gen);
    c.in_context = j.value("in_context", c.in_context);
    c.partition_enabled = j.value("partition_enabled", c.partition_enabled);
    if (j.contains("sampling")) c.sampling = sampling_from_string(j.at("sampling").get<std::string>());
    c.retain_fraction = j.value("retain_fraction", c.retain_fraction);
    c.low_discard_share = j.value("low_discard_share", c.low_discard_share);
    c.ref_subsample = j.value("ref_subsample", c.ref_subsample);
    c.seed = j.value("seed", c.seed);
    c.exact_samples = j.value("exact_samples", c.exact_samples);
    c.label_template = j.value("label_template", c.label_template);
    c.shard_size = j.value("shard_size", c.shard_size);
    c.embedding_batch = j.value("embedding_batch", c.embedding_batch);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("image_encoding")) c.image_encoding = image_encoding_from_string(j.at("image_encoding").get<std::string>());
    if (auto it = j.find("endpoints"); it != j.end()) {
      if (it->contains("generation")) c.generation = endpoint_from_json(it->at("generation"), c.generation);
      if (it->contains("embedding")) c.embedding = endpoint_from_json(it->at("embedding"), c.embedding);
      if (it->contains("scoring")) c.scoring = endpoint_from_json(it->at("scoring"), c.scoring);
    }
    if (auto it = j.find("retry"); it != j.end()) {
      c.retry.max_attempts = it->value("max_attempts", c.retry.max_attempts);
      c.retry.base_backoff_ms = it->value("base_backoff_ms", c.retry.base_backoff_ms);
      c.retry.rate_limit = it->value("rate_limit", c.retry.rate_limit);
      c.retry.parallelism = it->value("parallelism", c.retry.parallelism);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["task_name"] = c.task_name;
  j["types"] = c.types;
  j["reference_path"] = c.reference_path.string();
  j["candidate_path"] = c.candidate_path.string();
  j["output_path"] = c.output_path.string();
  j["embeddings_path"] = c.embeddings_path.string();
  j["n_gen"] = c.n_gen;
  j["in_context"] = c.in_context;
  j["partition_enabled"] = c.partition_enabled;
  j["sampling"] = to_string(c.sampling);
  j["retain_fraction"] = c.retain_fraction;
  j["low_discard_share"] = c.low_discard_share;
  j["ref_subsample"] = c.ref_subsample;
  j["seed"] = c.seed;
  j["exact_samples"] = c.exact_samples;
  j["label_template"] = c.label_template;
  j["shard_size"] = c.shard_size;
  j["embedding_batch"] = c.embedding_batch;
  j["temperature"] = c.temperature;
  j["image_encoding"] = to_string(c.image_encoding);
  j["endpoints"] = {{"generation", endpoint_to_json(c.generation)},
                    {"embedding", endpoint_to_json(c.embedding)},
                    {"scoring", endpoint_to_json(c.scoring)}};
  j["retry"] = {{"max_attempts", c.retry.max_attempts},
                {"base_backoff_ms", c.retry.base_backoff_ms},
                {"rate_limit", c.retry.rate_limit},
                {"parallelism", c.retry.parallelism}};
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  auto c = config_from_json(j);
  // Relative paths in a config file are relative to the file.
  const auto base = fs::absolute(path).parent_path();
  for (fs::path* p : {&c.reference_path, &c.candidate_path, &c.output_path, &c.embeddings_path}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return c;
}

std::string config_hash(const PipelineConfig& c) {
  json j;
  j["task_name"] = c.task_name;
  j["types"] = c.types;
  j["n_gen"] = c.n_gen;
  j["in_context"] = c.in_context;
  j["partition_enabled"] = c.partition_enabled;
  j["sampling"] = to_string(c.sampling);
  j["retain_fraction"] = c.retain_fraction;
  j["low_discard_share"] = c.low_discard_share;
  j["ref_subsample"] = c.ref_subsample;
  j["seed"] = c.seed;
  j["exact_samples"] = c.exact_samples;
  j["label_template"] = c.label_template;
  j["shard_size"] = c.shard_size;
  j["temperature"] = c.temperature;
  j["models"] = {c.generation.model, c.embedding.model, c.scoring.model};
  return content_hash(j.dump());
}

Endpoint resolve_endpoint(const EndpointConfig& c, const char* key_env) {
  Endpoint e;
  e.url = c.url;
  e.model = c.model;
  e.headers = c.headers;
  e.timeout = std::chrono::milliseconds(c.timeout_ms);
  if (const char* key = std::getenv(key_env)) e.api_key = key;
  return e;
}

// ---- inputs --------------------------------------------------------------

std::vector<MultimodalSample> load_references(const fs::path& path, ImageStore& store) {
  std::vector<MultimodalSample> refs;
  if (fs::is_directory(path)) {
    refs = read_dataset(path);
    for (auto& r : refs) {
      if (store.contains(r.image.content_hash)) continue;
      auto bytes = resolve_image_bytes(store, r.image);
      if (bytes) store.put(*bytes);
    }
    return refs;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reference file " + path.string());
  const auto base = fs::absolute(path).parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      fs::path img = j.at("image").get<std::string>();
      if (img.is_relative()) img = base / img;
      MultimodalSample s;
      s.image = ingest_image(store, img);
      s.annotation = {j.at("prompt").get<std::string>(), j.at("response").get<std::string>()};
      s.id = j.contains("id") ? j.at("id").get<std::string>() : make_sample_id(s.image.content_hash, refs.size());
      s.provenance = Provenance::reference;
      if (auto report = validate_sample(s); !report.empty()) throw DatasetError(report.front());
      refs.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return refs;
}

std::vector<ImageRef> load_candidates(const fs::path& path, ImageStore& store) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && !entry.path().filename().string().starts_with(".")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open candidate list " + path.string());
    const auto base = fs::absolute(path).parent_path();
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      fs::path p = line;
      files.push_back(p.is_relative() ? base / p : p);
    }
  }
  std::vector<ImageRef> out;
  std::set<std::string> seen;
  for (const auto& f : files) {
    auto ref = ingest_image(store, f);
    if (seen.insert(ref.content_hash).second) out.push_back(std::move(ref));
  }
  return out;
}

std::vector<ImageRef> read_candidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing artifact: " + path.string());
  std::vector<ImageRef> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("uri").get<std::string>(), j.at("content_hash").get<std::string>(),
                   j.at("media_type").get<std::string>()});
  }
  return out;
}

void write_candidates(const fs::path& path, const std::vector<ImageRef>& candidates) {
  std::string text;
  for (const auto& c : candidates) {
    ordered_json j;
    j["uri"] = c.uri;
    j["content_hash"] = c.content_hash;
    j["media_type"] = c.media_type;
    text += j.dump() + "\n";
  }
  write_file_atomic(path, text);
}

// ---- stages --------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

void record_timing(const RunPaths& p, const std::string& stage, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  ordered_json t = ordered_json::object();
  if (fs::exists(p.timings())) t = ordered_json::parse(read_text_file(p.timings()));
  t[stage] = secs;
  write_file_atomic(p.timings(), t.dump(2) + "\n");
}

ordered_json read_json_artifact(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing artifact: " + path.string());
  try {
    return ordered_json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw Error("unreadable artifact " + path.string() + ": " + e.what());
  }
}

DatasetInfo info_for(const PipelineConfig& c) { return {config_hash(c), c.seed}; }

void rewrite_dataset(const fs::path& dir, const std::vector<MultimodalSample>& samples, const PipelineConfig& c) {
  fs::create_directories(dir);
  for (const auto& shard : list_shards(dir)) fs::remove(shard);
  {
    ShardWriter writer(dir, c.shard_size);
    writer.append_samples(samples);
  }
  finalize_dataset(dir, info_for(c));
}

void embed_missing(ServiceClient& client, EmbeddingCache& cache, std::vector<EmbeddingInput> inputs,
                   std::size_t batch) {
  const std::string& model = client.endpoint().model;
  std::vector<EmbeddingInput> todo;
  std::set<std::string> queued;
  for (auto& in : inputs) {
    if (cache.get(in.content_hash, model) == nullptr && queued.insert(in.content_hash).second) {
      todo.push_back(std::move(in));
    }
  }
  const std::size_t batches = (todo.size() + batch - 1) / batch;
  std::mutex mu;
  parallel_for(batches, client.policy().parallelism, [&](std::size_t b) {
    const auto first = b * batch;
    const auto last = std::min(todo.size(), first + batch);
    std::span<const EmbeddingInput> slice(todo.data() + first, last - first);
    std::vector<Embedding> vectors;
    try {
      vectors = call_embedding(client, slice);
    } catch (const AttemptError& e) {
      throw Error(std::string("embedding request failed: ") + e.what());
    }
    std::lock_guard lock(mu);
    for (std::size_t i = 0; i < slice.size(); ++i) cache.put(slice[i].content_hash, model, vectors[i]);
  });
}

}  // namespace

PartitionResult stage_partition(const PipelineConfig& c, const StageOptions& opts) {
  c.validate();
  const auto start = Clock::now();
  RunPaths p{c.output_path};
  fs::create_directories(p.root);
  auto saved = c;
  for (fs::path* path : {&saved.reference_path, &saved.candidate_path, &saved.output_path, &saved.embeddings_path}) {
    if (!path->empty()) *path = fs::absolute(*path);
  }
  write_file_atomic(p.config(), to_json(saved).dump(2) + "\n");

  ImageStore store(p.images());
  auto refs = load_references(c.reference_path, store);
  if (refs.empty()) throw ConfigError("no reference samples in " + c.reference_path.string());
  if (c.ref_subsample < 1.0) refs = subsample_references(refs, c.ref_subsample, c.seed);
  const auto candidates = load_candidates(c.candidate_path, store);
  write_candidates(p.candidates(), candidates);

  PartitionResult result;
  if (!c.partition_enabled) {
    result = single_subgroup(refs, candidates);
  } else {
    ServiceClient client(resolve_endpoint(c.embedding, "CURATRIX_API_KEY_EMB"), kEmbeddingPath, c.retry,
                         opts.transports.embedding);
    EmbeddingCache cache(p.embeddings());
    if (!c.embeddings_path.empty()) cache.merge_file(c.embeddings_path);

    std::vector<EmbeddingInput> inputs;
    for (const auto& r : refs) {
      auto bytes = resolve_image_bytes(store, r.image);
      if (!bytes) throw ConfigError("cannot resolve reference image " + r.image.content_hash);
      inputs.push_back({r.image.content_hash, std::move(*bytes)});
    }
    for (const auto& img : candidates) {
      inputs.push_back({img.content_hash, *store.get(img.content_hash)});
    }
    std::map<std::string, std::string> label_keys;
    for (const auto& t : c.types) {
      auto text = label_prompt(t, c.label_template);
      label_keys[t] = content_hash(text);
      inputs.push_back({label_keys[t], std::move(text)});
    }
    embed_missing(client, cache, std::move(inputs), c.embedding_batch);

    const auto& model = client.endpoint().model;
    std::optional<std::size_t> dim;
    auto fetch = [&](const std::string& hash) -> const Embedding& {
      const auto* v = cache.get(hash, model);
      if (v == nullptr) throw PartitionError("missing embedding for content_hash " + hash);
      if (!dim) dim = v->size();
      if (v->size() != *dim) throw ConfigError("embedding dimension drift in cache for " + hash);
      return *v;
    };
    EmbeddingTable table;
    for (const auto& r : refs) table.emplace(r.image.content_hash, fetch(r.image.content_hash));
    for (const auto& img : candidates) table.emplace(img.content_hash, fetch(img.content_hash));
    std::map<std::string, Embedding> labels;
    for (const auto& t : c.types) labels[t] = fetch(label_keys[t]);
    result = partition(refs, candidates, c.types, table, labels);
  }

  rewrite_dataset(p.references(), refs, c);
  write_file_atomic(p.partition(), to_json(result).dump(2) + "\n");
  record_timing(p, "partition", start);
  return result;
}

GenerationPlan stage_plan(const PipelineConfig& c) {
  c.validate();
  const auto start = Clock::now();
  RunPaths p{c.output_path};
  const auto partition = partition_from_json(read_json_artifact(p.partition()));
  const auto plan = build_plan(partition, c.n_gen, c.seed, {c.in_context, c.sampling});
  write_file_atomic(p.plan(), serialize_plan(plan));
  record_timing(p, "plan", start);
  return plan;
}

ExecuteResult stage_generate(const PipelineConfig& c, const StageOptions& opts) {
  c.validate();
  const auto start = Clock::now();
  RunPaths p{c.output_path};
  const auto plan = plan_from_json(read_json_artifact(p.plan()));
  if (!fs::exists(p.references() / kManifestFile)) throw Error("missing artifact: " + p.references().string());
  const auto index = make_index(read_dataset(p.references()), read_candidates(p.candidates()));
  ImageStore store(p.images());
  ServiceClient client(resolve_endpoint(c.generation, "CURATRIX_API_KEY_GEN"), kGenerationPath, c.retry,
                       opts.transports.generation);

  ExecuteOptions eo;
  eo.task_name = c.task_name;
  eo.dataset_dir = p.generated();
  eo.checkpoint_path = p.checkpoint();
  eo.records_path = p.records();
  eo.shard_size = c.shard_size;
  eo.exact_samples = c.exact_samples;
  eo.generation = {c.temperature, c.image_encoding};
  eo.info = info_for(c);
  eo.stop_after = opts.stop_after;
  auto result = execute_plan(plan, client, index, store, eo);
  record_timing(p, "generate", start);
  return result;
}

ScoreRun stage_score(const PipelineConfig& c, const StageOptions& opts) {
  c.validate();
  const auto start = Clock::now();
  RunPaths p{c.output_path};
  if (!fs::exists(p.generated() / kManifestFile)) throw Error("missing artifact: " + p.generated().string());
  ImageStore store(p.images());
  ServiceClient client(resolve_endpoint(c.scoring, "CURATRIX_API_KEY_SCORE"), kScoringPath, c.retry,
                       opts.transports.scoring);
  auto run = score_dataset(p.generated(), client, store, c.retry.parallelism);
  assign_decisions(run.scored, {c.retain_fraction, c.low_discard_share});
  write_scores(p.scores(), run.scored);
  write_score_failures(p.score_failures(), run.failures);
  record_timing(p, "score", start);
  return run;
}

BandCounts stage_filter(const PipelineConfig& c) {
  c.validate();
  const auto start = Clock::now();
  RunPaths p{c.output_path};
  if (!fs::exists(p.scores())) throw Error("missing artifact: " + p.scores().string());
  auto scored = read_scores(p.scores());
  const auto counts = assign_decisions(scored, {c.retain_fraction, c.low_discard_share});
  write_scores(p.scores(), scored);
  write_filtered(p.generated(), p.filtered(), scored, c.shard_size, info_for(c));
  record_timing(p, "filter", start);
  return counts;
}

// ---- report --------------------------------------------------------------

namespace {

// Checks a dataset directory against its manifest; returns the manifest.
std::optional<DatasetManifest> verify_dataset(const fs::path& dir, const std::string& name,
                                              std::vector<std::string>& problems) {
  if (!fs::exists(dir / kManifestFile)) throw Error("missing artifact: " + (dir / kManifestFile).string());
  const auto manifest = read_manifest(dir);
  bool intact = true;
  for (const auto& shard : manifest.shard_list) {
    const auto path = dir / shard.name;
    if (!fs::exists(path)) {
      problems.push_back(name + "/" + shard.name + " missing");
      intact = false;
      continue;
    }
    if (content_hash(read_text_file(path)) != shard.sha256) {
      problems.push_back(name + "/" + shard.name + " does not match its manifest hash");
      intact = false;
    }
  }
  try {
    const auto rescan = build_manifest(dir, {manifest.config_hash, manifest.rng_seed});
    if (intact && !(rescan == manifest)) problems.push_back(name + "/manifest.json disagrees with a re-scan");
  } catch (const DatasetError& e) {
    problems.push_back(name + ": " + e.what());
  }
  std::size_t per_type = 0;
  for (const auto& [label, n] : manifest.per_type_counts) per_type += n;
  std::size_t shard_total = 0;
  for (const auto& s : manifest.shard_list) shard_total += s.records;
  if (per_type != manifest.sample_count || shard_total != manifest.sample_count) {
    problems.push_back(name + "/manifest.json counts are inconsistent");
  }
  return manifest;
}

template <typename Map>
std::size_t count_of(const Map& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? 0 : it->second;
}

void check(std::vector<std::string>& problems, bool ok, const std::string& what) {
  if (!ok) problems.push_back(what);
}

}  // namespace

RunReport build_report(const fs::path& run_dir) {
  RunPaths p{run_dir};
  RunReport r;
  const auto config = config_from_json(read_json_artifact(p.config()));
  r.config_hash = config_hash(config);
  r.seed = config.seed;
  if (fs::exists(p.timings())) {
    const auto timings = read_json_artifact(p.timings());
    for (const auto& [k, v] : timings.items()) r.stage_seconds[k] = v.get<double>();
  }

  const auto partition = partition_from_json(read_json_artifact(p.partition()));
  const auto plan = plan_from_json(read_json_artifact(p.plan()));
  if (!fs::exists(p.records())) throw Error("missing artifact: " + p.records().string());
  const auto records = read_records(p.records());
  if (!fs::exists(p.scores())) throw Error("missing artifact: " + p.scores().string());
  const auto scores = read_scores(p.scores());
  const auto failures = read_score_failures(p.score_failures());
  const auto candidates = read_candidates(p.candidates());

  auto& problems = r.problems;
  const auto refs_manifest = verify_dataset(p.references(), "references", problems);
  const auto gen_manifest = verify_dataset(p.generated(), "generated", problems);
  const auto filt_manifest = verify_dataset(p.filtered(), "filtered", problems);

  r.references = partition.reference_count();
  r.candidates = partition.candidate_count();
  r.tasks = plan.tasks.size();
  r.tasks_executed = records.size();
  std::size_t pairs = 0;
  for (const auto& rec : records) {
    switch (rec.status) {
      case TaskStatus::ok:
        ++r.ok;
        pairs += rec.parsed_pairs.size();
        break;
      case TaskStatus::parse_failed:
        ++r.parse_failed;
        break;
      case TaskStatus::exhausted_retries:
        ++r.exhausted_retries;
        break;
      case TaskStatus::rejected:
        ++r.rejected;
        break;
    }
  }
  r.samples_generated = gen_manifest->sample_count;
  r.scored = scores.size();
  r.score_failures = failures.size();
  for (const auto& s : scores) {
    switch (s.decision) {
      case Decision::kept:
        ++r.kept;
        break;
      case Decision::discarded_low:
        ++r.discarded_low;
        break;
      case Decision::discarded_high:
        ++r.discarded_high;
        break;
    }
  }

  std::map<std::string, std::size_t> quota;
  for (const auto& [label, n] : plan.per_type_quota) quota[label] = n;
  for (const auto& g : partition.subgroups) {
    r.per_type.push_back({g.label, g.reference_ids.size(), g.candidate_ids.size(), count_of(quota, g.label),
                          count_of(gen_manifest->per_type_counts, g.label),
                          count_of(filt_manifest->per_type_counts, g.label)});
  }

  // Reconciliation.
  check(problems, r.references == refs_manifest->sample_count,
        "partition covers " + std::to_string(r.references) + " references, dataset holds " +
            std::to_string(refs_manifest->sample_count));
  check(problems, r.candidates == candidates.size(),
        "partition covers " + std::to_string(r.candidates) + " candidates, pool holds " +
            std::to_string(candidates.size()));
  std::size_t quota_sum = 0;
  for (const auto& [label, n] : plan.per_type_quota) quota_sum += n;
  check(problems, quota_sum == plan.target_count && r.tasks == plan.target_count,
        "plan quotas/tasks do not sum to target_count");
  check(problems, r.tasks_executed == r.tasks,
        std::to_string(r.tasks_executed) + " of " + std::to_string(r.tasks) + " tasks executed");
  check(problems, r.ok + r.failed_tasks() == r.tasks_executed, "task status counts do not sum to tasks executed");
  const std::size_t expected_samples = config.exact_samples ? std::min(pairs, plan.target_count) : pairs;
  check(problems, r.samples_generated == expected_samples,
        "generated dataset holds " + std::to_string(r.samples_generated) + " samples, records imply " +
            std::to_string(expected_samples));
  check(problems, r.scored + r.score_failures == r.samples_generated,
        "scored + failed (" + std::to_string(r.scored + r.score_failures) + ") != generated (" +
            std::to_string(r.samples_generated) + ")");
  check(problems, r.kept + r.discarded_low + r.discarded_high == r.scored, "decision counts do not sum to scored");
  check(problems, r.kept == keep_count(r.scored, config.retain_fraction),
        "kept " + std::to_string(r.kept) + " != round(r * " + std::to_string(r.scored) + ")");
  check(problems, r.kept == filt_manifest->sample_count,
        "filtered dataset holds " + std::to_string(filt_manifest->sample_count) + " samples, scores keep " +
            std::to_string(r.kept));
  std::size_t gen_rows = 0;
  std::size_t kept_rows = 0;
  for (const auto& row : r.per_type) {
    gen_rows += row.generated;
    kept_rows += row.kept;
  }
  check(problems, gen_rows == r.samples_generated, "per-type generated counts do not sum to the total");
  check(problems, kept_rows == r.kept, "per-type kept counts do not sum to the total");
  return r;
}

ordered_json to_json(const RunReport& r) {
  ordered_json j;
  ordered_json rows = ordered_json::array();
  for (const auto& row : r.per_type) {
    rows.push_back({{"label", row.label},
                    {"references", row.references},
                    {"candidates", row.candidates},
                    {"quota", row.quota},
                    {"generated", row.generated},
                    {"kept", row.kept}});
  }
  j["per_type"] = rows;
  j["references"] = r.references;
  j["candidates"] = r.candidates;
  j["tasks"] = r.tasks;
  j["tasks_executed"] = r.tasks_executed;
  j["ok"] = r.ok;
  j["parse_failed"] = r.parse_failed;
  j["exhausted_retries"] = r.exhausted_retries;
  j["rejected"] = r.rejected;
  j["samples_generated"] = r.samples_generated;
  j["scored"] = r.scored;
  j["score_failures"] = r.score_failures;
  j["kept"] = r.kept;
  j["discarded_low"] = r.discarded_low;
  j["discarded_high"] = r.discarded_high;
  ordered_json secs = ordered_json::object();
  for (const auto& [k, v] : r.stage_seconds) secs[k] = v;
  j["stage_seconds"] = secs;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["reconciled"] = r.reconciled();
  j["problems"] = r.problems;
  return j;
}

std::string render_table(const RunReport& r) {
  std::ostringstream out;
  std::size_t width = 5;
  for (const auto& row : r.per_type) width = std::max(width, row.label.size());
  auto line = [&](const std::string& label, auto refs, auto cands, auto quota, auto gen, auto kept) {
    out << std::left << std::setw(static_cast<int>(width)) << label << std::right << std::setw(12) << refs
        << std::setw(12) << cands << std::setw(10) << quota << std::setw(12) << gen << std::setw(10) << kept << "\n";
  };
  line("type", "references", "candidates", "quota", "generated", "kept");
  std::size_t quota = 0;
  for (const auto& row : r.per_type) {
    line(row.label, row.references, row.candidates, row.quota, row.generated, row.kept);
    quota += row.quota;
  }
  line("total", r.references, r.candidates, quota, r.samples_generated, r.kept);
  out << "\ntasks " << r.tasks << ": ok " << r.ok << ", parse_failed " << r.parse_failed << ", exhausted_retries "
      << r.exhausted_retries << ", rejected " << r.rejected << "\n";
  out << "scored " << r.scored << " (failures " << r.score_failures << "): kept " << r.kept << ", discarded_low "
      << r.discarded_low << ", discarded_high " << r.discarded_high << "\n";
  for (const auto& [stage, secs] : r.stage_seconds) {
    out << "stage " << stage << ": " << std::fixed << std::setprecision(3) << secs << " s\n";
  }
  out << "config " << r.config_hash.substr(0, 16) << " seed " << r.seed << "\n";
  if (r.reconciled()) {
    out << "reconciliation: ok\n";
  } else {
    for (const auto& p : r.problems) out << "reconciliation FAILED: " << p << "\n";
  }
  return out.str();
}

RunReport run_pipeline(const PipelineConfig& c, const StageOptions& opts) {
  c.validate();
  RunPaths p{c.output_path};
  // A fresh run discards stale timings; generation resumes from its checkpoint.
  if (fs::exists(p.timings())) fs::remove(p.timings());
  stage_partition(c, opts);
  stage_plan(c);
  const auto exec = stage_generate(c, opts);
  if (exec.interrupted) throw Error("generate stage interrupted; rerun to resume from the checkpoint");
  stage_score(c, opts);
  stage_filter(c);
  auto report = build_report(p.root);
  write_file_atomic(p.report(), to_json(report).dump(2) + "\n");
  return report;
}

}  // namespace curatrix
