#include "curatrix/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "curatrix/hash.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::reference:
      return "reference";
    case Provenance::generated:
      return "generated";
    case Provenance::external:
      return "external";
  }
  return "reference";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "reference") return Provenance::reference;
  if (s == "generated") return Provenance::generated;
  if (s == "external") return Provenance::external;
  throw DatasetError("unknown provenance '" + std::string(s) + "'");
}

std::string make_sample_id(std::string_view content_hash, std::uint64_t counter) {
  return std::string(content_hash.substr(0, 12)) + "-" + std::to_string(counter);
}

ValidationReport validate_sample(const MultimodalSample& s) {
  ValidationReport r;
  if (s.id.empty()) r.emplace_back("id empty");
  if (s.image.uri.empty()) r.emplace_back("image.uri empty");
  if (!is_hex_digest(s.image.content_hash)) r.emplace_back("image.content_hash not a 64-char lowercase hex SHA-256");
  if (s.annotation.prompt.empty()) r.emplace_back("annotation.prompt empty");
  if (s.annotation.response.empty()) r.emplace_back("annotation.response empty");
  if (s.type_label && s.type_label->empty()) r.emplace_back("type_label present but empty");
  if (s.provenance == Provenance::generated && (!s.source_ref_id || s.source_ref_id->empty())) {
    r.emplace_back("source_ref_id absent for generated sample");
  }
  return r;
}

namespace {

std::string join_report(std::size_t index, const ValidationReport& report) {
  std::string msg = "invalid sample at batch index " + std::to_string(index) + ":";
  for (const auto& v : report) msg += " " + v + ";";
  return msg;
}

}  // namespace

ValidationError::ValidationError(std::size_t index, ValidationReport report)
    : DatasetError(join_report(index, report)), index_(index), report_(std::move(report)) {}

ordered_json to_json(const MultimodalSample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["image"] = {{"uri", s.image.uri}, {"content_hash", s.image.content_hash}, {"media_type", s.image.media_type}};
  j["annotation"] = {{"prompt", s.annotation.prompt}, {"response", s.annotation.response}};
  j["type_label"] = s.type_label ? ordered_json(*s.type_label) : ordered_json(nullptr);
  j["provenance"] = to_string(s.provenance);
  j["source_ref_id"] = s.source_ref_id ? ordered_json(*s.source_ref_id) : ordered_json(nullptr);
  return j;
}

MultimodalSample sample_from_json(const json& j) {
  MultimodalSample s;
  s.id = j.at("id").get<std::string>();
  const auto& img = j.at("image");
  s.image.uri = img.at("uri").get<std::string>();
  s.image.content_hash = img.at("content_hash").get<std::string>();
  s.image.media_type = img.at("media_type").get<std::string>();
  const auto& ann = j.at("annotation");
  s.annotation.prompt = ann.at("prompt").get<std::string>();
  s.annotation.response = ann.at("response").get<std::string>();
  if (auto it = j.find("type_label"); it != j.end() && !it->is_null()) s.type_label = it->get<std::string>();
  s.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  if (auto it = j.find("source_ref_id"); it != j.end() && !it->is_null()) s.source_ref_id = it->get<std::string>();
  return s;
}

std::string to_jsonl_line(const MultimodalSample& s) { return to_json(s).dump(); }

std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shard-%05zu.jsonl", index);
  return buf;
}

ordered_json to_json(const DatasetManifest& m) {
  ordered_json j;
  j["sample_count"] = m.sample_count;
  ordered_json counts = ordered_json::object();
  for (const auto& [label, n] : m.per_type_counts) counts[label] = n;
  j["per_type_counts"] = counts;
  j["config_hash"] = m.config_hash;
  j["rng_seed"] = m.rng_seed;
  ordered_json shards = ordered_json::array();
  for (const auto& s : m.shard_list) {
    shards.push_back({{"name", s.name}, {"records", s.records}, {"sha256", s.sha256}});
  }
  j["shard_list"] = shards;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.sample_count = j.at("sample_count").get<std::size_t>();
  for (const auto& [label, n] : j.at("per_type_counts").items()) m.per_type_counts[label] = n.get<std::size_t>();
  m.config_hash = j.value("config_hash", "");
  m.rng_seed = j.value("rng_seed", std::uint64_t{0});
  for (const auto& s : j.at("shard_list")) {
    m.shard_list.push_back({s.at("name").get<std::string>(), s.at("records").get<std::size_t>(),
                            s.at("sha256").get<std::string>()});
  }
  return m;
}

std::string serialize_manifest(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

std::vector<fs::path> list_shards(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("shard-") && name.ends_with(".jsonl")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw DatasetError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

// Calls fn(line, byte_offset) for each newline-terminated line of a shard.
template <typename Fn>
void for_each_line(const std::string& bytes, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    fn(std::string_view(bytes).substr(pos, nl - pos), pos);
    pos = nl + 1;
  }
}

MultimodalSample parse_record(std::string_view line, const fs::path& shard, std::size_t offset) {
  try {
    auto s = sample_from_json(json::parse(line));
    if (auto report = validate_sample(s); !report.empty()) throw DatasetError(report.front());
    return s;
  } catch (const std::exception& e) {
    throw DatasetError(shard.filename().string() + ": corrupt record at byte offset " + std::to_string(offset) + ": " +
                       e.what());
  }
}

}  // namespace

void for_each_sample(const fs::path& dir, const std::function<void(const MultimodalSample&)>& fn) {
  for (const auto& shard : list_shards(dir)) {
    const auto bytes = read_text_file(shard);
    for_each_line(bytes, [&](std::string_view line, std::size_t offset) { fn(parse_record(line, shard, offset)); });
  }
}

std::vector<MultimodalSample> read_dataset(const fs::path& dir) {
  std::vector<MultimodalSample> out;
  for_each_sample(dir, [&](const MultimodalSample& s) { out.push_back(s); });
  return out;
}

DatasetManifest build_manifest(const fs::path& dir, const DatasetInfo& info) {
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not readable: " + dir.string());
  DatasetManifest m;
  m.config_hash = info.config_hash;
  m.rng_seed = info.rng_seed;
  for (const auto& shard : list_shards(dir)) {
    const auto bytes = read_text_file(shard);
    ShardEntry entry{shard.filename().string(), 0, content_hash(bytes)};
    for_each_line(bytes, [&](std::string_view line, std::size_t offset) {
      const auto s = parse_record(line, shard, offset);
      ++entry.records;
      ++m.per_type_counts[s.type_label.value_or(std::string(kUnlabeled))];
    });
    m.sample_count += entry.records;
    m.shard_list.push_back(std::move(entry));
  }
  return m;
}

DatasetManifest build_manifest(const fs::path& dir) {
  DatasetInfo info;
  if (fs::exists(dir / kManifestFile)) {
    const auto old = read_manifest(dir);
    info.config_hash = old.config_hash;
    info.rng_seed = old.rng_seed;
  }
  return build_manifest(dir, info);
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  write_file_atomic(dir / kManifestFile, serialize_manifest(m));
}

DatasetManifest read_manifest(const fs::path& dir) {
  const auto path = dir / kManifestFile;
  try {
    return manifest_from_json(json::parse(read_text_file(path)));
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

DatasetManifest finalize_dataset(const fs::path& dir, const DatasetInfo& info) {
  fs::create_directories(dir);
  auto m = build_manifest(dir, info);
  write_manifest(dir, m);
  return m;
}

ShardWriter::ShardWriter(fs::path dir, std::size_t shard_size, std::optional<std::size_t> keep_records)
    : dir_(std::move(dir)), shard_size_(shard_size) {
  if (shard_size_ == 0) throw DatasetError("shard size must be positive");
  fs::create_directories(dir_);
  // Walk existing shards: count complete records, cut torn tails and
  // anything past keep_records.
  std::size_t kept = 0;
  std::optional<std::size_t> last_index;
  for (const auto& shard : list_shards(dir_)) {
    const auto bytes = read_text_file(shard);
    std::size_t end = 0;
    std::size_t records = 0;
    for_each_line(bytes, [&](std::string_view line, std::size_t offset) {
      if (keep_records && kept >= *keep_records) return;
      ids_.insert(parse_record(line, shard, offset).id);
      ++kept;
      ++records;
      end = offset + line.size() + 1;
    });
    if (records == 0) {
      fs::remove(shard);
      continue;
    }
    if (end != bytes.size()) fs::resize_file(shard, end);
    const auto name = shard.filename().string();
    last_index = static_cast<std::size_t>(std::stoul(name.substr(6, name.size() - 12)));
    shard_records_ = records;
  }
  total_ = kept;
  if (last_index) {
    shard_index_ = *last_index;
  } else {
    shard_records_ = 0;
  }
}

void ShardWriter::open_shard(std::size_t index) {
  out_.close();
  out_.clear();
  const auto path = dir_ / shard_name(index);
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw DatasetError("cannot open shard " + path.filename().string() + " for writing");
}

std::size_t ShardWriter::append_samples(std::span<const MultimodalSample> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (auto report = validate_sample(samples[i]); !report.empty()) throw ValidationError(i, std::move(report));
  }
  std::unordered_set<std::string> batch_ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (ids_.contains(samples[i].id) || !batch_ids.insert(samples[i].id).second) {
      throw ValidationError(i, {"duplicate id " + samples[i].id});
    }
  }
  if (samples.empty()) return 0;
  for (const auto& s : samples) {
    if (!out_.is_open() || shard_records_ >= shard_size_) {
      if (shard_records_ >= shard_size_) {
        ++shard_index_;
        shard_records_ = 0;
      }
      open_shard(shard_index_);
    }
    // Whole line in one write; readers ignore a line without its newline.
    std::string line = to_jsonl_line(s);
    line.push_back('\n');
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out_) throw DatasetError("write failed on shard " + shard_name(shard_index_));
    ++shard_records_;
    ++total_;
    ids_.insert(s.id);
  }
  out_.flush();
  if (!out_) throw DatasetError("flush failed on shard " + shard_name(shard_index_));
  return samples.size();
}

fs::path ImageStore::path_for(std::string_view hash) const {
  return root_ / std::string(hash.substr(0, 2)) / std::string(hash);
}

std::string ImageStore::put(std::span<const std::uint8_t> bytes) {
  auto hash = content_hash(bytes);
  const auto path = path_for(hash);
  if (!fs::exists(path)) {
    fs::create_directories(path.parent_path());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  return hash;
}

std::optional<std::vector<std::uint8_t>> ImageStore::get(std::string_view hash) const {
  const auto path = path_for(hash);
  if (!fs::exists(path)) return std::nullopt;
  return read_file_bytes(path);
}

bool ImageStore::contains(std::string_view hash) const { return fs::exists(path_for(hash)); }

std::string media_type_for(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

ImageRef ingest_image(ImageStore& store, const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  ImageRef ref;
  ref.uri = path.string();
  ref.content_hash = store.put(bytes);
  ref.media_type = media_type_for(path);
  return ref;
}

std::optional<std::vector<std::uint8_t>> resolve_image_bytes(const ImageStore& store, const ImageRef& image) {
  if (auto bytes = store.get(image.content_hash)) return bytes;
  if (image.uri.find("://") != std::string::npos) return std::nullopt;
  if (!fs::exists(image.uri)) return std::nullopt;
  auto bytes = read_file_bytes(image.uri);
  if (content_hash(bytes) != image.content_hash) {
    throw DatasetError("content hash mismatch for " + image.uri + " (expected " + image.content_hash + ")");
  }
  return bytes;
}

}  // namespace curatrix
