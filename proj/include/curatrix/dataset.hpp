#pragma once

// Canonical record types and the sharded JSONL dataset format.
//
// A dataset is a directory holding shard-00000.jsonl, shard-00001.jsonl, ...
// (one MultimodalSample per line) and a manifest.json describing them.
// Image bytes are never embedded; they live in an ImageStore keyed by
// content hash.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "curatrix/error.hpp"

namespace curatrix {

namespace fs = std::filesystem;

struct ImageRef {
  std::string uri;
  std::string content_hash;
  std::string media_type;

  bool operator==(const ImageRef&) const = default;
};

struct TextAnnotation {
  std::string prompt;
  std::string response;

  bool operator==(const TextAnnotation&) const = default;
};

enum class Provenance { reference, generated, external };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct MultimodalSample {
  std::string id;
  ImageRef image;
  TextAnnotation annotation;
  std::optional<std::string> type_label;
  Provenance provenance = Provenance::reference;
  std::optional<std::string> source_ref_id;

  bool operator==(const MultimodalSample&) const = default;
};

/// "<content_hash[:12]>-<counter>"
std::string make_sample_id(std::string_view content_hash, std::uint64_t counter);

/// Every violated invariant as a human-readable line; empty means valid.
using ValidationReport = std::vector<std::string>;

ValidationReport validate_sample(const MultimodalSample& sample);

class ValidationError : public DatasetError {
 public:
  ValidationError(std::size_t index, ValidationReport report);
  std::size_t index() const { return index_; }
  const ValidationReport& report() const { return report_; }

 private:
  std::size_t index_;
  ValidationReport report_;
};

nlohmann::ordered_json to_json(const MultimodalSample& sample);
MultimodalSample sample_from_json(const nlohmann::json& j);
/// One JSONL line without the trailing newline.
std::string to_jsonl_line(const MultimodalSample& sample);

struct ShardEntry {
  std::string name;
  std::size_t records = 0;
  std::string sha256;

  bool operator==(const ShardEntry&) const = default;
};

struct DatasetManifest {
  std::size_t sample_count = 0;
  std::map<std::string, std::size_t> per_type_counts;
  std::string config_hash;
  std::uint64_t rng_seed = 0;
  std::vector<ShardEntry> shard_list;

  bool operator==(const DatasetManifest&) const = default;
};

// Key used in per_type_counts for samples without a type label.
inline constexpr std::string_view kUnlabeled = "unlabeled";

inline constexpr std::size_t kDefaultShardSize = 10'000;
inline constexpr std::string_view kManifestFile = "manifest.json";

std::string shard_name(std::size_t index);

nlohmann::ordered_json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
/// Canonical serialization; identical manifests serialize to identical bytes.
std::string serialize_manifest(const DatasetManifest& m);

/// Shard files present in `dir`, sorted by index.
std::vector<fs::path> list_shards(const fs::path& dir);

/// Streams every complete record in shard order. A trailing line without a
/// newline is a torn write and is skipped. Malformed lines throw DatasetError
/// naming the shard and byte offset.
void for_each_sample(const fs::path& dir, const std::function<void(const MultimodalSample&)>& fn);
std::vector<MultimodalSample> read_dataset(const fs::path& dir);

struct DatasetInfo {
  std::string config_hash;
  std::uint64_t rng_seed = 0;
};

/// Re-scans every shard. Uses `info` for the provenance fields.
DatasetManifest build_manifest(const fs::path& dir, const DatasetInfo& info);
/// Same, carrying config_hash and rng_seed over from an existing manifest.json.
DatasetManifest build_manifest(const fs::path& dir);

void write_manifest(const fs::path& dir, const DatasetManifest& m);
DatasetManifest read_manifest(const fs::path& dir);

/// Rebuilds and writes manifest.json, returning it.
DatasetManifest finalize_dataset(const fs::path& dir, const DatasetInfo& info);

/// Appends samples to a dataset directory, rolling over to a new shard every
/// `shard_size` records. One writer per dataset.
class ShardWriter {
 public:
  /// Opens `dir`, creating it if needed, positioned after the existing
  /// records. With `keep_records`, records beyond that count are dropped
  /// first (used when resuming from a checkpoint).
  explicit ShardWriter(fs::path dir, std::size_t shard_size = kDefaultShardSize,
                       std::optional<std::size_t> keep_records = std::nullopt);

  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;
  ShardWriter(ShardWriter&&) = default;
  ShardWriter& operator=(ShardWriter&&) = default;

  /// Validates the whole batch first; any invalid sample rejects the batch
  /// with a ValidationError and nothing is written.
  std::size_t append_samples(std::span<const MultimodalSample> samples);

  std::size_t record_count() const { return total_; }
  const fs::path& dir() const { return dir_; }

 private:
  void open_shard(std::size_t index);

  fs::path dir_;
  std::size_t shard_size_;
  std::size_t shard_index_ = 0;
  std::size_t shard_records_ = 0;
  std::size_t total_ = 0;
  std::ofstream out_;
  std::unordered_set<std::string> ids_;
};

/// Content-addressed image bytes: <root>/<hash[0:2]>/<hash>.
class ImageStore {
 public:
  explicit ImageStore(fs::path root) : root_(std::move(root)) {}

  std::string put(std::span<const std::uint8_t> bytes);
  std::optional<std::vector<std::uint8_t>> get(std::string_view hash) const;
  bool contains(std::string_view hash) const;
  fs::path path_for(std::string_view hash) const;
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
};

std::vector<std::uint8_t> read_file_bytes(const fs::path& path);
std::string media_type_for(const fs::path& path);

/// Hashes the file, copies its bytes into `store`, and returns a reference to it.
ImageRef ingest_image(ImageStore& store, const fs::path& path);

/// Bytes for `image`, from the store or from a local uri (hash-checked).
/// nullopt when only a remote URL is available.
std::optional<std::vector<std::uint8_t>> resolve_image_bytes(const ImageStore& store, const ImageRef& image);

/// Writes `text` to `path` via a temp file and rename.
void write_file_atomic(const fs::path& path, std::string_view text);
std::string read_text_file(const fs::path& path);

}  // namespace curatrix
