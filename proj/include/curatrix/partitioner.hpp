#pragma once

// Zero-shot partitioning of reference samples and candidate images into
// image-type subgroups by cosine similarity against label embeddings.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "curatrix/dataset.hpp"

namespace curatrix {

using Embedding = std::vector<double>;

/// Keyed by image content hash.
using EmbeddingTable = std::unordered_map<std::string, Embedding>;

struct LabelEmbedding {
  std::string label;
  Embedding values;
};

/// dot(a, b) / (|a| |b|). Throws PartitionError on dimension mismatch,
/// non-finite entries, or a zero-norm vector ("degenerate embedding").
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Index of the label with maximal similarity; ties go to the lowest index.
std::size_t zero_shot_classify_index(std::span<const double> image, std::span<const LabelEmbedding> labels);

const std::string& zero_shot_classify(std::span<const double> image, std::span<const LabelEmbedding> labels);

struct Subgroup {
  std::string label;
  std::vector<std::string> reference_ids;
  /// Candidate images are identified by content hash.
  std::vector<std::string> candidate_ids;

  bool operator==(const Subgroup&) const = default;
};

struct PartitionResult {
  /// One entry per type, in the order the types were given.
  std::vector<Subgroup> subgroups;

  const Subgroup* find(std::string_view label) const;
  std::size_t reference_count() const;
  std::size_t candidate_count() const;

  bool operator==(const PartitionResult&) const = default;
};

/// Label for the single subgroup used when partitioning is disabled.
inline constexpr std::string_view kAllLabel = "all";

/// Assigns every reference and candidate to its zero-shot label. The chosen
/// label is written back onto each reference's type_label.
PartitionResult partition(std::vector<MultimodalSample>& references, std::span<const ImageRef> pool,
                          std::span<const std::string> types, const EmbeddingTable& image_embeddings,
                          const std::map<std::string, Embedding>& label_embeddings);

/// Everything in one subgroup named `label`.
PartitionResult single_subgroup(std::vector<MultimodalSample>& references, std::span<const ImageRef> pool,
                                std::string_view label = kAllLabel);

/// Text sent to the embedding model for a label: the label verbatim, or the
/// template with every "{}" replaced by the label.
std::string label_prompt(std::string_view label, std::string_view tmpl);

nlohmann::ordered_json to_json(const PartitionResult& p);
PartitionResult partition_from_json(const nlohmann::ordered_json& j);

/// Append-only JSONL cache of embeddings, one {content_hash, model_id, values}
/// object per line.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(fs::path path);

  /// Loads additional entries from another sidecar file without attaching to it.
  void merge_file(const fs::path& path);

  const Embedding* get(std::string_view content_hash, std::string_view model_id) const;
  /// Stores in memory and, if a file is attached, appends a line.
  void put(std::string_view content_hash, std::string_view model_id, const Embedding& values);
  std::size_t size() const { return entries_.size(); }

 private:
  static std::string key(std::string_view content_hash, std::string_view model_id);
  void load(const fs::path& path);

  fs::path path_;
  std::unordered_map<std::string, Embedding> entries_;
};

}  // namespace curatrix
