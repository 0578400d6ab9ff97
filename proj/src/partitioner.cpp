#include "curatrix/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw PartitionError("embedding dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw PartitionError("non-finite embedding entry");
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw PartitionError("degenerate embedding");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

std::size_t zero_shot_classify_index(std::span<const double> image, std::span<const LabelEmbedding> labels) {
  if (labels.empty()) throw PartitionError("no label embeddings");
  std::size_t best = 0;
  double best_sim = cosine_similarity(image, labels[0].values);
  for (std::size_t i = 1; i < labels.size(); ++i) {
    const double sim = cosine_similarity(image, labels[i].values);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

const std::string& zero_shot_classify(std::span<const double> image, std::span<const LabelEmbedding> labels) {
  return labels[zero_shot_classify_index(image, labels)].label;
}

const Subgroup* PartitionResult::find(std::string_view label) const {
  for (const auto& g : subgroups) {
    if (g.label == label) return &g;
  }
  return nullptr;
}

std::size_t PartitionResult::reference_count() const {
  std::size_t n = 0;
  for (const auto& g : subgroups) n += g.reference_ids.size();
  return n;
}

std::size_t PartitionResult::candidate_count() const {
  std::size_t n = 0;
  for (const auto& g : subgroups) n += g.candidate_ids.size();
  return n;
}

namespace {

const Embedding& lookup(const EmbeddingTable& table, const std::string& hash) {
  auto it = table.find(hash);
  if (it == table.end()) throw PartitionError("missing embedding for content_hash " + hash);
  return it->second;
}

}  // namespace

PartitionResult partition(std::vector<MultimodalSample>& references, std::span<const ImageRef> pool,
                          std::span<const std::string> types, const EmbeddingTable& image_embeddings,
                          const std::map<std::string, Embedding>& label_embeddings) {
  if (types.empty()) throw PartitionError("empty types list");
  std::vector<LabelEmbedding> labels;
  std::set<std::string> seen;
  for (const auto& t : types) {
    if (t.empty()) throw PartitionError("empty type label");
    if (!seen.insert(t).second) throw PartitionError("duplicate type label '" + t + "'");
    auto it = label_embeddings.find(t);
    if (it == label_embeddings.end()) throw PartitionError("missing label embedding for '" + t + "'");
    labels.push_back({t, it->second});
  }

  PartitionResult result;
  for (const auto& t : types) result.subgroups.push_back({t, {}, {}});

  for (auto& ref : references) {
    const auto k = zero_shot_classify_index(lookup(image_embeddings, ref.image.content_hash), labels);
    ref.type_label = labels[k].label;
    result.subgroups[k].reference_ids.push_back(ref.id);
  }
  for (const auto& img : pool) {
    const auto k = zero_shot_classify_index(lookup(image_embeddings, img.content_hash), labels);
    result.subgroups[k].candidate_ids.push_back(img.content_hash);
  }
  return result;
}

PartitionResult single_subgroup(std::vector<MultimodalSample>& references, std::span<const ImageRef> pool,
                                std::string_view label) {
  Subgroup g{std::string(label), {}, {}};
  for (auto& ref : references) {
    ref.type_label = g.label;
    g.reference_ids.push_back(ref.id);
  }
  for (const auto& img : pool) g.candidate_ids.push_back(img.content_hash);
  PartitionResult result;
  result.subgroups.push_back(std::move(g));
  return result;
}

std::string label_prompt(std::string_view label, std::string_view tmpl) {
  if (tmpl.empty()) return std::string(label);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto at = tmpl.find("{}", pos);
    if (at == std::string_view::npos) break;
    out.append(tmpl.substr(pos, at - pos));
    out.append(label);
    pos = at + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

ordered_json to_json(const PartitionResult& p) {
  ordered_json j = ordered_json::object();
  for (const auto& g : p.subgroups) {
    j[g.label] = {{"reference_ids", g.reference_ids}, {"candidate_ids", g.candidate_ids}};
  }
  return j;
}

PartitionResult partition_from_json(const ordered_json& j) {
  PartitionResult p;
  for (const auto& [label, v] : j.items()) {
    p.subgroups.push_back({label, v.at("reference_ids").get<std::vector<std::string>>(),
                           v.at("candidate_ids").get<std::vector<std::string>>()});
  }
  return p;
}

EmbeddingCache::EmbeddingCache(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) load(path_);
}

void EmbeddingCache::merge_file(const fs::path& path) { load(path); }

std::string EmbeddingCache::key(std::string_view content_hash, std::string_view model_id) {
  std::string k(content_hash);
  k.push_back('\0');
  k.append(model_id);
  return k;
}

void EmbeddingCache::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      entries_[key(j.at("content_hash").get<std::string>(), j.at("model_id").get<std::string>())] =
          j.at("values").get<Embedding>();
    } catch (const std::exception& e) {
      // A torn final line from an interrupted run is tolerated.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const Embedding* EmbeddingCache::get(std::string_view content_hash, std::string_view model_id) const {
  auto it = entries_.find(key(content_hash, model_id));
  return it == entries_.end() ? nullptr : &it->second;
}

void EmbeddingCache::put(std::string_view content_hash, std::string_view model_id, const Embedding& values) {
  entries_[key(content_hash, model_id)] = values;
  if (path_.empty()) return;
  ordered_json j;
  j["content_hash"] = content_hash;
  j["model_id"] = model_id;
  j["values"] = values;
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << '\n';
  if (!out) throw DatasetError("cannot append to embedding cache " + path_.string());
}

}  // namespace curatrix
