#include "curatrix/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "curatrix/hash.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

Quotas allocate_budget(std::size_t n_gen, const std::map<std::string, std::size_t>& ref_counts) {
  if (n_gen < 1) throw PlanError("n_gen must be at least 1");
  if (ref_counts.empty()) throw PlanError("no subgroups with reference samples");
  unsigned __int128 total = 0;
  for (const auto& [label, n] : ref_counts) {
    if (n < 1) throw PlanError("subgroup '" + label + "' has no reference samples");
    total += n;
  }

  struct Share {
    const std::string* label;
    std::size_t count;
    unsigned __int128 remainder;  // numerator over `total`
  };
  Quotas quotas;
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& [label, n] : ref_counts) {
    const unsigned __int128 num = static_cast<unsigned __int128>(n_gen) * n;
    const auto floor_part = static_cast<std::size_t>(num / total);
    quotas[label] = floor_part;
    assigned += floor_part;
    shares.push_back({&label, n, num % total});
  }
  std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.count != b.count) return a.count > b.count;
    return *a.label < *b.label;
  });
  for (std::size_t i = 0; assigned < n_gen; ++i, ++assigned) ++quotas[*shares[i].label];
  return quotas;
}

CandidateCycle::CandidateCycle(std::vector<std::string> candidate_ids, std::uint64_t seed)
    : order_(std::move(candidate_ids)) {
  if (order_.empty()) throw PlanError("empty candidate subgroup");
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(order_));
}

const std::string& CandidateCycle::next() {
  const auto& id = order_[pos_];
  pos_ = (pos_ + 1) % order_.size();
  return id;
}

std::string_view to_string(Sampling s) { return s == Sampling::random ? "random" : "round_robin"; }

Sampling sampling_from_string(std::string_view s) {
  if (s == "round_robin") return Sampling::round_robin;
  if (s == "random") return Sampling::random;
  throw ConfigError("unknown sampling mode '" + std::string(s) + "'");
}

GenerationPlan build_plan(const PartitionResult& partition, std::size_t n_gen, std::uint64_t seed,
                          const PlanOptions& options) {
  if (options.in_context < 1) throw PlanError("in_context must be at least 1");
  std::map<std::string, std::size_t> ref_counts;
  for (const auto& g : partition.subgroups) {
    if (!g.reference_ids.empty()) ref_counts[g.label] = g.reference_ids.size();
  }
  const auto quotas = allocate_budget(n_gen, ref_counts);

  GenerationPlan plan;
  plan.target_count = n_gen;
  plan.rng_seed = seed;
  for (const auto& g : partition.subgroups) {
    auto it = quotas.find(g.label);
    const std::size_t quota = it == quotas.end() ? 0 : it->second;
    plan.per_type_quota.emplace_back(g.label, quota);
    if (quota == 0) continue;
    if (g.candidate_ids.empty()) {
      throw PlanError("subgroup '" + g.label + "' has quota " + std::to_string(quota) + " but no candidate images");
    }
    const std::size_t n_refs = g.reference_ids.size();
    if (options.in_context > n_refs) {
      throw PlanError("in_context " + std::to_string(options.in_context) + " exceeds the " + std::to_string(n_refs) +
                      " reference samples of subgroup '" + g.label + "'");
    }

    std::vector<std::string> refs = g.reference_ids;
    Rng ref_rng(derive_seed(seed, {"references", g.label}));
    ref_rng.shuffle(std::span<std::string>(refs));
    CandidateCycle candidates(g.candidate_ids, derive_seed(seed, {"candidates", g.label}));
    Rng draw_rng(derive_seed(seed, {"draws", g.label}));
    std::vector<std::size_t> slots(n_refs);

    for (std::size_t j = 0; j < quota; ++j) {
      GenerationTask task;
      task.task_index = plan.tasks.size();
      task.type_label = g.label;
      if (options.sampling == Sampling::round_robin) {
        for (std::size_t i = 0; i < options.in_context; ++i) task.reference_ids.push_back(refs[(j + i) % n_refs]);
      } else {
        // Partial Fisher-Yates: the first in_context slots are a uniform draw without replacement.
        std::iota(slots.begin(), slots.end(), std::size_t{0});
        for (std::size_t i = 0; i < options.in_context; ++i) {
          const auto pick = i + static_cast<std::size_t>(draw_rng.index(n_refs - i));
          std::swap(slots[i], slots[pick]);
          task.reference_ids.push_back(refs[slots[i]]);
        }
      }
      task.candidate_id = candidates.next();
      plan.tasks.push_back(std::move(task));
    }
  }
  return plan;
}

ordered_json to_json(const GenerationPlan& plan) {
  ordered_json j;
  j["seed"] = plan.rng_seed;
  j["target_count"] = plan.target_count;
  ordered_json quota = ordered_json::object();
  for (const auto& [label, n] : plan.per_type_quota) quota[label] = n;
  j["per_type_quota"] = quota;
  ordered_json tasks = ordered_json::array();
  for (const auto& t : plan.tasks) {
    ordered_json tj;
    tj["task_index"] = t.task_index;
    tj["type_label"] = t.type_label;
    tj["reference_ids"] = t.reference_ids;
    tj["candidate_id"] = t.candidate_id;
    tasks.push_back(std::move(tj));
  }
  j["tasks"] = std::move(tasks);
  return j;
}

GenerationPlan plan_from_json(const ordered_json& j) {
  GenerationPlan plan;
  plan.rng_seed = j.at("seed").get<std::uint64_t>();
  plan.target_count = j.at("target_count").get<std::size_t>();
  for (const auto& [label, n] : j.at("per_type_quota").items()) plan.per_type_quota.emplace_back(label, n.get<std::size_t>());
  for (const auto& tj : j.at("tasks")) {
    GenerationTask t;
    t.task_index = tj.at("task_index").get<std::size_t>();
    t.type_label = tj.at("type_label").get<std::string>();
    t.reference_ids = tj.at("reference_ids").get<std::vector<std::string>>();
    t.candidate_id = tj.at("candidate_id").get<std::string>();
    if (t.task_index != plan.tasks.size()) throw PlanError("plan task indices must be contiguous from 0");
    if (t.reference_ids.empty()) throw PlanError("plan task " + std::to_string(t.task_index) + " has no references");
    plan.tasks.push_back(std::move(t));
  }
  return plan;
}

std::string serialize_plan(const GenerationPlan& plan) { return to_json(plan).dump(2) + "\n"; }

std::vector<MultimodalSample> subsample_references(const std::vector<MultimodalSample>& references, double fraction,
                                                   std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("reference subsample fraction must be in (0, 1]");
  if (references.empty()) return {};
  const auto n = references.size();
  const auto keep = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5)),
                                            std::size_t{1}, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {"ref-subsample"}));
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<MultimodalSample> out;
  out.reserve(keep);
  for (auto i : idx) out.push_back(references[i]);
  return out;
}

}  // namespace curatrix
