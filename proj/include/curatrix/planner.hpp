#pragma once

// Budget allocation and the deterministic generation plan.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "curatrix/dataset.hpp"
#include "curatrix/partitioner.hpp"
#include "curatrix/random.hpp"

namespace curatrix {

using Quotas = std::map<std::string, std::size_t>;

/// Splits n_gen across subgroups proportionally to their reference counts
/// using largest remainders. Remainder ties go to the larger reference count,
/// then to the lexicographically smaller label. Quotas always sum to n_gen.
Quotas allocate_budget(std::size_t n_gen, const std::map<std::string, std::size_t>& ref_counts);

/// Seeded permutation of the candidates, repeated forever.
class CandidateCycle {
 public:
  CandidateCycle(std::vector<std::string> candidate_ids, std::uint64_t seed);

  const std::string& next();
  const std::vector<std::string>& order() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::size_t pos_ = 0;
};

enum class Sampling { round_robin, random };

std::string_view to_string(Sampling s);
Sampling sampling_from_string(std::string_view s);

struct GenerationTask {
  std::size_t task_index = 0;
  std::string type_label;
  std::vector<std::string> reference_ids;
  std::string candidate_id;

  bool operator==(const GenerationTask&) const = default;
};

struct GenerationPlan {
  std::vector<GenerationTask> tasks;
  std::size_t target_count = 0;
  std::uint64_t rng_seed = 0;
  /// In subgroup order; serialized in that order.
  std::vector<std::pair<std::string, std::size_t>> per_type_quota;

  bool operator==(const GenerationPlan&) const = default;
};

struct PlanOptions {
  std::size_t in_context = 1;
  Sampling sampling = Sampling::round_robin;
};

/// Tasks are laid out subgroup by subgroup. Within a subgroup the first
/// reference of task j is the (j mod n)-th entry of a seeded shuffle of the
/// subgroup's references (random sampling draws it instead); extra in-context
/// references are the next distinct entries. Candidates come from a
/// CandidateCycle.
GenerationPlan build_plan(const PartitionResult& partition, std::size_t n_gen, std::uint64_t seed,
                          const PlanOptions& options = {});

nlohmann::ordered_json to_json(const GenerationPlan& plan);
GenerationPlan plan_from_json(const nlohmann::ordered_json& j);
std::string serialize_plan(const GenerationPlan& plan);

/// Keeps max(1, round(fraction * n)) references chosen by a seeded shuffle,
/// preserving their original order.
std::vector<MultimodalSample> subsample_references(const std::vector<MultimodalSample>& references, double fraction,
                                                   std::uint64_t seed);

}  // namespace curatrix
