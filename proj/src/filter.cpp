#include "curatrix/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "curatrix/hash.hpp"
#include "curatrix/parallel.hpp"

namespace curatrix {

using nlohmann::json;
using nlohmann::ordered_json;

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw FilterError("perplexity of an empty token list");
  // Neumaier summation in extended precision.
  long double sum = 0.0L, carry = 0.0L;
  for (double lp : logprobs) {
    if (std::isnan(lp)) throw FilterError("NaN log-probability");
    if (lp > 0.0) throw FilterError("invalid log-probability > 0");
    if (!std::isfinite(lp)) throw FilterError("infinite log-probability");
    const long double t = sum + lp;
    carry += std::abs(sum) >= std::abs(static_cast<long double>(lp)) ? (sum - t) + lp : (lp - t) + sum;
    sum = t;
  }
  const auto n = static_cast<long double>(logprobs.size());
  const auto mean = static_cast<double>(sum / n + carry / n);
  return std::exp(-mean);
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::kept:
      return "kept";
    case Decision::discarded_low:
      return "discarded_low";
    case Decision::discarded_high:
      return "discarded_high";
  }
  return "kept";
}

Decision decision_from_string(std::string_view s) {
  if (s == "kept") return Decision::kept;
  if (s == "discarded_low") return Decision::discarded_low;
  if (s == "discarded_high") return Decision::discarded_high;
  throw FilterError("unknown decision '" + std::string(s) + "'");
}

void FilterConfig::validate() const {
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0)) throw ConfigError("retain_fraction must be in (0, 1]");
  if (!(low_discard_share >= 0.0 && low_discard_share <= 1.0)) throw ConfigError("low_discard_share must be in [0, 1]");
}

std::size_t keep_count(std::size_t m, double retain_fraction) {
  const auto k = static_cast<std::size_t>(std::floor(retain_fraction * static_cast<double>(m) + 0.5));
  return std::min(k, m);
}

std::vector<Decision> select_middle_band(std::span<const PerplexityScore> scores, const FilterConfig& config) {
  config.validate();
  for (const auto& s : scores) {
    if (!std::isfinite(s.perplexity) || s.perplexity <= 0.0) {
      throw FilterError("perplexity of " + s.sample_id + " is not finite and positive");
    }
  }
  const std::size_t m = scores.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].perplexity != scores[b].perplexity) return scores[a].perplexity < scores[b].perplexity;
    return scores[a].sample_id < scores[b].sample_id;
  });
  const std::size_t keep = keep_count(m, config.retain_fraction);
  const auto low_cut =
      static_cast<std::size_t>(std::floor(static_cast<double>(m - keep) * config.low_discard_share));

  std::vector<Decision> out(m);
  for (std::size_t rank = 0; rank < m; ++rank) {
    Decision d = Decision::kept;
    if (rank < low_cut) {
      d = Decision::discarded_low;
    } else if (rank >= low_cut + keep) {
      d = Decision::discarded_high;
    }
    out[order[rank]] = d;
  }
  return out;
}

ordered_json to_json(const ScoredSample& s) {
  ordered_json j;
  j["sample_id"] = s.sample_id;
  j["perplexity"] = s.perplexity;
  j["token_count"] = s.token_count;
  j["decision"] = to_string(s.decision);
  return j;
}

ScoredSample scored_sample_from_json(const json& j) {
  ScoredSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.perplexity = j.at("perplexity").get<double>();
  s.token_count = j.at("token_count").get<std::size_t>();
  s.decision = decision_from_string(j.at("decision").get<std::string>());
  return s;
}

ScoreRun score_dataset(const fs::path& input, ServiceClient& scorer, const ImageStore& store, int parallelism) {
  const auto samples = read_dataset(input);
  struct Slot {
    std::optional<std::vector<double>> logprobs;
    std::string error;
  };
  std::vector<Slot> slots(samples.size());
  parallel_for(samples.size(), parallelism, [&](std::size_t i) {
    const auto& s = samples[i];
    try {
      std::string b64;
      if (auto bytes = resolve_image_bytes(store, s.image)) b64 = base64_encode(*bytes);
      slots[i].logprobs = call_scoring(scorer, s.image, b64, s.annotation.prompt, s.annotation.response);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      slots[i].error = e.what();
    }
  });

  ScoreRun run;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!slots[i].logprobs) {
      run.failures.push_back({samples[i].id, slots[i].error});
      continue;
    }
    const auto& lps = *slots[i].logprobs;
    run.scored.push_back({samples[i].id, perplexity(lps), lps.size(), Decision::kept});
  }
  return run;
}

BandCounts assign_decisions(std::vector<ScoredSample>& scored, const FilterConfig& config) {
  std::vector<PerplexityScore> scores;
  scores.reserve(scored.size());
  for (const auto& s : scored) scores.push_back({s.sample_id, s.perplexity});
  const auto decisions = select_middle_band(scores, config);
  BandCounts counts;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    scored[i].decision = decisions[i];
    switch (decisions[i]) {
      case Decision::kept:
        ++counts.kept;
        break;
      case Decision::discarded_low:
        ++counts.discarded_low;
        break;
      case Decision::discarded_high:
        ++counts.discarded_high;
        break;
    }
  }
  return counts;
}

DatasetManifest write_filtered(const fs::path& input, const fs::path& output, const std::vector<ScoredSample>& scored,
                               std::size_t shard_size, const DatasetInfo& info) {
  std::unordered_set<std::string> keep;
  for (const auto& s : scored) {
    if (s.decision == Decision::kept) keep.insert(s.sample_id);
  }
  for (const auto& shard : list_shards(output)) fs::remove(shard);
  {
    ShardWriter writer(output, shard_size);
    std::vector<MultimodalSample> batch;
    for_each_sample(input, [&](const MultimodalSample& s) {
      if (!keep.contains(s.id)) return;
      batch.push_back(s);
      if (batch.size() >= 1024) {
        writer.append_samples(batch);
        batch.clear();
      }
    });
    writer.append_samples(batch);
  }
  return finalize_dataset(output, info);
}

void write_scores(const fs::path& path, const std::vector<ScoredSample>& scored) {
  std::string lines;
  for (const auto& s : scored) lines += to_json(s).dump() + "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, lines);
}

std::vector<ScoredSample> read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FilterError("cannot open score report " + path.string());
  std::vector<ScoredSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(scored_sample_from_json(json::parse(line)));
  }
  return out;
}

void write_score_failures(const fs::path& path, const std::vector<ScoreFailure>& failures) {
  std::string lines;
  for (const auto& f : failures) lines += ordered_json{{"sample_id", f.sample_id}, {"error", f.error}}.dump() + "\n";
  write_file_atomic(path, lines);
}

std::vector<ScoreFailure> read_score_failures(const fs::path& path) {
  std::vector<ScoreFailure> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("sample_id").get<std::string>(), j.value("error", "")});
  }
  return out;
}

FilterResult filter_dataset(const fs::path& input, const fs::path& output, const fs::path& scores_path,
                            ServiceClient& scorer, const ImageStore& store, const FilterRunOptions& options) {
  options.config.validate();
  auto run = score_dataset(input, scorer, store, options.parallelism);
  FilterResult result;
  result.counts = assign_decisions(run.scored, options.config);
  write_filtered(input, output, run.scored, options.shard_size, options.info);
  write_scores(scores_path, run.scored);
  result.scored = std::move(run.scored);
  result.failures = std::move(run.failures);
  return result;
}

}  // namespace curatrix
