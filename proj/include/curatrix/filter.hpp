#pragma once

// Perplexity scoring and middle-band selection of generated samples.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "curatrix/clients.hpp"
#include "curatrix/dataset.hpp"

namespace curatrix {

/// exp(-mean(logprobs)). Throws FilterError on an empty list, NaN, or a
/// positive entry.
double perplexity(std::span<const double> logprobs);

enum class Decision { kept, discarded_low, discarded_high };

std::string_view to_string(Decision d);
Decision decision_from_string(std::string_view s);

struct FilterConfig {
  /// Fraction of scored samples to keep, in (0, 1].
  double retain_fraction = 0.5;
  /// Share of the discards taken from the low-perplexity end, in [0, 1].
  double low_discard_share = 0.5;

  void validate() const;
};

/// round(r * M), halves rounding up.
std::size_t keep_count(std::size_t m, double retain_fraction);

struct PerplexityScore {
  std::string sample_id;
  double perplexity = 0.0;
};

/// Decision for each input, index-aligned. Samples are ranked by
/// (perplexity, sample_id); ranks [low_cut, low_cut + keep) are kept where
/// low_cut = floor((M - keep) * low_discard_share).
std::vector<Decision> select_middle_band(std::span<const PerplexityScore> scores, const FilterConfig& config);

struct ScoredSample {
  std::string sample_id;
  double perplexity = 0.0;
  std::size_t token_count = 0;
  Decision decision = Decision::kept;
};

nlohmann::ordered_json to_json(const ScoredSample& s);
ScoredSample scored_sample_from_json(const nlohmann::json& j);

struct ScoreFailure {
  std::string sample_id;
  std::string error;
};

struct ScoreRun {
  /// Dataset order; decisions not yet assigned.
  std::vector<ScoredSample> scored;
  std::vector<ScoreFailure> failures;
};

/// Scores every sample of the dataset at `input` through `scorer`. Terminal
/// per-sample failures are collected; ConfigErrors abort.
ScoreRun score_dataset(const fs::path& input, ServiceClient& scorer, const ImageStore& store, int parallelism);

struct BandCounts {
  std::size_t kept = 0;
  std::size_t discarded_low = 0;
  std::size_t discarded_high = 0;
};

/// Runs select_middle_band over `scored` and stores each decision.
BandCounts assign_decisions(std::vector<ScoredSample>& scored, const FilterConfig& config);

/// Rewrites the dataset at `output` with the kept samples of `input`, in input order.
DatasetManifest write_filtered(const fs::path& input, const fs::path& output, const std::vector<ScoredSample>& scored,
                               std::size_t shard_size, const DatasetInfo& info);

void write_scores(const fs::path& path, const std::vector<ScoredSample>& scored);
std::vector<ScoredSample> read_scores(const fs::path& path);
void write_score_failures(const fs::path& path, const std::vector<ScoreFailure>& failures);
std::vector<ScoreFailure> read_score_failures(const fs::path& path);

struct FilterResult {
  std::vector<ScoredSample> scored;
  std::vector<ScoreFailure> failures;
  BandCounts counts;
};

struct FilterRunOptions {
  FilterConfig config;
  int parallelism = 32;
  std::size_t shard_size = kDefaultShardSize;
  DatasetInfo info;
};

/// score_dataset + assign_decisions + write_filtered, plus the score report
/// at `scores_path`.
FilterResult filter_dataset(const fs::path& input, const fs::path& output, const fs::path& scores_path,
                            ServiceClient& scorer, const ImageStore& store, const FilterRunOptions& options);

}  // namespace curatrix
