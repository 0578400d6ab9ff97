#pragma once

// Shared fixtures for the test binaries.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "curatrix/dataset.hpp"
#include "curatrix/hash.hpp"
#include "curatrix/pipeline.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("curatrix-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline curatrix::MultimodalSample make_sample(std::size_t i, std::string label = {}) {
  curatrix::MultimodalSample s;
  const auto hash = curatrix::content_hash("image-" + std::to_string(i));
  s.id = curatrix::make_sample_id(hash, i);
  s.image = {"img/" + std::to_string(i) + ".png", hash, "image/png"};
  s.annotation = {"question " + std::to_string(i), "answer " + std::to_string(i)};
  if (!label.empty()) s.type_label = label;
  s.provenance = curatrix::Provenance::reference;
  return s;
}

// Synthetic inputs on disk: `refs_per_type[k]` references whose image bytes
// name type k, and `n_candidates` candidate images, some per type.
struct SyntheticInputs {
  fs::path references;   // JSONL
  fs::path candidates;   // directory
  std::vector<std::string> types;
};

inline SyntheticInputs make_inputs(const fs::path& root, const std::vector<std::string>& types,
                                   const std::vector<std::size_t>& refs_per_type, std::size_t n_candidates) {
  SyntheticInputs in;
  in.types = types;
  in.references = root / "refs" / "references.jsonl";
  in.candidates = root / "candidates";
  fs::create_directories(in.candidates);
  std::string lines;
  std::size_t n = 0;
  for (std::size_t k = 0; k < types.size(); ++k) {
    for (std::size_t i = 0; i < refs_per_type[k]; ++i, ++n) {
      const auto name = "ref-" + std::to_string(n) + ".png";
      write_file(root / "refs" / name, "reference " + types[k] + " " + std::to_string(i));
      lines += "{\"image\":\"" + name + "\",\"prompt\":\"What does the " + types[k] + " show (" +
               std::to_string(i) + ")?\",\"response\":\"It shows item " + std::to_string(i) + ".\"}\n";
    }
  }
  write_file(in.references, lines);
  for (std::size_t i = 0; i < n_candidates; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "cand-%05zu.png", i);
    write_file(in.candidates / name, "candidate " + std::to_string(i));
  }
  return in;
}

inline curatrix::PipelineConfig mock_config(const SyntheticInputs& in, const fs::path& out, std::size_t n_gen) {
  curatrix::PipelineConfig c;
  c.task_name = "chart understanding";
  c.types = in.types;
  c.reference_path = in.references;
  c.candidate_path = in.candidates;
  c.output_path = out;
  c.n_gen = n_gen;
  c.seed = 7;
  c.label_template = "a photo of a {}";
  c.generation = {"mock://", "mock-teacher", {}, 10'000};
  c.embedding = {"mock://?dim=64", "mock-clip", {}, 10'000};
  c.scoring = {"mock://", "mock-student", {}, 10'000};
  c.retry.base_backoff_ms = 1;
  c.retry.parallelism = 8;
  return c;
}

}  // namespace testing
