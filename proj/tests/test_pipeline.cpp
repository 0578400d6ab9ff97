#include <doctest.h>

#include <cstdlib>
#include <set>
#include <sys/wait.h>

#include "curatrix/pipeline.hpp"
#include "support.hpp"

using namespace curatrix;
using testing::TempDir;

namespace {

std::string slurp(const fs::path& p) { return read_text_file(p); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CURATRIX_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("end-to-end run reconciles") {
  TempDir dir;
  const auto in = testing::make_inputs(dir.path(), {"bar chart", "line chart", "pie chart"}, {6, 3, 3}, 60);
  const auto c = testing::mock_config(in, dir / "run", 120);
  const auto report = run_pipeline(c);
  for (const auto& p : report.problems) MESSAGE(p);
  CHECK(report.reconciled());
  CHECK(report.references == 12);
  CHECK(report.candidates == 60);
  CHECK(report.tasks == 120);
  CHECK(report.ok == 120);
  CHECK(report.samples_generated == 240);
  CHECK(report.kept == 120);
  CHECK(report.kept + report.discarded_low + report.discarded_high == report.scored);
  REQUIRE(report.per_type.size() == 3);
  std::size_t gen = 0, kept = 0, quota = 0;
  for (const auto& row : report.per_type) {
    gen += row.generated;
    kept += row.kept;
    quota += row.quota;
  }
  CHECK(gen == report.samples_generated);
  CHECK(kept == report.kept);
  CHECK(quota == 120);
  std::map<std::string, std::size_t> ref_counts;
  for (const auto& row : report.per_type) {
    if (row.references > 0) ref_counts[row.label] = row.references;
  }
  const auto quotas = allocate_budget(120, ref_counts);
  for (const auto& row : report.per_type) CHECK(row.quota == (row.references > 0 ? quotas.at(row.label) : 0));
  CHECK(fs::exists(dir / "run" / "report.json"));

  const auto table = render_table(report);
  CHECK(table.find("bar chart") != std::string::npos);
  CHECK(table.find("reconciliation: ok") != std::string::npos);
  CHECK(build_report(dir / "run").problems.empty());
}

TEST_CASE("same config and seed give byte-identical artifacts; stages compose") {
  TempDir dir;
  const auto in = testing::make_inputs(dir.path(), {"map", "table"}, {4, 4}, 40);
  auto a = testing::mock_config(in, dir / "a", 80);
  auto b = testing::mock_config(in, dir / "b", 80);
  b.retry.parallelism = 3;
  run_pipeline(a);
  run_pipeline(b);

  auto c = testing::mock_config(in, dir / "c", 80);
  stage_partition(c);
  stage_plan(c);
  stage_generate(c);
  stage_score(c);
  stage_filter(c);

  for (const auto* rel : {"partition.json", "plan.json", "generated/manifest.json", "scores.jsonl",
                          "filtered/manifest.json", "references/manifest.json"}) {
    CAPTURE(rel);
    CHECK(slurp(dir / "a" / rel) == slurp(dir / "b" / rel));
    CHECK(slurp(dir / "a" / rel) == slurp(dir / "c" / rel));
  }
}

TEST_CASE("report names a deleted shard and a missing artifact") {
  TempDir dir;
  const auto in = testing::make_inputs(dir.path(), {"map"}, {3}, 10);
  auto c = testing::mock_config(in, dir / "run", 30);
  c.shard_size = 16;
  run_pipeline(c);
  fs::remove(dir / "run" / "generated" / "shard-00001.jsonl");
  const auto report = build_report(dir / "run");
  CHECK_FALSE(report.reconciled());
  bool named = false;
  for (const auto& p : report.problems) named = named || p.find("shard-00001.jsonl") != std::string::npos;
  CHECK(named);

  fs::remove(dir / "run" / "plan.json");
  try {
    build_report(dir / "run");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("plan.json") != std::string::npos);
  }
}

TEST_CASE("ablation knobs") {
  TempDir dir;
  const auto in = testing::make_inputs(dir.path(), {"bar chart", "line chart"}, {20, 20}, 50);

  auto flat = testing::mock_config(in, dir / "flat", 40);
  flat.partition_enabled = false;
  const auto p = stage_partition(flat);
  REQUIRE(p.subgroups.size() == 1);
  CHECK(p.subgroups[0].label == "all");
  CHECK(p.reference_count() == 40);
  CHECK(p.candidate_count() == 50);

  auto three = testing::mock_config(in, dir / "three", 60);
  three.in_context = 3;
  stage_partition(three);
  const auto plan3 = stage_plan(three);
  const auto part3 = partition_from_json(nlohmann::ordered_json::parse(slurp(dir / "three" / "partition.json")));
  for (const auto& t : plan3.tasks) {
    REQUIRE(t.reference_ids.size() == 3);
    const auto& ids = part3.find(t.type_label)->reference_ids;
    for (const auto& r : t.reference_ids) CHECK(std::find(ids.begin(), ids.end(), r) != ids.end());
    CHECK(std::set<std::string>(t.reference_ids.begin(), t.reference_ids.end()).size() == 3);
  }

  auto small = testing::mock_config(in, dir / "small", 500);
  small.ref_subsample = 0.1;
  const auto ps = stage_partition(small);
  CHECK(ps.reference_count() == 4);
  const auto plan = stage_plan(small);
  std::size_t sum = 0;
  for (const auto& [label, q] : plan.per_type_quota) sum += q;
  CHECK(sum == 500);
  CHECK(plan.tasks.size() == 500);
}

TEST_CASE("config json") {
  const auto j = nlohmann::json::parse(R"({
    "task_name": "maps", "types": ["map"], "n_gen": 5, "seed": 3, "sampling": "random",
    "endpoints": {"generation": {"url": "mock://", "model": "g", "headers": {"X-A": "1"}}},
    "retry": {"max_attempts": 2}
  })");
  const auto c = config_from_json(j);
  CHECK(c.task_name == "maps");
  CHECK(c.sampling == Sampling::random);
  CHECK(c.generation.headers == Headers{{"X-A", "1"}});
  CHECK(c.retry.max_attempts == 2);
  CHECK(config_from_json(nlohmann::json::parse(to_json(c).dump())).generation.model == "g");

  auto with_key = j;
  with_key["endpoints"]["generation"]["api_key"] = "sk-123";
  CHECK_THROWS_AS(config_from_json(with_key), ConfigError);

  auto other = c;
  other.output_path = "/elsewhere";
  other.retry.parallelism = 1;
  CHECK(config_hash(other) == config_hash(c));
  other.seed = 4;
  CHECK(config_hash(other) != config_hash(c));

  PipelineConfig bad = c;
  bad.n_gen = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("CLI drives the stages and reports with exit codes") {
  TempDir dir;
  const auto in = testing::make_inputs(dir.path(), {"map", "table"}, {3, 3}, 20);
  auto c = testing::mock_config(in, dir / "run", 24);
  write_file_atomic(dir / "curatrix.json", to_json(c).dump(2));
  const std::string cfg = "--config " + (dir / "curatrix.json").string();

  CHECK(run_cli("run " + cfg) == 0);
  CHECK(run_cli("report " + (dir / "run").string()) == 0);

  const std::string split = cfg + " -o " + (dir / "split").string();
  CHECK(run_cli("partition " + split) == 0);
  CHECK(run_cli("plan " + split) == 0);
  CHECK(run_cli("generate " + split + " --stop-after 5") == 2);
  CHECK(run_cli("generate " + split) == 0);
  CHECK(run_cli("score " + split) == 0);
  CHECK(run_cli("filter " + split) == 0);
  CHECK(slurp(dir / "split" / "generated" / "manifest.json") == slurp(dir / "run" / "generated" / "manifest.json"));
  CHECK(slurp(dir / "split" / "scores.jsonl") == slurp(dir / "run" / "scores.jsonl"));

  CHECK(run_cli("run " + cfg + " -o " + (dir / "flat").string() + " --no-partition") == 0);
  CHECK(partition_from_json(nlohmann::ordered_json::parse(slurp(dir / "flat" / "partition.json"))).subgroups.size() == 1);

  fs::remove(dir / "run" / "filtered" / "shard-00000.jsonl");
  CHECK(run_cli("report " + (dir / "run").string()) == 3);
  CHECK(run_cli("report " + (dir / "nowhere").string()) == 2);
  CHECK(run_cli("run --no-such-flag") == 1);
  CHECK(run_cli("run " + cfg + " --n-gen 0") == 1);
  CHECK(run_cli("plan " + cfg + " -o " + (dir / "empty").string()) == 2);
}
