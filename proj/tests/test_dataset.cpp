#include <doctest.h>

#include <random>

#include "curatrix/dataset.hpp"
#include "curatrix/hash.hpp"
#include "support.hpp"

using namespace curatrix;
using testing::make_sample;
using testing::TempDir;

TEST_CASE("sha256 known digests") {
  CHECK(content_hash(std::string_view{}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(content_hash(std::string_view{"abc"}) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(content_hash(std::string_view{"abc"}) == content_hash(std::string_view{"abc"}));
  CHECK(content_hash(std::string_view{"abd"}) != content_hash(std::string_view{"abc"}));
  CHECK(is_hex_digest(content_hash(std::string_view{"x"})));
  CHECK_FALSE(is_hex_digest("ABC"));
}

TEST_CASE("base64 round trip") {
  const std::string text = "foobar";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  CHECK(base64_encode(bytes) == "Zm9vYmFy");
  CHECK(base64_decode("Zm9vYg==") == std::vector<std::uint8_t>{'f', 'o', 'o', 'b'});
  std::mt19937_64 rng(3);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> b(static_cast<std::size_t>(n));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK_THROWS_AS(base64_decode("@@@@"), Error);
}

TEST_CASE("validate_sample") {
  auto s = make_sample(1);
  CHECK(validate_sample(s).empty());

  auto empty_response = s;
  empty_response.annotation.response.clear();
  const auto report = validate_sample(empty_response);
  REQUIRE(report.size() == 1);
  CHECK(report[0] == "annotation.response empty");

  auto generated = s;
  generated.provenance = Provenance::generated;
  CHECK(validate_sample(generated) == ValidationReport{"source_ref_id absent for generated sample"});
  generated.source_ref_id = "ref-1";
  CHECK(validate_sample(generated).empty());

  auto bad_hash = s;
  bad_hash.image.content_hash = "xyz";
  CHECK(validate_sample(bad_hash).size() == 1);

  auto empty_label = s;
  empty_label.type_label = "";
  CHECK(validate_sample(empty_label).size() == 1);
}

TEST_CASE("jsonl round trip preserves every field") {
  std::mt19937_64 rng(11);
  for (std::size_t i = 0; i < 200; ++i) {
    auto s = make_sample(i, (rng() & 1) ? "bar chart" : "");
    s.annotation.prompt += " \"quoted\" \n and unicode \xc3\xa9";
    if (rng() % 3 == 0) {
      s.provenance = Provenance::generated;
      s.source_ref_id = "ref-" + std::to_string(rng() % 10);
    }
    const auto line = to_jsonl_line(s);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(sample_from_json(nlohmann::json::parse(line)) == s);
  }
}

TEST_CASE("jsonl key order is fixed") {
  auto s = make_sample(0, "map");
  const auto line = to_jsonl_line(s);
  const auto pos = [&](const char* k) { return line.find(std::string("\"") + k + "\""); };
  CHECK(pos("id") < pos("image"));
  CHECK(pos("image") < pos("annotation"));
  CHECK(pos("annotation") < pos("type_label"));
  CHECK(pos("type_label") < pos("provenance"));
}

TEST_CASE("sharding 25001 samples into 10000/10000/5001") {
  TempDir dir;
  std::vector<MultimodalSample> samples;
  for (std::size_t i = 0; i < 25'001; ++i) samples.push_back(make_sample(i));
  {
    ShardWriter writer(dir.path(), 10'000);
    CHECK(writer.append_samples(samples) == 25'001);
  }
  const auto m = finalize_dataset(dir.path(), {"cfg", 1});
  REQUIRE(m.shard_list.size() == 3);
  CHECK(m.shard_list[0].records == 10'000);
  CHECK(m.shard_list[1].records == 10'000);
  CHECK(m.shard_list[2].records == 5'001);
  CHECK(m.shard_list[0].name == "shard-00000.jsonl");
  CHECK(m.sample_count == 25'001);
  CHECK(m.per_type_counts.at(std::string(kUnlabeled)) == 25'001);
  CHECK(read_dataset(dir.path()) == samples);
}

TEST_CASE("append_samples edge cases") {
  TempDir dir;
  ShardWriter writer(dir.path(), 10);
  CHECK(writer.append_samples({}) == 0);
  CHECK(list_shards(dir.path()).empty());

  std::vector<MultimodalSample> batch{make_sample(0), make_sample(1), make_sample(2)};
  batch[1].annotation.prompt.clear();
  try {
    writer.append_samples(batch);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.index() == 1);
    CHECK(e.report() == ValidationReport{"annotation.prompt empty"});
  }
  CHECK(writer.record_count() == 0);

  std::vector<MultimodalSample> ok{make_sample(0)};
  CHECK(writer.append_samples(ok) == 1);
  CHECK_THROWS_AS(writer.append_samples(ok), ValidationError);  // duplicate id
  CHECK(writer.record_count() == 1);
}

TEST_CASE("manifest over 500 labelled samples") {
  TempDir dir;
  std::vector<MultimodalSample> samples;
  for (std::size_t i = 0; i < 500; ++i) samples.push_back(make_sample(i, i < 300 ? "bar chart" : "line chart"));
  {
    ShardWriter writer(dir.path(), 128);
    writer.append_samples(samples);
  }
  const auto m = finalize_dataset(dir.path(), {"cfg", 9});
  CHECK(m.sample_count == 500);
  CHECK(m.per_type_counts == std::map<std::string, std::size_t>{{"bar chart", 300}, {"line chart", 200}});
  CHECK(m.shard_list.size() == 4);
  const auto first = read_text_file(dir.path() / "manifest.json");
  finalize_dataset(dir.path(), {"cfg", 9});
  CHECK(read_text_file(dir.path() / "manifest.json") == first);
  CHECK(build_manifest(dir.path()) == m);
  for (const auto& shard : m.shard_list) {
    CHECK(shard.sha256 == content_hash(read_text_file(dir.path() / shard.name)));
  }
}

TEST_CASE("empty dataset manifest") {
  TempDir dir;
  const auto m = finalize_dataset(dir.path(), {"cfg", 0});
  CHECK(m.sample_count == 0);
  CHECK(m.shard_list.empty());
}

TEST_CASE("writer reopen drops a torn tail and appends after it") {
  TempDir dir;
  {
    ShardWriter writer(dir.path(), 100);
    std::vector<MultimodalSample> s{make_sample(0), make_sample(1)};
    writer.append_samples(s);
  }
  {
    std::ofstream out(dir.path() / shard_name(0), std::ios::app);
    out << "{\"id\":\"torn";
  }
  {
    ShardWriter writer(dir.path(), 100);
    CHECK(writer.record_count() == 2);
    std::vector<MultimodalSample> s{make_sample(2)};
    writer.append_samples(s);
  }
  const auto all = read_dataset(dir.path());
  REQUIRE(all.size() == 3);
  CHECK(all[2] == make_sample(2));

  {
    ShardWriter writer(dir.path(), 100, std::size_t{1});
    CHECK(writer.record_count() == 1);
  }
  CHECK(read_dataset(dir.path()).size() == 1);
}

TEST_CASE("corrupt record names shard and offset") {
  TempDir dir;
  testing::write_file(dir.path() / shard_name(0), to_jsonl_line(make_sample(0)) + "\nnot json\n");
  try {
    read_dataset(dir.path());
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    const std::string what = e.what();
    CHECK(what.find("shard-00000.jsonl") != std::string::npos);
    CHECK(what.find("byte offset") != std::string::npos);
  }
}

TEST_CASE("image store is content addressed") {
  TempDir dir;
  ImageStore store(dir.path());
  const std::vector<std::uint8_t> bytes{1, 2, 3};
  const auto hash = store.put(bytes);
  CHECK(hash == content_hash(bytes));
  CHECK(store.contains(hash));
  CHECK(store.get(hash) == bytes);
  CHECK_FALSE(store.get(content_hash(std::string_view{"other"})).has_value());

  testing::write_file(dir.path() / "pic.jpg", "jpeg bytes");
  const auto ref = ingest_image(store, dir.path() / "pic.jpg");
  CHECK(ref.media_type == "image/jpeg");
  CHECK(ref.content_hash == content_hash(std::string_view{"jpeg bytes"}));
}
