#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include <json.hpp>

#include "test_helpers.hpp"
#include "wildaudit/corpus.hpp"

using namespace wildaudit;
namespace fs = std::filesystem;

namespace {

void write_blob(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
}

nlohmann::json basic_manifest(const fs::path& dir,
                              const std::vector<float>& blob, int dim,
                              int count) {
  write_blob(dir / "emb.f32", blob);
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array(
      {{{"image_id", "a"}, {"identity", "x"}, {"split", "test"}, {"flank", "left"}},
       {{"image_id", "b"},
        {"identity", "y"},
        {"split", "test"},
        {"flank", "right"},
        {"solidity", 0.7}}});
  doc["embeddings"] = nlohmann::json::array({{{"model_id", "m"},
                                              {"variant", "foreground"},
                                              {"dim", dim},
                                              {"count", count},
                                              {"file", "emb.f32"},
                                              {"sha256", sha256_file((dir / "emb.f32").string())}}});
  return doc;
}

fs::path write_manifest(const fs::path& dir, const nlohmann::json& doc) {
  const fs::path p = dir / "manifest.json";
  std::ofstream out(p);
  out << doc.dump(2);
  return p;
}

}  // namespace

TEST_CASE("load_corpus accepts a minimal well-formed manifest") {
  const auto dir = testutil::fresh_dir("corpus_min");
  const auto doc = basic_manifest(dir, {1, 0, 0, 0, 0, 1, 0, 0}, 4, 2);
  const auto corp = corpus::load_corpus(write_manifest(dir, doc).string());
  REQUIRE(corp.records.size() == 2);
  REQUIRE(corp.embeddings.size() == 1);
  const auto& m = corp.embedding("m", corpus::Variant::foreground);
  CHECK(m.dim == 4);
  CHECK(m.count() == 2);
  CHECK(m.data(0, 0) == 1.0f);
  CHECK(corp.record("b").solidity.value() == 0.7);
  CHECK(corp.record("a").variants.count(corpus::Variant::foreground) == 1);
}

TEST_CASE("load_corpus reports dangling references") {
  const auto dir = testutil::fresh_dir("corpus_dangling");
  auto doc = basic_manifest(dir, {1, 0, 0, 0, 0, 1, 0, 0}, 4, 2);
  doc["embeddings"][0]["ids"] = {"a", "ghost"};
  REQUIRE_THROWS_WITH(corpus::load_corpus(write_manifest(dir, doc).string()),
                      Catch::Matchers::ContainsSubstring("dangling reference") &&
                          Catch::Matchers::ContainsSubstring("ghost"));
}

TEST_CASE("load_corpus rejects checksum mismatches and missing files") {
  const auto dir = testutil::fresh_dir("corpus_sha");
  auto doc = basic_manifest(dir, {1, 0, 0, 0, 0, 1, 0, 0}, 4, 2);
  doc["embeddings"][0]["sha256"] = std::string(64, '0');
  REQUIRE_THROWS_WITH(corpus::load_corpus(write_manifest(dir, doc).string()),
                      Catch::Matchers::ContainsSubstring("checksum mismatch"));

  doc["embeddings"][0]["file"] = "nope.f32";
  REQUIRE_THROWS_WITH(corpus::load_corpus(write_manifest(dir, doc).string()),
                      Catch::Matchers::ContainsSubstring("missing file"));
}

TEST_CASE("load_corpus rejects NaN embeddings with the offending key") {
  const auto dir = testutil::fresh_dir("corpus_nan");
  const float bad = std::numeric_limits<float>::quiet_NaN();
  const auto doc = basic_manifest(dir, {1, 0, 0, 0, bad, 1, 0, 0}, 4, 2);
  REQUIRE_THROWS_WITH(corpus::load_corpus(write_manifest(dir, doc).string()),
                      Catch::Matchers::ContainsSubstring("NaN") &&
                          Catch::Matchers::ContainsSubstring("(m, foreground)"));
}

TEST_CASE("load-save-load round-trips blobs bit-identically") {
  const auto dir = testutil::fresh_dir("corpus_rt");
  const auto doc =
      basic_manifest(dir, {0.25f, -1.5f, 3.75f, 0.125f, 9.5f, 2.0f, -0.875f, 1.0f}, 4, 2);
  const auto corp = corpus::load_corpus(write_manifest(dir, doc).string());

  const auto dir2 = testutil::fresh_dir("corpus_rt2");
  corpus::save_corpus(corp, dir2.string());
  const auto corp2 = corpus::load_corpus((dir2 / "manifest.json").string());

  const auto original = read_file_bytes((dir / "emb.f32").string());
  const auto saved = read_file_bytes((dir2 / "m_foreground.f32").string());
  CHECK(original == saved);
  CHECK(corp2.embedding("m", corpus::Variant::foreground).data ==
        corp.embedding("m", corpus::Variant::foreground).data);
}

TEST_CASE("metadata CSV alternative") {
  const auto dir = testutil::fresh_dir("corpus_csv");
  {
    std::ofstream out(dir / "meta.csv");
    out << "image_id,identity,split,flank,solidity\n";
    out << "a,x,test,left,0.5\n";
    out << "b,y,train,unknown,\n";
  }
  const auto recs = corpus::load_metadata_csv((dir / "meta.csv").string());
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].solidity.value() == 0.5);
  CHECK_FALSE(recs[1].solidity.has_value());
  CHECK(recs[1].split == corpus::Split::train);

  std::ofstream out(dir / "meta.csv", std::ios::app);
  out << "c,z,test,left,1.5\n";
  out.close();
  REQUIRE_THROWS_WITH(corpus::load_metadata_csv((dir / "meta.csv").string()),
                      Catch::Matchers::ContainsSubstring("solidity"));
}

TEST_CASE("l2_normalize: 3-4-5 row, idempotence, zero row") {
  corpus::EmbeddingMatrix m;
  m.model_id = "m";
  m.dim = 2;
  m.rows = {"a", "b"};
  m.data.resize(2, 2);
  m.data << 3.0f, 4.0f, 0.6f, 0.8f;

  const auto n1 = corpus::l2_normalize(m);
  CHECK(n1.data(0, 0) == Catch::Approx(0.6).margin(1e-7));
  CHECK(n1.data(0, 1) == Catch::Approx(0.8).margin(1e-7));

  const auto n2 = corpus::l2_normalize(n1);
  CHECK(std::abs(n2.data(1, 0) - n1.data(1, 0)) < 1e-7);
  CHECK(std::abs(n2.data(1, 1) - n1.data(1, 1)) < 1e-7);

  m.data.row(1).setZero();
  REQUIRE_THROWS_WITH(corpus::l2_normalize(m),
                      Catch::Matchers::ContainsSubstring("'b'"));
}

TEST_CASE("find_near_duplicates basics") {
  corpus::EmbeddingMatrix m;
  m.model_id = "m";
  m.dim = 2;
  m.rows = {"a", "b", "c"};
  m.data.resize(3, 2);
  m.data << 1.0f, 0.0f, 1.0f, 0.0f, 0.0f, 1.0f;

  const auto dups = corpus::find_near_duplicates(m, 0.8);
  REQUIRE(dups.size() == 1);
  CHECK(dups[0].a == "a");
  CHECK(dups[0].b == "b");
  CHECK(dups[0].similarity == Catch::Approx(1.0));
}

TEST_CASE("find_near_duplicates matches an exhaustive oracle on random rows") {
  auto corp = testutil::make_corpus({10});
  auto emb = testutil::random_unit_embeddings(corp, 6, 77);
  const double threshold = 0.2;  // random 6-d vectors are rarely this close
  const auto dups = corpus::find_near_duplicates(emb, threshold);

  // Oracle: scan all 45 pairs directly in double precision.
  std::set<std::pair<std::string, std::string>> expected;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      if (j <= i) continue;
      double dot = 0.0;
      for (int d = 0; d < 6; ++d)
        dot += static_cast<double>(emb.data(i, d)) * emb.data(j, d);
      if (dot > threshold)
        expected.insert({emb.rows[static_cast<size_t>(i)],
                         emb.rows[static_cast<size_t>(j)]});
    }
  }
  std::set<std::pair<std::string, std::string>> got;
  for (const auto& d : dups) got.insert({d.a, d.b});
  CHECK(got == expected);
  CHECK(std::is_sorted(dups.begin(), dups.end(),
                       [](const auto& x, const auto& y) {
                         return x.similarity >= y.similarity;
                       }));
}

TEST_CASE("find_near_duplicates pair set is invariant to row permutation") {
  auto corp = testutil::make_corpus({8});
  auto emb = testutil::random_unit_embeddings(corp, 4, 3);
  auto permuted = emb;
  // rotate rows by 3
  for (int i = 0; i < 8; ++i) {
    permuted.data.row(i) = emb.data.row((i + 3) % 8);
    permuted.rows[static_cast<size_t>(i)] = emb.rows[static_cast<size_t>((i + 3) % 8)];
  }
  const auto a = corpus::find_near_duplicates(emb, 0.1);
  const auto b = corpus::find_near_duplicates(permuted, 0.1);
  std::set<std::pair<std::string, std::string>> sa, sb;
  for (const auto& d : a) sa.insert({d.a, d.b});
  for (const auto& d : b) sb.insert({d.a, d.b});
  CHECK(sa == sb);
}

TEST_CASE("flank description keyword rules") {
  CHECK(corpus::parse_flank_description("clean left flank view") ==
        corpus::Flank::left);
  CHECK(corpus::parse_flank_description("RIGHT FLANK, partly occluded") ==
        corpus::Flank::right);
  CHECK(corpus::parse_flank_description("left flank and right flank visible") ==
        corpus::Flank::unknown);
  CHECK(corpus::parse_flank_description("frontal view") ==
        corpus::Flank::unknown);
}
