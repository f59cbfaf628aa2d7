#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "mimea/data.hpp"
#include "mimea/errors.hpp"

using namespace mimea;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("mimea_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

void write_visual(const fs::path& p, int n, int d_v,
                  const std::function<float(int, int)>& value) {
  std::ofstream out(p, std::ios::binary);
  auto put_u32 = [&out](std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  put_u32(static_cast<std::uint32_t>(n));
  put_u32(static_cast<std::uint32_t>(d_v));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d_v; ++j) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(value(i, j));
      put_u32(bits);
    }
  }
}

// Minimal test-local generator, independent of the library Rng.
struct Lcg {
  std::uint64_t s;
  explicit Lcg(std::uint64_t seed) : s(seed) {}
  std::uint64_t next() {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    return s >> 16;
  }
  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }
};

}  // namespace

TEST_CASE("loader round-trips FB15K-shaped metadata") {
  const int n = 14951, rels = 1345, attrs = 116;
  const long rel_lines = 592213;
  fs::path dir = fresh_dir("fb15k_shape");

  Lcg lcg(99);
  std::string triples;
  triples.reserve(16u * rel_lines);
  // Pin the extreme ids so the derived vocab sizes are exact.
  triples += std::to_string(n - 1) + "\t" + std::to_string(rels - 1) + "\t0\n";
  for (long i = 1; i < rel_lines; ++i) {
    triples += std::to_string(lcg.below(n));
    triples += '\t';
    triples += std::to_string(lcg.below(rels));
    triples += '\t';
    triples += std::to_string(lcg.below(n));
    triples += '\n';
  }
  write_text(dir / "triples_1.tsv", triples);
  write_text(dir / "triples_2.tsv", "0\t0\t1\n1\t0\t2\n");

  std::string attr_lines = std::to_string(n - 1) + "\t" + std::to_string(attrs - 1) + "\tx\n";
  for (int i = 1; i < 20000; ++i) {
    attr_lines += std::to_string(lcg.below(n));
    attr_lines += '\t';
    attr_lines += std::to_string(lcg.below(attrs));
    attr_lines += "\tlit\n";
  }
  write_text(dir / "attr_triples_1.tsv", attr_lines);
  write_text(dir / "attr_triples_2.tsv", "0\t0\tval\n");

  write_visual(dir / "visual_1.f32le", n, 4, [](int i, int j) {
    return i == 7 ? 0.0f : static_cast<float>(0.25 * j + 0.001 * (i % 97));
  });
  write_visual(dir / "visual_2.f32le", 3, 4, [](int, int j) { return 1.0f + j; });
  write_text(dir / "links.tsv", "0\t0\n1\t1\n2\t2\n");

  KgPair pair = load_kg_pair(dir.string());
  CHECK(pair.g1.n == n);
  CHECK(pair.g1.relation_vocab == rels);
  CHECK(pair.g1.attribute_vocab == attrs);
  CHECK(pair.g1.relational_triples.size() == static_cast<std::size_t>(rel_lines));
  CHECK(pair.g2.n == 3);
  CHECK(pair.g1.has_image[7] == 0);
  CHECK(pair.g1.has_image[8] == 1);
  CHECK(pair.seeds.train_pairs.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("empty triple files produce empty vocabularies without error") {
  fs::path dir = fresh_dir("empty_triples");
  write_text(dir / "triples_1.tsv", "");
  write_text(dir / "triples_2.tsv", "");
  write_text(dir / "attr_triples_1.tsv", "");
  write_text(dir / "attr_triples_2.tsv", "");
  write_visual(dir / "visual_1.f32le", 3, 2, [](int, int) { return 0.5f; });
  write_visual(dir / "visual_2.f32le", 3, 2, [](int, int) { return 0.5f; });
  write_text(dir / "links.tsv", "");

  KgPair pair = load_kg_pair(dir.string());
  CHECK(pair.g1.n == 3);
  CHECK(pair.g1.relation_vocab == 0);
  CHECK(pair.g1.attribute_vocab == 0);
  CHECK(pair.g1.relation_bow.empty());
  Tensor padded = pair.g1.relation_bow_tensor();
  CHECK(padded.rows() == 3);
  CHECK(padded.cols() == 1);
  fs::remove_all(dir);
}

TEST_CASE("relation bow is the incidence indicator") {
  fs::path dir = fresh_dir("bow_indicator");
  write_text(dir / "triples_1.tsv", "0\t0\t1\n1\t0\t0\n");
  write_text(dir / "triples_2.tsv", "");
  write_text(dir / "attr_triples_1.tsv", "");
  write_text(dir / "attr_triples_2.tsv", "");
  write_visual(dir / "visual_1.f32le", 2, 1, [](int, int) { return 1.0f; });
  write_visual(dir / "visual_2.f32le", 2, 1, [](int, int) { return 1.0f; });
  write_text(dir / "links.tsv", "");

  KgPair pair = load_kg_pair(dir.string());
  REQUIRE(pair.g1.relation_vocab == 1);
  CHECK(pair.g1.relation_bow[0] == 1);
  CHECK(pair.g1.relation_bow[1] == 1);
  fs::remove_all(dir);
}

TEST_CASE("loader errors carry file and line diagnostics") {
  fs::path dir = fresh_dir("loader_errors");
  write_visual(dir / "visual_1.f32le", 3, 2, [](int, int) { return 1.0f; });
  write_visual(dir / "visual_2.f32le", 3, 2, [](int, int) { return 1.0f; });
  write_text(dir / "triples_2.tsv", "");
  write_text(dir / "attr_triples_1.tsv", "");
  write_text(dir / "attr_triples_2.tsv", "");
  write_text(dir / "links.tsv", "");

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_kg_pair((dir / "nope").string()),
                         doctest::Contains("cannot open"), DataError);
  }
  SUBCASE("wrong field count") {
    write_text(dir / "triples_1.tsv", "0\t0\t1\n0\t1\n");
    CHECK_THROWS_WITH_AS(load_kg_pair(dir.string()), doctest::Contains("triples_1.tsv:2"),
                         DataError);
  }
  SUBCASE("non-integer id") {
    write_text(dir / "triples_1.tsv", "0\tx7\t1\n");
    CHECK_THROWS_WITH_AS(load_kg_pair(dir.string()), doctest::Contains("triples_1.tsv:1"),
                         DataError);
  }
  SUBCASE("entity id out of range") {
    write_text(dir / "triples_1.tsv", "0\t0\t3\n");
    CHECK_THROWS_WITH_AS(load_kg_pair(dir.string()), doctest::Contains("out of range"),
                         DataError);
  }
  SUBCASE("duplicate link entity") {
    write_text(dir / "triples_1.tsv", "");
    write_text(dir / "links.tsv", "0\t0\n0\t1\n");
    CHECK_THROWS_WITH_AS(load_kg_pair(dir.string()), doctest::Contains("1-to-1"), DataError);
  }
  SUBCASE("truncated visual file") {
    write_text(dir / "triples_1.tsv", "");
    std::ofstream out(dir / "visual_1.f32le", std::ios::binary | std::ios::trunc);
    const char header[8] = {5, 0, 0, 0, 2, 0, 0, 0};
    out.write(header, 8);
    out.write(header, 4);  // one and a half rows short
    out.close();
    CHECK_THROWS_WITH_AS(load_kg_pair(dir.string()), doctest::Contains("unexpected end"),
                         DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic generation is deterministic and round-trips through disk") {
  KgPair a = gen_synthetic_pair(50, 8, 0.1, 7);
  KgPair b = gen_synthetic_pair(50, 8, 0.1, 7);
  CHECK(digest_pair(a) == digest_pair(b));

  fs::path dir = fresh_dir("synth_roundtrip");
  save_kg_pair(dir.string(), a);
  KgPair c = load_kg_pair(dir.string());
  CHECK(digest_pair(c) == digest_pair(a));
  CHECK(c.g1.relational_triples.size() == a.g1.relational_triples.size());
  CHECK(c.g1.relation_vocab == a.g1.relation_vocab);
  CHECK(c.g2.attribute_bow == a.g2.attribute_bow);
  fs::remove_all(dir);

  KgPair d = gen_synthetic_pair(50, 8, 0.1, 8);
  CHECK(digest_pair(d) != digest_pair(a));
}

TEST_CASE("synthetic golden digest stays fixed") {
  const fs::path golden = fs::path(MIMEA_SOURCE_DIR) / "fixtures" / "synthetic_n50.json";
  KgPair pair = gen_synthetic_pair(50, 8, 0.1, 7);
  nlohmann::json now = {
      {"n", 50},
      {"d_v", 8},
      {"noise", 0.1},
      {"seed", 7},
      {"rel_triples_g1", pair.g1.relational_triples.size()},
      {"rel_triples_g2", pair.g2.relational_triples.size()},
      {"attr_triples_g1", pair.g1.attribute_triples.size()},
      {"attr_triples_g2", pair.g2.attribute_triples.size()},
      {"digest", digest_pair(pair)},
  };
  if (!fs::exists(golden)) {
    fs::create_directories(golden.parent_path());
    std::ofstream out(golden);
    out << now.dump(2) << "\n";
    MESSAGE("golden file recorded on first run");
    return;
  }
  std::ifstream in(golden);
  nlohmann::json expect = nlohmann::json::parse(in);
  CHECK(now == expect);
}

TEST_CASE("zero-noise twins are recovered exactly by feature nearest neighbor") {
  KgPair pair = gen_synthetic_pair(30, 6, 0.0, 11);
  std::vector<int> perm(30, -1);
  for (const auto& [a, b] : pair.seeds.train_pairs) perm[a] = b;

  for (int i = 0; i < 30; ++i) {
    int exact_match = -1;
    for (int j = 0; j < 30; ++j) {
      bool equal = true;
      for (int k = 0; k < 6; ++k) {
        if (pair.g1.visual[i * 6 + k] != pair.g2.visual[j * 6 + k]) {
          equal = false;
          break;
        }
      }
      if (equal) {
        CHECK(exact_match == -1);  // twin rows are unique
        exact_match = j;
      }
    }
    CHECK(exact_match == perm[i]);
  }
}

TEST_CASE("generated graphs satisfy bow consistency") {
  KgPair pair = gen_synthetic_pair(40, 4, 0.3, 5);
  for (const MultiModalKG* kg : {&pair.g1, &pair.g2}) {
    MultiModalKG copy = *kg;
    copy.rebuild_bow();
    CHECK(copy.relation_bow == kg->relation_bow);
    CHECK(copy.attribute_bow == kg->attribute_bow);
  }
}

TEST_CASE("generator rejects bad arguments") {
  CHECK_THROWS_AS(gen_synthetic_pair(3, 4, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic_pair(10, 0, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic_pair(10, 4, 1.5, 1), std::invalid_argument);
}

TEST_CASE("seed splitting follows the round-half-up rule") {
  std::vector<Pair> ten;
  for (int i = 0; i < 10; ++i) ten.push_back({i, i});
  AlignmentSeedSet s = split_seeds(ten, 0.2, 3);
  CHECK(s.train_pairs.size() == 2);
  CHECK(s.test_pairs.size() == 8);

  std::vector<Pair> eleven = ten;
  eleven.push_back({10, 10});
  AlignmentSeedSet s2 = split_seeds(eleven, 0.5, 3);
  CHECK(s2.train_pairs.size() == 6);
  CHECK(s2.test_pairs.size() == 5);

  AlignmentSeedSet s3 = split_seeds(eleven, 0.5, 3);
  CHECK(s2.train_pairs == s3.train_pairs);
  CHECK(s2.test_pairs == s3.test_pairs);

  AlignmentSeedSet s4 = split_seeds(eleven, 0.5, 4);
  CHECK(s2.train_pairs != s4.train_pairs);

  std::set<Pair> train(s2.train_pairs.begin(), s2.train_pairs.end());
  for (const Pair& p : s2.test_pairs) CHECK(train.count(p) == 0);

  CHECK_THROWS_AS(split_seeds(ten, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_seeds(ten, 1.0, 1), ConfigError);
}

TEST_CASE("merge_pair builds a block-diagonal union") {
  KgPair pair = gen_synthetic_pair(12, 3, 0.0, 2);
  CombinedKG combined = merge_pair(pair.g1, pair.g2);
  CHECK(combined.offset == 12);
  CHECK(combined.merged.n == 24);
  CHECK(combined.merged.relation_vocab ==
        pair.g1.relation_vocab + pair.g2.relation_vocab);
  for (const auto& t : combined.merged.relational_triples) {
    const bool first_block = t[0] < 12;
    CHECK((t[2] < 12) == first_block);
    CHECK((t[1] < pair.g1.relation_vocab) == first_block);
  }
  // Graph-1 bow lives in the left columns, graph-2 in the right.
  const int rv = combined.merged.relation_vocab;
  for (int i = 0; i < 12; ++i) {
    for (int j = pair.g1.relation_vocab; j < rv; ++j) {
      CHECK(combined.merged.relation_bow[i * rv + j] == 0);
    }
  }

  MultiModalKG narrow = pair.g2;
  narrow.d_v = 2;
  CHECK_THROWS_AS(merge_pair(pair.g1, narrow), std::invalid_argument);
}
