#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mimea/rng.hpp"
#include "mimea/tensor.hpp"

namespace mimea {

struct AttrTriple {
  int entity = 0;
  int attribute = 0;
  std::string literal;  // parsed but unused downstream
};

// One knowledge graph with relational structure, attribute bag-of-words and
// precomputed visual features. Immutable once loaded or generated.
struct MultiModalKG {
  int n = 0;
  std::vector<std::array<int, 3>> relational_triples;  // head, relation, tail
  std::vector<AttrTriple> attribute_triples;
  int relation_vocab = 0;
  int attribute_vocab = 0;
  // Binary indicator matrices, row-major n x vocab. A vocab may be empty.
  std::vector<std::uint8_t> relation_bow;
  std::vector<std::uint8_t> attribute_bow;
  int d_v = 0;
  std::vector<double> visual;          // row-major n x d_v
  std::vector<std::uint8_t> has_image; // zero feature row <=> no image

  Tensor relation_bow_tensor() const;
  Tensor attribute_bow_tensor() const;
  Tensor visual_tensor() const;

  // Recomputes both bow matrices from the triple lists.
  void rebuild_bow();
};

using Pair = std::pair<int, int>;  // (entity in G, entity in G')

struct AlignmentSeedSet {
  std::vector<Pair> train_pairs;
  std::vector<Pair> test_pairs;
  double seed_ratio = 1.0;
  std::map<Pair, int> probation_buffer;  // candidate pair -> epoch first seen
};

// Loads `triples_{1,2}.tsv`, `attr_triples_{1,2}.tsv`, `visual_{1,2}.f32le`
// and `links.tsv` from dir. All link pairs land in train_pairs; use
// split_seeds for a train/test division. Raises DataError with file/line
// diagnostics on missing files, malformed lines, or out-of-range ids.
struct KgPair {
  MultiModalKG g1;
  MultiModalKG g2;
  AlignmentSeedSet seeds;
};
KgPair load_kg_pair(const std::string& dir);

// Writes a pair back out in the same directory layout.
void save_kg_pair(const std::string& dir, const KgPair& pair);

// Twin-graph generator: G' is G under a random permutation with a `noise`
// fraction of triples rewired or retyped and visual features perturbed.
// Deterministic in (n, d_v, noise, seed).
KgPair gen_synthetic_pair(int n, int d_v, double noise, std::uint64_t seed);

// Shuffles pairs and takes round(ratio * count) for training, rounding
// half up. Deterministic in seed.
AlignmentSeedSet split_seeds(const std::vector<Pair>& pairs, double ratio, std::uint64_t seed);

// Block-diagonal union used for joint encoding: graph-2 entity ids are
// offset by g1.n and both vocabularies are concatenated side by side.
struct CombinedKG {
  MultiModalKG merged;
  int offset = 0;  // id shift applied to graph 2
};
CombinedKG merge_pair(const MultiModalKG& g1, const MultiModalKG& g2);

// FNV-1a over the serialized directory layout; the synthetic golden tests
// pin this digest.
std::uint64_t digest_pair(const KgPair& pair);

}  // namespace mimea
