#include "mimea/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mimea/errors.hpp"

namespace mimea {

namespace {

[[noreturn]] void fail(const std::string& file, long line, const std::string& what) {
  std::ostringstream os;
  os << file << ":" << line << ": " << what;
  throw DataError(os.str());
}

int parse_id(const std::string& file, long line, const std::string& field, const char* what,
             int bound) {
  int value = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || value < 0) {
    fail(file, line, std::string(what) + " id '" + field + "' is not a nonnegative integer");
  }
  if (bound >= 0 && value >= bound) {
    std::ostringstream os;
    os << what << " id " << value << " out of range [0," << bound << ")";
    fail(file, line, os.str());
  }
  return value;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::ifstream open_or_fail(const std::string& path, std::ios::openmode mode) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

void load_triples(const std::string& path, MultiModalKG& kg) {
  std::ifstream in = open_or_fail(path, std::ios::in);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      std::ostringstream os;
      os << "expected 3 tab-separated fields, got " << fields.size();
      fail(path, lineno, os.str());
    }
    const int h = parse_id(path, lineno, fields[0], "entity", kg.n);
    const int r = parse_id(path, lineno, fields[1], "relation", -1);
    const int t = parse_id(path, lineno, fields[2], "entity", kg.n);
    kg.relational_triples.push_back({h, r, t});
    kg.relation_vocab = std::max(kg.relation_vocab, r + 1);
  }
}

void load_attr_triples(const std::string& path, MultiModalKG& kg) {
  std::ifstream in = open_or_fail(path, std::ios::in);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      std::ostringstream os;
      os << "expected 3 tab-separated fields, got " << fields.size();
      fail(path, lineno, os.str());
    }
    const int e = parse_id(path, lineno, fields[0], "entity", kg.n);
    const int a = parse_id(path, lineno, fields[1], "attribute", -1);
    kg.attribute_triples.push_back({e, a, fields[2]});
    kg.attribute_vocab = std::max(kg.attribute_vocab, a + 1);
  }
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void load_visual(const std::string& path, MultiModalKG& kg) {
  std::ifstream in = open_or_fail(path, std::ios::in | std::ios::binary);
  const std::uint32_t n = read_u32_le(in);
  const std::uint32_t d_v = read_u32_le(in);
  if (!in) throw DataError(path + ": truncated header");
  kg.n = static_cast<int>(n);
  kg.d_v = static_cast<int>(d_v);
  kg.visual.assign(static_cast<std::size_t>(n) * d_v, 0.0);
  kg.has_image.assign(n, 0);
  std::vector<unsigned char> raw(static_cast<std::size_t>(d_v) * 4);
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) {
      std::ostringstream os;
      os << path << ": unexpected end of file in feature row " << i;
      throw DataError(os.str());
    }
    bool any = false;
    for (std::uint32_t j = 0; j < d_v; ++j) {
      std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * j]) |
                           (static_cast<std::uint32_t>(raw[4 * j + 1]) << 8) |
                           (static_cast<std::uint32_t>(raw[4 * j + 2]) << 16) |
                           (static_cast<std::uint32_t>(raw[4 * j + 3]) << 24);
      const float f = std::bit_cast<float>(bits);
      kg.visual[static_cast<std::size_t>(i) * d_v + j] = static_cast<double>(f);
      if (f != 0.0f) any = true;
    }
    kg.has_image[i] = any ? 1 : 0;
  }
  char extra;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes after feature rows");
}

void load_links(const std::string& path, int n1, int n2, AlignmentSeedSet& seeds) {
  std::ifstream in = open_or_fail(path, std::ios::in);
  std::string line;
  long lineno = 0;
  std::set<int> seen1, seen2;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2) {
      std::ostringstream os;
      os << "expected 2 tab-separated fields, got " << fields.size();
      fail(path, lineno, os.str());
    }
    const int a = parse_id(path, lineno, fields[0], "entity", n1);
    const int b = parse_id(path, lineno, fields[1], "entity", n2);
    if (!seen1.insert(a).second || !seen2.insert(b).second) {
      fail(path, lineno, "alignment links must be 1-to-1, entity repeated");
    }
    seeds.train_pairs.push_back({a, b});
  }
}

void append_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::string render_triples(const MultiModalKG& kg) {
  std::string out;
  for (const auto& t : kg.relational_triples) {
    out += std::to_string(t[0]);
    out += '\t';
    out += std::to_string(t[1]);
    out += '\t';
    out += std::to_string(t[2]);
    out += '\n';
  }
  return out;
}

std::string render_attrs(const MultiModalKG& kg) {
  std::string out;
  for (const auto& t : kg.attribute_triples) {
    out += std::to_string(t.entity);
    out += '\t';
    out += std::to_string(t.attribute);
    out += '\t';
    out += t.literal;
    out += '\n';
  }
  return out;
}

std::string render_visual(const MultiModalKG& kg) {
  std::string out;
  out.reserve(8 + kg.visual.size() * 4);
  append_u32_le(out, static_cast<std::uint32_t>(kg.n));
  append_u32_le(out, static_cast<std::uint32_t>(kg.d_v));
  for (double x : kg.visual) {
    append_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

std::string render_links(const AlignmentSeedSet& seeds) {
  std::string out;
  for (const auto* list : {&seeds.train_pairs, &seeds.test_pairs}) {
    for (const auto& [a, b] : *list) {
      out += std::to_string(a);
      out += '\t';
      out += std::to_string(b);
      out += '\n';
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::out | std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

Tensor MultiModalKG::relation_bow_tensor() const {
  // An empty vocabulary is padded to a single zero column so downstream
  // encoders always receive a well-formed matrix.
  const int w = std::max(1, relation_vocab);
  Tensor t(n, w);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < relation_vocab; ++j) {
      t.at(i, j) = relation_bow[static_cast<std::size_t>(i) * relation_vocab + j];
    }
  }
  return t;
}

Tensor MultiModalKG::attribute_bow_tensor() const {
  const int w = std::max(1, attribute_vocab);
  Tensor t(n, w);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < attribute_vocab; ++j) {
      t.at(i, j) = attribute_bow[static_cast<std::size_t>(i) * attribute_vocab + j];
    }
  }
  return t;
}

Tensor MultiModalKG::visual_tensor() const {
  const int w = std::max(1, d_v);
  Tensor t(n, w);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d_v; ++j) {
      t.at(i, j) = visual[static_cast<std::size_t>(i) * d_v + j];
    }
  }
  return t;
}

void MultiModalKG::rebuild_bow() {
  relation_bow.assign(static_cast<std::size_t>(n) * relation_vocab, 0);
  attribute_bow.assign(static_cast<std::size_t>(n) * attribute_vocab, 0);
  for (const auto& t : relational_triples) {
    relation_bow[static_cast<std::size_t>(t[0]) * relation_vocab + t[1]] = 1;
    relation_bow[static_cast<std::size_t>(t[2]) * relation_vocab + t[1]] = 1;
  }
  for (const auto& t : attribute_triples) {
    attribute_bow[static_cast<std::size_t>(t.entity) * attribute_vocab + t.attribute] = 1;
  }
}

KgPair load_kg_pair(const std::string& dir) {
  const std::filesystem::path base(dir);
  KgPair pair;
  load_visual((base / "visual_1.f32le").string(), pair.g1);
  load_visual((base / "visual_2.f32le").string(), pair.g2);
  load_triples((base / "triples_1.tsv").string(), pair.g1);
  load_triples((base / "triples_2.tsv").string(), pair.g2);
  load_attr_triples((base / "attr_triples_1.tsv").string(), pair.g1);
  load_attr_triples((base / "attr_triples_2.tsv").string(), pair.g2);
  pair.g1.rebuild_bow();
  pair.g2.rebuild_bow();
  load_links((base / "links.tsv").string(), pair.g1.n, pair.g2.n, pair.seeds);
  pair.seeds.seed_ratio = 1.0;
  return pair;
}

void save_kg_pair(const std::string& dir, const KgPair& pair) {
  const std::filesystem::path base(dir);
  std::filesystem::create_directories(base);
  write_file(base / "triples_1.tsv", render_triples(pair.g1));
  write_file(base / "triples_2.tsv", render_triples(pair.g2));
  write_file(base / "attr_triples_1.tsv", render_attrs(pair.g1));
  write_file(base / "attr_triples_2.tsv", render_attrs(pair.g2));
  write_file(base / "visual_1.f32le", render_visual(pair.g1));
  write_file(base / "visual_2.f32le", render_visual(pair.g2));
  write_file(base / "links.tsv", render_links(pair.seeds));
}

KgPair gen_synthetic_pair(int n, int d_v, double noise, std::uint64_t seed) {
  if (n < 4) {
    throw std::invalid_argument("gen_synthetic_pair: n must be at least 4, got " +
                                std::to_string(n));
  }
  if (d_v < 1) {
    throw std::invalid_argument("gen_synthetic_pair: d_v must be positive, got " +
                                std::to_string(d_v));
  }
  if (noise < 0.0 || noise > 1.0) {
    throw std::invalid_argument("gen_synthetic_pair: noise must lie in [0,1], got " +
                                std::to_string(noise));
  }

  Rng rng_g(Rng::derive(seed, 0xA1));  // base structure
  Rng rng_p(Rng::derive(seed, 0xA2));  // entity permutation
  Rng rng_n(Rng::derive(seed, 0xA3));  // noise pass

  const int rel_vocab = std::max(2, std::min(8, n / 8));
  const int attr_vocab = std::max(2, std::min(6, n / 10));
  const int clusters = std::max(2, n / 10);

  KgPair pair;
  MultiModalKG& g1 = pair.g1;
  g1.n = n;
  g1.d_v = d_v;
  g1.relation_vocab = rel_vocab;
  g1.attribute_vocab = attr_vocab;

  // Ring backbone plus two random out-edges per entity: every neighborhood
  // is distinct, so structure alone identifies entities.
  for (int i = 0; i < n; ++i) {
    g1.relational_triples.push_back({i, i % rel_vocab, (i + 1) % n});
    for (int e = 0; e < 2; ++e) {
      int t = static_cast<int>(rng_g.below(static_cast<std::uint64_t>(n - 1)));
      if (t >= i) ++t;
      g1.relational_triples.push_back({i, static_cast<int>(rng_g.below(rel_vocab)), t});
    }
  }
  for (int i = 0; i < n; ++i) {
    const int a0 = i % attr_vocab;
    g1.attribute_triples.push_back({i, a0, "v" + std::to_string(i) + "_" + std::to_string(a0)});
    if (i % 2 == 1) {
      const int a1 = static_cast<int>(rng_g.below(attr_vocab));
      g1.attribute_triples.push_back({i, a1, "v" + std::to_string(i) + "_" + std::to_string(a1)});
    }
  }

  // Visual features: cluster centroid plus a per-entity component.
  std::vector<double> centroids(static_cast<std::size_t>(clusters) * d_v);
  for (double& x : centroids) x = rng_g.normal();
  g1.visual.assign(static_cast<std::size_t>(n) * d_v, 0.0);
  g1.has_image.assign(n, 1);
  for (int i = 0; i < n; ++i) {
    const std::size_t crow = static_cast<std::size_t>(i % clusters) * d_v;
    for (int j = 0; j < d_v; ++j) {
      g1.visual[static_cast<std::size_t>(i) * d_v + j] =
          0.9 * centroids[crow + j] + 0.45 * rng_g.normal();
    }
  }
  g1.rebuild_bow();

  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  rng_p.shuffle(perm);

  MultiModalKG& g2 = pair.g2;
  g2.n = n;
  g2.d_v = d_v;
  g2.relation_vocab = rel_vocab;
  g2.attribute_vocab = attr_vocab;
  for (const auto& t : g1.relational_triples) {
    g2.relational_triples.push_back({perm[t[0]], t[1], perm[t[2]]});
  }
  for (const auto& t : g1.attribute_triples) {
    g2.attribute_triples.push_back({perm[t.entity], t.attribute, t.literal});
  }
  g2.visual.assign(static_cast<std::size_t>(n) * d_v, 0.0);
  g2.has_image.assign(n, 1);
  for (int i = 0; i < n; ++i) {
    std::memcpy(&g2.visual[static_cast<std::size_t>(perm[i]) * d_v],
                &g1.visual[static_cast<std::size_t>(i) * d_v], sizeof(double) * d_v);
  }

  if (noise > 0.0) {
    for (auto& t : g2.relational_triples) {
      if (rng_n.uniform() < noise) {
        int nt = static_cast<int>(rng_n.below(static_cast<std::uint64_t>(n - 1)));
        if (nt >= t[0]) ++nt;
        t[2] = nt;
      }
      if (rng_n.uniform() < noise) t[1] = static_cast<int>(rng_n.below(rel_vocab));
    }
    for (auto& t : g2.attribute_triples) {
      if (rng_n.uniform() < noise) t.attribute = static_cast<int>(rng_n.below(attr_vocab));
    }
    for (double& x : g2.visual) x += noise * rng_n.normal();
  }

  // Canonical ordering so saved twins do not leak the permutation.
  std::sort(g2.relational_triples.begin(), g2.relational_triples.end());
  std::sort(g2.attribute_triples.begin(), g2.attribute_triples.end(),
            [](const AttrTriple& a, const AttrTriple& b) {
              return std::tie(a.entity, a.attribute, a.literal) <
                     std::tie(b.entity, b.attribute, b.literal);
            });
  g2.rebuild_bow();

  for (int i = 0; i < n; ++i) pair.seeds.train_pairs.push_back({i, perm[i]});
  pair.seeds.seed_ratio = 1.0;
  return pair;
}

AlignmentSeedSet split_seeds(const std::vector<Pair>& pairs, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("seed ratio must lie in (0,1), got " + std::to_string(ratio));
  }
  std::vector<Pair> shuffled = pairs;
  Rng rng(seed);
  rng.shuffle(shuffled);
  // Round half up: 11 pairs at ratio 0.5 give 6 training pairs.
  const auto k = static_cast<std::size_t>(std::floor(ratio * pairs.size() + 0.5));
  AlignmentSeedSet out;
  out.seed_ratio = ratio;
  out.train_pairs.assign(shuffled.begin(), shuffled.begin() + k);
  out.test_pairs.assign(shuffled.begin() + k, shuffled.end());
  std::sort(out.train_pairs.begin(), out.train_pairs.end());
  std::sort(out.test_pairs.begin(), out.test_pairs.end());
  return out;
}

CombinedKG merge_pair(const MultiModalKG& g1, const MultiModalKG& g2) {
  if (g1.d_v != g2.d_v) {
    std::ostringstream os;
    os << "merge_pair: visual widths differ, " << g1.d_v << " vs " << g2.d_v;
    throw std::invalid_argument(os.str());
  }
  CombinedKG out;
  out.offset = g1.n;
  MultiModalKG& m = out.merged;
  m.n = g1.n + g2.n;
  m.d_v = g1.d_v;
  m.relation_vocab = g1.relation_vocab + g2.relation_vocab;
  m.attribute_vocab = g1.attribute_vocab + g2.attribute_vocab;
  m.relational_triples = g1.relational_triples;
  for (const auto& t : g2.relational_triples) {
    m.relational_triples.push_back({t[0] + g1.n, t[1] + g1.relation_vocab, t[2] + g1.n});
  }
  m.attribute_triples = g1.attribute_triples;
  for (const auto& t : g2.attribute_triples) {
    m.attribute_triples.push_back({t.entity + g1.n, t.attribute + g1.attribute_vocab, t.literal});
  }
  m.visual = g1.visual;
  m.visual.insert(m.visual.end(), g2.visual.begin(), g2.visual.end());
  m.has_image = g1.has_image;
  m.has_image.insert(m.has_image.end(), g2.has_image.begin(), g2.has_image.end());
  m.rebuild_bow();
  return out;
}

std::uint64_t digest_pair(const KgPair& pair) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  mix(render_triples(pair.g1));
  mix(render_triples(pair.g2));
  mix(render_attrs(pair.g1));
  mix(render_attrs(pair.g2));
  mix(render_visual(pair.g1));
  mix(render_visual(pair.g2));
  mix(render_links(pair.seeds));
  return h;
}

}  // namespace mimea
