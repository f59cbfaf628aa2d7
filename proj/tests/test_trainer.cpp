#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "mimea/data.hpp"
#include "mimea/errors.hpp"
#include "mimea/ops.hpp"
#include "mimea/rng.hpp"
#include "mimea/trainer.hpp"

using namespace mimea;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("mimea_trainer_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Tensor rand_rows(Rng& rng, int r, int c) {
  Tensor t(r, c);
  for (double& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

// Quadratic-time reference: strict-greater argmax per row keeps the lowest
// index on ties, then reciprocity is checked pair by pair.
std::vector<Pair> mutual_brute(const Tensor& e1, const Tensor& e2,
                               const std::vector<Pair>& excluded) {
  const int n1 = e1.rows(), n2 = e2.rows(), d = e1.cols();
  std::vector<char> ex1(n1, 0), ex2(n2, 0);
  for (const Pair& p : excluded) {
    ex1[p.first] = 1;
    ex2[p.second] = 1;
  }
  auto cosine = [d](const Tensor& a, int i, const Tensor& b, int j) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int k = 0; k < d; ++k) {
      dot += a.at(i, k) * b.at(j, k);
      na += a.at(i, k) * a.at(i, k);
      nb += b.at(j, k) * b.at(j, k);
    }
    const double den = std::sqrt(na) * std::sqrt(nb);
    return den > 0.0 ? dot / den : 0.0;
  };
  std::vector<Pair> out;
  for (int i = 0; i < n1; ++i) {
    if (ex1[i]) continue;
    int bi = -1;
    for (int j = 0; j < n2; ++j) {
      if (ex2[j]) continue;
      if (bi < 0 || cosine(e1, i, e2, j) > cosine(e1, i, e2, bi)) bi = j;
    }
    if (bi < 0) continue;
    int bj = -1;
    for (int k = 0; k < n1; ++k) {
      if (ex1[k]) continue;
      if (bj < 0 || cosine(e1, k, e2, bi) > cosine(e1, bj, e2, bi)) bj = k;
    }
    if (bj == i) out.emplace_back(i, bi);
  }
  return out;
}

KgPair small_pair(int n, double noise, std::uint64_t seed, double ratio) {
  KgPair kp = gen_synthetic_pair(n, 4, noise, seed);
  kp.seeds = split_seeds(kp.seeds.train_pairs, ratio, seed + 1);
  return kp;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.seed = seed;
  cfg.iterative = false;
  return cfg;
}

}  // namespace

TEST_CASE("mutual nearest neighbours on identical embeddings") {
  Rng rng(31);
  Tensor e = rand_rows(rng, 7, 5);
  std::vector<Pair> got = mutual_nn_pairs(e, e, {});
  REQUIRE(got.size() == 7);
  for (int i = 0; i < 7; ++i) {
    CHECK(got[i].first == i);
    CHECK(got[i].second == i);
  }

  std::vector<Pair> ex = {{2, 2}, {5, 5}};
  got = mutual_nn_pairs(e, e, ex);
  CHECK(got.size() == 5);
  for (const Pair& p : got) {
    CHECK(p.first == p.second);
    CHECK(p.first != 2);
    CHECK(p.first != 5);
  }
}

TEST_CASE("mutual nearest neighbours require reciprocity") {
  // Row 0 of e1 prefers row 0 of e2, but row 0 of e2 prefers row 1 of e1.
  Tensor e1(2, 2), e2(1, 2);
  e1.at(0, 0) = 1.0;
  e1.at(0, 1) = 0.2;
  e1.at(1, 0) = 1.0;
  e1.at(1, 1) = 0.0;
  e2.at(0, 0) = 1.0;
  e2.at(0, 1) = 0.0;
  std::vector<Pair> got = mutual_nn_pairs(e1, e2, {});
  REQUIRE(got.size() == 1);
  CHECK(got[0] == Pair{1, 0});
}

TEST_CASE("mutual nearest neighbour ties resolve to the lowest index") {
  // Both e2 rows are identical, so every argmax tie must keep index 0.
  Tensor e1(1, 2), e2(3, 2);
  e1.at(0, 0) = 1.0;
  for (int j = 0; j < 3; ++j) e2.at(j, 0) = 2.0;
  std::vector<Pair> got = mutual_nn_pairs(e1, e2, {});
  REQUIRE(got.size() == 1);
  CHECK(got[0] == Pair{0, 0});
}

TEST_CASE("mutual nearest neighbours match brute force") {
  Rng rng(77);
  for (int it = 0; it < 50; ++it) {
    const int n1 = 2 + static_cast<int>(rng.uniform(0.0, 38.9));
    const int n2 = 2 + static_cast<int>(rng.uniform(0.0, 38.9));
    const int d = 2 + static_cast<int>(rng.uniform(0.0, 6.9));
    Tensor e1 = rand_rows(rng, n1, d);
    Tensor e2 = rand_rows(rng, n2, d);
    std::vector<Pair> excluded;
    for (int i = 0; i < n1 && i < n2; i += 3) {
      if (rng.uniform(0.0, 1.0) < 0.3) excluded.emplace_back(i, i);
    }
    CHECK(mutual_nn_pairs(e1, e2, excluded) == mutual_brute(e1, e2, excluded));
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_config(0);
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.dim = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.iterative = true;
  bad.probation_period = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.iterative = true;
  bad.probation_span = bad.probation_period - 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.patience = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.gamma = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.modalities = {false, false, false, false, false};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.modalities = {false, false, false, false, true};  // joint only, no base
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("model initialization is deterministic") {
  KgPair kp = small_pair(10, 0.0, 3, 0.5);
  CombinedKG combined = merge_pair(kp.g1, kp.g2);
  TrainConfig cfg = small_config(3);
  Model a = init_model(combined.merged, kp.g1.n, kp.g2.n, cfg);
  Model b = init_model(combined.merged, kp.g1.n, kp.g2.n, cfg);

  CHECK(a.ot_proj.rows() == 4 * cfg.dim);
  CHECK(a.ot_proj.cols() == cfg.dim);
  CHECK(a.enc.entity_init.rows() == kp.g1.n + kp.g2.n);
  CHECK(a.n1 == kp.g1.n);
  CHECK(a.ot_proj.values() == b.ot_proj.values());
  CHECK(a.enc.entity_init.values() == b.enc.entity_init.values());
  CHECK(a.u.s.values() == b.u.s.values());

  TrainConfig other = cfg;
  other.seed = 4;
  Model c = init_model(combined.merged, kp.g1.n, kp.g2.n, other);
  CHECK(a.enc.entity_init.values() != c.enc.entity_init.values());
}

TEST_CASE("checkpoint round trip restores the model") {
  fs::path dir = fresh_dir("ckpt");
  KgPair kp = small_pair(8, 0.0, 11, 0.5);
  CombinedKG combined = merge_pair(kp.g1, kp.g2);
  EncoderInputs in = make_encoder_inputs(combined.merged, false);
  TrainConfig cfg = small_config(11);
  Model m = init_model(combined.merged, kp.g1.n, kp.g2.n, cfg);

  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, m, 0xfeedULL);

  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.config_hash == 0xfeedULL);
  CHECK(ck.blobs.count("ot_proj") == 1);
  CHECK(ck.blobs.count("uncertainty.s") == 1);
  CHECK(ck.blobs.at("ot_proj").values() == m.ot_proj.values());

  TrainConfig other = cfg;
  other.seed = 99;
  Model fresh = init_model(combined.merged, kp.g1.n, kp.g2.n, other);
  CHECK(fresh.enc.entity_init.values() != m.enc.entity_init.values());
  apply_checkpoint(fresh, ck);
  InferenceState sa = inference_forward(in, m, cfg);
  InferenceState sb = inference_forward(in, fresh, cfg);
  CHECK(sa.z.values() == sb.z.values());

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), DataError);
  }
  SUBCASE("corrupted magic") {
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint((dir / "bad.ckpt").string()), DataError);
  }
  SUBCASE("truncated payload") {
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() / 2);
    std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint((dir / "cut.ckpt").string()), DataError);
  }
  SUBCASE("shape mismatch on apply") {
    TrainConfig narrow = cfg;
    narrow.dim = 8;
    Model small = init_model(combined.merged, kp.g1.n, kp.g2.n, narrow);
    CHECK_THROWS_AS(apply_checkpoint(small, ck), DataError);
  }
  fs::remove_all(dir);
}

TEST_CASE("metric log line uses a fixed byte format") {
  EpochMetrics m;
  m.epoch = 3;
  m.losses = {0.5, 0.25, 0.0, 1.5, 2.0};
  m.total = 4.25;
  m.mrr = 0.75;
  m.hits1 = 0.5;
  m.hits10 = 1.0;
  m.val_mrr = -1.0;
  m.buffer_size = 2;
  m.train_pairs = 7;
  CHECK(metric_log_line(m) ==
        "{\"epoch\":3,\"loss_s\":0.5,\"loss_r\":0.25,\"loss_a\":0,\"loss_v\":1.5,"
        "\"loss_m\":2,\"loss_total\":4.25,\"mrr\":0.75,\"hits1\":0.5,\"hits10\":1,"
        "\"val_mrr\":-1,\"buffer\":2,\"train_pairs\":7}");
}

TEST_CASE("smoke train recovers a zero-noise pair") {
  KgPair kp = small_pair(12, 0.0, 1, 0.25);
  TrainConfig cfg = small_config(1);
  TrainResult r = train(kp, cfg);

  REQUIRE(r.history.size() == 40);
  for (const EpochMetrics& m : r.history) {
    CHECK(std::isfinite(m.total));
    for (double l : m.losses) CHECK(std::isfinite(l));
    CHECK(m.mrr >= 0.0);
    CHECK(m.mrr <= 1.0);
    CHECK(m.val_mrr == -1.0);
    CHECK(m.buffer_size == 0);
    CHECK(m.train_pairs == 3);
  }
  CHECK(r.history.back().mrr >= 0.9);
  CHECK(r.history.back().hits1 >= 0.8);
  CHECK(r.final_train_pairs.size() == 3);
  CHECK_FALSE(r.early_stopped);
}

TEST_CASE("training is bitwise deterministic") {
  fs::path dir = fresh_dir("determinism");
  KgPair kp = small_pair(12, 0.1, 5, 0.5);
  TrainConfig cfg = small_config(5);
  cfg.epochs = 8;
  TrainResult a = train(kp, cfg);
  TrainResult b = train(kp, cfg);

  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(metric_log_line(a.history[i]) == metric_log_line(b.history[i]));
  }
  save_checkpoint((dir / "a.ckpt").string(), a.model, 1);
  save_checkpoint((dir / "b.ckpt").string(), b.model, 1);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("divergent learning rate raises a numeric error") {
  KgPair kp = small_pair(10, 0.0, 2, 0.5);
  TrainConfig cfg = small_config(2);
  cfg.epochs = 30;
  cfg.optim.lr = 1e9;
  CHECK_THROWS_WITH_AS(train(kp, cfg), doctest::Contains("epoch"), NumericError);
}

TEST_CASE("modality ablation zeroes the matching losses") {
  KgPair kp = small_pair(10, 0.0, 4, 0.5);
  TrainConfig cfg = small_config(4);
  cfg.epochs = 6;
  cfg.modalities = parse_modalities("s,m");
  TrainResult r = train(kp, cfg);

  for (const EpochMetrics& m : r.history) {
    CHECK(m.losses[0] > 0.0);
    CHECK(m.losses[1] == 0.0);
    CHECK(m.losses[2] == 0.0);
    CHECK(m.losses[3] == 0.0);
    CHECK(m.losses[4] > 0.0);
  }
  // Frozen uncertainty slots keep their initial value.
  CHECK(r.model.u.s.at(0, 1) == 0.0);
  CHECK(r.model.u.s.at(0, 2) == 0.0);
  CHECK(r.model.u.s.at(0, 3) == 0.0);
  CHECK(r.model.u.s.at(0, 0) != 0.0);
}

TEST_CASE("batch forward plans replay bitwise") {
  KgPair kp = small_pair(8, 0.0, 7, 0.5);
  CombinedKG combined = merge_pair(kp.g1, kp.g2);
  EncoderInputs in = make_encoder_inputs(combined.merged, false);
  TrainConfig cfg = small_config(7);
  Model model = init_model(combined.merged, kp.g1.n, kp.g2.n, cfg);
  std::vector<Pair> batch = kp.seeds.train_pairs;
  REQUIRE(batch.size() >= 2);

  BatchForward fresh = batch_forward(in, model, batch, combined.offset, cfg);
  REQUIRE(fresh.plans.size() == 6);
  BatchForward replay = batch_forward(in, model, batch, combined.offset, cfg, &fresh.plans);
  CHECK(replay.total.at(0, 0) == fresh.total.at(0, 0));
  for (int k = 0; k < kLossCount; ++k) {
    CHECK(replay.losses[k].at(0, 0) == fresh.losses[k].at(0, 0));
  }

  TrainConfig off = cfg;
  off.otma.consume = OtConsume::kOff;
  BatchForward no_ot = batch_forward(in, model, batch, combined.offset, off);
  CHECK(no_ot.plans.empty());
}

TEST_CASE("end-to-end gradient matches finite differences") {
  KgPair kp = small_pair(6, 0.0, 9, 0.5);
  CombinedKG combined = merge_pair(kp.g1, kp.g2);
  EncoderInputs in = make_encoder_inputs(combined.merged, false);
  TrainConfig cfg = small_config(9);
  cfg.dim = 8;
  cfg.pmf.detach_weights = false;  // gradient flows through the fusion weights
  Model model = init_model(combined.merged, kp.g1.n, kp.g2.n, cfg);
  std::vector<Pair> batch = kp.seeds.train_pairs;
  REQUIRE(batch.size() >= 2);

  Tape tape;
  for_each_param(model.enc, [&](const std::string&, Tensor& p) { tape.attach_leaf(p); });
  tape.attach_leaf(model.u.s);
  BatchForward fresh = batch_forward(in, model, batch, combined.offset, cfg);
  tape.backward(fresh.total);

  std::map<std::string, Tensor> grads;
  for_each_param(model.enc,
                 [&](const std::string& name, Tensor& p) { grads.emplace(name, tape.grad(p)); });
  grads.emplace("uncertainty.s", tape.grad(model.u.s));
  for_each_param(model.enc, [](const std::string&, Tensor& p) { p.detach(); });
  model.u.s.detach();

  const double h = 1e-5;
  auto fd_check = [&](const std::string& name, Tensor& p) {
    const Tensor& g = grads.at(name);
    for (int i = 0; i < p.rows(); ++i) {
      for (int j = 0; j < p.cols(); ++j) {
        const double keep = p.at(i, j);
        p.at(i, j) = keep + h;
        const double up = batch_forward(in, model, batch, combined.offset, cfg, &fresh.plans)
                              .total.at(0, 0);
        p.at(i, j) = keep - h;
        const double dn = batch_forward(in, model, batch, combined.offset, cfg, &fresh.plans)
                              .total.at(0, 0);
        p.at(i, j) = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double tol = std::max(1e-4, 1e-3 * std::abs(g.at(i, j)));
        INFO(name, "[", i, ",", j, "]");
        CHECK(std::abs(fd - g.at(i, j)) <= tol);
      }
    }
  };
  for_each_param(model.enc, fd_check);
  fd_check("uncertainty.s", model.u.s);
}

TEST_CASE("loss keeps descending across twenty-epoch windows") {
  KgPair kp = small_pair(12, 0.0, 6, 0.25);
  TrainConfig cfg = small_config(6);
  cfg.epochs = 80;
  TrainResult r = train(kp, cfg);
  REQUIRE(r.history.size() == 80);
  for (std::size_t e = 40; e < r.history.size(); ++e) {
    const double before = r.history[e - 20].total;
    const double slack = std::max(0.05, 0.05 * std::abs(before));
    CHECK(r.history[e].total <= before + slack);
  }
}

TEST_CASE("probation promotes mutual pairs into the train set") {
  KgPair kp = small_pair(12, 0.0, 1, 0.25);
  TrainConfig cfg = small_config(1);
  cfg.epochs = 30;
  cfg.iterative = true;
  cfg.probation_period = 2;
  cfg.probation_span = 4;
  TrainResult r = train(kp, cfg);

  const std::size_t seeds = kp.seeds.train_pairs.size();
  CHECK(r.final_train_pairs.size() > seeds);

  bool buffered = false;
  int prev_pairs = 0;
  for (const EpochMetrics& m : r.history) {
    buffered = buffered || m.buffer_size > 0;
    CHECK(m.train_pairs >= prev_pairs);
    prev_pairs = m.train_pairs;
  }
  CHECK(buffered);

  // Zero noise: every promoted pair must be a ground-truth alignment.
  std::set<Pair> truth(kp.seeds.train_pairs.begin(), kp.seeds.train_pairs.end());
  truth.insert(kp.seeds.test_pairs.begin(), kp.seeds.test_pairs.end());
  for (const Pair& p : r.final_train_pairs) CHECK(truth.count(p) == 1);
}

TEST_CASE("early stopping halts on a stale validation score") {
  KgPair kp = small_pair(12, 0.0, 8, 0.5);
  TrainConfig cfg = small_config(8);
  cfg.epochs = 200;
  cfg.patience = 5;
  TrainResult r = train(kp, cfg);

  CHECK(r.early_stopped);
  CHECK(r.history.size() < 200);
  CHECK(r.best_epoch >= 1);
  for (const EpochMetrics& m : r.history) {
    CHECK(m.val_mrr >= 0.0);
    CHECK(m.val_mrr <= 1.0);
  }
  // The validation holdout rejoins the train set for downstream consumers.
  CHECK(r.final_train_pairs.size() == kp.seeds.train_pairs.size());
}

TEST_CASE("trailing singleton batches fold backwards") {
  KgPair kp = small_pair(20, 0.0, 10, 0.25);  // 5 train pairs
  REQUIRE(kp.seeds.train_pairs.size() == 5);
  TrainConfig cfg = small_config(10);
  cfg.epochs = 3;
  cfg.batch_size = 4;
  TrainResult r = train(kp, cfg);
  CHECK(r.history.size() == 3);
  for (const EpochMetrics& m : r.history) CHECK(std::isfinite(m.total));
}
