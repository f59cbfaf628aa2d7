#include "mimea/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mimea/errors.hpp"
#include "mimea/ops.hpp"

namespace mimea {

namespace {

constexpr std::uint64_t kModelTag = 0x6d6f64656cULL;
constexpr std::uint64_t kValSplitTag = 0x76616cULL;

bool has_zero_row(const Tensor& t) {
  for (int i = 0; i < t.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < t.cols(); ++j) acc += t.at(i, j) * t.at(i, j);
    if (acc == 0.0) return true;
  }
  return false;
}

Tensor consume_mode(const Tensor& h, const Tensor& p, OtConsume mode) {
  switch (mode) {
    case OtConsume::kReplace: return p;
    case OtConsume::kAverage: return scale(add(h, p), 0.5);
    case OtConsume::kOff: return h;
  }
  return h;
}

RankingResult metrics_over_pairs(const Tensor& z, const std::vector<Pair>& pairs, int offset) {
  if (pairs.empty()) return RankingResult{};
  std::vector<int> lids, rids;
  lids.reserve(pairs.size());
  rids.reserve(pairs.size());
  for (const Pair& p : pairs) {
    lids.push_back(p.first);
    rids.push_back(p.second + offset);
  }
  Tensor q = gather_rows(z, lids);
  Tensor c = gather_rows(z, rids);
  std::vector<int> truth(pairs.size());
  std::iota(truth.begin(), truth.end(), 0);
  return rank_alignments(q, c, truth);
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) {
    throw ConfigError("train.dim must be an even number >= 2, got " + std::to_string(dim));
  }
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("train.heads must divide dim, got " + std::to_string(heads) + " for dim " +
                      std::to_string(dim));
  }
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 2) {
    throw ConfigError("train.batch_size must be >= 2 for in-batch negatives, got " +
                      std::to_string(batch_size));
  }
  if (probation_period < 1) throw ConfigError("train.R must be >= 1");
  if (iterative && probation_span < probation_period) {
    throw ConfigError("train.M must be >= train.R, got M=" + std::to_string(probation_span) +
                      " R=" + std::to_string(probation_period));
  }
  if (patience < 0) throw ConfigError("train.patience must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("mcl.tau must be positive");
  if (gamma < 0.0) throw ConfigError("mcl.gamma must be nonnegative");
  if (!(otma.epsilon > 0.0)) throw ConfigError("otma.epsilon must be positive");
  if (otma.max_iters < 1) throw ConfigError("otma.max_iters must be >= 1");
  if (pmf.lambda < 0.0) throw ConfigError("pmf.lambda must be nonnegative");
  bool any = false;
  for (bool b : modalities) any = any || b;
  if (!any) throw ConfigError("mcl.modalities must keep at least one modality");
  bool any_base = false;
  for (int k = 0; k < 4; ++k) any_base = any_base || modalities[k];
  if (!any_base) throw ConfigError("mcl.modalities must keep at least one base modality");
}

Model init_model(const MultiModalKG& merged, int n1, int n2, const TrainConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, kModelTag));
  Model m;
  m.n1 = n1;
  m.n2 = n2;
  m.enc = init_encoders(merged.n, cfg.dim, cfg.heads, std::max(1, merged.relation_vocab),
                        std::max(1, merged.attribute_vocab), std::max(1, merged.d_v), rng);
  m.ot_proj = Tensor(4 * cfg.dim, cfg.dim);
  const double sd = 1.0 / std::sqrt(4.0 * cfg.dim);
  for (double& x : m.ot_proj.values()) x = sd * rng.normal();
  m.u = init_uncertainty();
  return m;
}

InferenceState inference_forward(const EncoderInputs& in, const Model& model,
                                 const TrainConfig& cfg) {
  PmfConfig pcfg = cfg.pmf;
  for (int k = 0; k < 4; ++k) pcfg.active[k] = cfg.modalities[k];

  InferenceState st;
  st.embeds = encode_all(in, model.enc);
  FuseResult fr = fuse(st.embeds, pcfg);
  st.h_m = fr.h_m;
  // Ranking works on the fused joint embedding: its coefficients already
  // weight each modality by how much it agrees with the pivot, so a noisy
  // or collision-heavy modality cannot dominate the similarity the way it
  // does in a flat concatenation. Transport enriches the training loss
  // only and never touches this path.
  st.z = l2_normalize_rows_safe(st.h_m);
  return st;
}

std::vector<Pair> mutual_nn_pairs(const Tensor& emb1, const Tensor& emb2,
                                  const std::vector<Pair>& excluded) {
  if (emb1.cols() != emb2.cols()) {
    throw std::invalid_argument("mutual_nn_pairs: embedding widths differ, " + emb1.shape_str() +
                                " vs " + emb2.shape_str());
  }
  const int n1 = emb1.rows();
  const int n2 = emb2.rows();
  const int d = emb1.cols();
  std::vector<char> ex1(n1, 0), ex2(n2, 0);
  for (const Pair& p : excluded) {
    if (p.first >= 0 && p.first < n1) ex1[p.first] = 1;
    if (p.second >= 0 && p.second < n2) ex2[p.second] = 1;
  }
  auto unit = [d](const Tensor& t) {
    std::vector<double> out(t.values());
    for (int i = 0; i < t.rows(); ++i) {
      double sq = 0.0;
      for (int j = 0; j < d; ++j) sq += t.at(i, j) * t.at(i, j);
      const double nr = std::sqrt(sq);
      if (nr > 0.0) {
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] /= nr;
      }
    }
    return out;
  };
  const std::vector<double> u1 = unit(emb1);
  const std::vector<double> u2 = unit(emb2);

  std::vector<int> best2(n1, -1);  // nearest unexcluded j for each i
  std::vector<int> best1(n2, -1);  // nearest unexcluded i for each j
  std::vector<double> score2(n1, 0.0), score1(n2, 0.0);
  for (int i = 0; i < n1; ++i) {
    if (ex1[i]) continue;
    for (int j = 0; j < n2; ++j) {
      if (ex2[j]) continue;
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += u1[static_cast<std::size_t>(i) * d + k] * u2[static_cast<std::size_t>(j) * d + k];
      }
      if (best2[i] < 0 || s > score2[i]) {
        best2[i] = j;
        score2[i] = s;
      }
      if (best1[j] < 0 || s > score1[j]) {
        best1[j] = i;
        score1[j] = s;
      }
    }
  }
  std::vector<Pair> out;
  for (int i = 0; i < n1; ++i) {
    const int j = best2[i];
    if (j >= 0 && best1[j] == i) out.emplace_back(i, j);
  }
  return out;
}

BatchForward batch_forward(const EncoderInputs& in, const Model& model,
                           const std::vector<Pair>& batch, int offset, const TrainConfig& cfg,
                           const std::vector<TransportPlan>* frozen) {
  PmfConfig pcfg = cfg.pmf;
  for (int k = 0; k < 4; ++k) pcfg.active[k] = cfg.modalities[k];

  ModalEmbeddings e = encode_all(in, model.enc);
  FuseResult fr = fuse(e, pcfg);

  const int bsz = static_cast<int>(batch.size());
  std::vector<int> lids, rids;
  lids.reserve(static_cast<std::size_t>(bsz));
  rids.reserve(static_cast<std::size_t>(bsz));
  for (const Pair& p : batch) lids.push_back(p.first);
  for (const Pair& p : batch) rids.push_back(p.second + offset);

  std::array<std::array<Tensor, 4>, 2> hb;
  std::array<Tensor, 2> hm_b;
  for (int side = 0; side < 2; ++side) {
    const std::vector<int>& ids = side == 0 ? lids : rids;
    hb[side] = {gather_rows(e.s, ids), gather_rows(e.r, ids), gather_rows(e.a, ids),
                gather_rows(e.v, ids)};
    hm_b[side] = gather_rows(fr.h_m, ids);
  }

  BatchForward out;
  std::array<std::array<Tensor, 4>, 2> consumed = hb;
  if (cfg.otma.consume != OtConsume::kOff) {
    out.plans.resize(6);
    for (int side = 0; side < 2; ++side) {
      Tensor target = matmul(hm_b[side].detached(), model.ot_proj.detached());
      for (int k = 1; k < 4; ++k) {
        if (!cfg.modalities[k]) continue;
        const std::size_t slot = static_cast<std::size_t>(2 * (k - 1) + side);
        Tensor p;
        if (frozen != nullptr) {
          const TransportPlan& plan = (*frozen)[slot];
          p = plan.t.rows() > 0 ? translate(hb[side][k], plan) : hb[side][k];
        } else if (has_zero_row(hb[side][k]) || has_zero_row(target)) {
          // A zero-norm row would poison the cosine cost; skip transport for
          // this batch and keep the uni-modal rows.
          p = hb[side][k];
        } else {
          Tensor cost = cosine_cost(hb[side][k].detached(), target);
          out.plans[slot] =
              sinkhorn(TransportProblem{cost, cfg.otma.epsilon}, cfg.otma.max_iters, cfg.otma.tol);
          p = translate(hb[side][k], out.plans[slot]);
        }
        consumed[side][k] = consume_mode(hb[side][k], p, cfg.otma.consume);
      }
    }
  }

  for (int k = 0; k < kLossCount; ++k) {
    if (!cfg.modalities[k]) {
      out.losses[k] = Tensor::zeros(1, 1);
      continue;
    }
    ContrastiveBatch cb;
    cb.e1 = k < 4 ? consumed[0][k] : hm_b[0];
    cb.e2 = k < 4 ? consumed[1][k] : hm_b[1];
    cb.tau = cfg.tau;
    cb.gamma = cfg.gamma;
    out.losses[k] = modal_loss(cb);
  }

  out.total = total_loss(out.losses, model.u, cfg.modalities);
  return out;
}

namespace {

struct StepStats {
  std::array<double, kLossCount> losses{};
  double total = 0.0;
};

StepStats train_step(Model& model, Optimizer& opt, const EncoderInputs& inputs,
                     const std::vector<Pair>& batch, int offset, const TrainConfig& cfg,
                     int epoch, int batch_idx) {
  Tape tape;
  for_each_param(model.enc, [&](const std::string&, Tensor& p) { tape.attach_leaf(p); });
  tape.attach_leaf(model.u.s);
  auto detach_all = [&] {
    for_each_param(model.enc, [](const std::string&, Tensor& p) { p.detach(); });
    model.u.s.detach();
  };

  try {
    BatchForward bf = batch_forward(inputs, model, batch, offset, cfg);
    const std::array<Tensor, kLossCount>& losses = bf.losses;
    Tensor total = bf.total;
    if (!total.all_finite()) {
      std::ostringstream diag;
      diag << "train: non-finite loss at epoch " << epoch << " batch " << batch_idx << ";";
      for (int k = 0; k < kLossCount; ++k) {
        diag << " " << kLossNames[k] << "=" << losses[k].at(0, 0);
      }
      diag << "; lr=" << cfg.optim.lr;
      detach_all();
      throw NumericError(diag.str());
    }

    tape.backward(total);
    opt.begin_step();
    for_each_param(model.enc, [&](const std::string& name, Tensor& p) {
      Tensor g = tape.grad(p);
      opt.step(name, p, g);
      p.detach();
    });
    Tensor gu = tape.grad(model.u.s);
    opt.step("uncertainty.s", model.u.s, gu);
    model.u.s.detach();

    StepStats st;
    for (int k = 0; k < kLossCount; ++k) {
      st.losses[k] = cfg.modalities[k] ? losses[k].at(0, 0) : 0.0;
    }
    st.total = total.at(0, 0);
    return st;
  } catch (...) {
    detach_all();
    throw;
  }
}

}  // namespace

TrainResult train(const KgPair& kgs, const TrainConfig& cfg) {
  cfg.validate();
  if (kgs.seeds.train_pairs.size() < 2) {
    throw ConfigError("train: need at least 2 seed pairs, got " +
                      std::to_string(kgs.seeds.train_pairs.size()));
  }
  CombinedKG combined = merge_pair(kgs.g1, kgs.g2);
  EncoderInputs inputs = make_encoder_inputs(combined.merged, cfg.attr_edges);
  const int offset = combined.offset;

  Model model = init_model(combined.merged, kgs.g1.n, kgs.g2.n, cfg);
  Optimizer opt(cfg.optim);

  std::vector<Pair> train_pairs = kgs.seeds.train_pairs;
  std::vector<Pair> val_pairs;
  Rng root(cfg.seed);
  if (cfg.patience > 0) {
    Rng vr(Rng::derive(cfg.seed, kValSplitTag));
    vr.shuffle(train_pairs);
    const std::size_t val_n =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * train_pairs.size())));
    if (train_pairs.size() - val_n < 2) {
      throw ConfigError("train: too few seed pairs to hold out a validation split");
    }
    val_pairs.assign(train_pairs.begin(), train_pairs.begin() + val_n);
    train_pairs.erase(train_pairs.begin(), train_pairs.begin() + val_n);
  }
  const std::vector<Pair>& test_pairs = kgs.seeds.test_pairs;

  std::map<Pair, int> buffer;  // pair -> epoch first seen
  TrainResult result;
  double best_val = -1.0;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng er = root.fork(static_cast<std::uint64_t>(epoch));
    er.shuffle(train_pairs);

    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t b0 = 0; b0 < train_pairs.size(); b0 += cfg.batch_size) {
      ranges.emplace_back(b0, std::min(train_pairs.size(), b0 + cfg.batch_size));
    }
    // A trailing singleton cannot form in-batch negatives; fold it backward.
    if (ranges.size() > 1 && ranges.back().second - ranges.back().first == 1) {
      ranges.pop_back();
      ranges.back().second = train_pairs.size();
    }

    std::array<double, kLossCount> loss_sum{};
    double total_sum = 0.0;
    int pair_count = 0;
    int batch_idx = 0;
    for (const auto& [b0, b1] : ranges) {
      std::vector<Pair> batch(train_pairs.begin() + b0, train_pairs.begin() + b1);
      StepStats st = train_step(model, opt, inputs, batch, offset, cfg, epoch, batch_idx++);
      const int bsz = static_cast<int>(b1 - b0);
      for (int k = 0; k < kLossCount; ++k) loss_sum[k] += st.losses[k] * bsz;
      total_sum += st.total * bsz;
      pair_count += bsz;
    }

    InferenceState st = inference_forward(inputs, model, cfg);
    RankingResult test_rr = metrics_over_pairs(st.z, test_pairs, offset);
    double val_mrr = -1.0;
    if (cfg.patience > 0) val_mrr = metrics_over_pairs(st.z, val_pairs, offset).mrr;

    if (cfg.iterative && epoch > cfg.epochs / 2 && epoch % cfg.probation_period == 0) {
      std::vector<Pair> excluded = train_pairs;
      excluded.insert(excluded.end(), val_pairs.begin(), val_pairs.end());
      std::vector<int> g1_rows(model.n1), g2_rows(model.n2);
      std::iota(g1_rows.begin(), g1_rows.end(), 0);
      std::iota(g2_rows.begin(), g2_rows.end(), model.n1);
      Tensor z1 = gather_rows(st.z, g1_rows);
      Tensor z2 = gather_rows(st.z, g2_rows);
      std::vector<Pair> mutual = mutual_nn_pairs(z1, z2, excluded);
      std::set<Pair> now(mutual.begin(), mutual.end());
      for (auto it = buffer.begin(); it != buffer.end();) {
        it = now.count(it->first) ? std::next(it) : buffer.erase(it);
      }
      for (const Pair& p : mutual) {
        auto [it, inserted] = buffer.emplace(p, epoch);
        if (!inserted && epoch - it->second >= cfg.probation_span) {
          train_pairs.push_back(p);
          buffer.erase(it);
        }
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    for (int k = 0; k < kLossCount; ++k) m.losses[k] = loss_sum[k] / pair_count;
    m.total = total_sum / pair_count;
    m.mrr = test_rr.mrr;
    m.hits1 = test_rr.hits1;
    m.hits10 = test_rr.hits10;
    m.val_mrr = val_mrr;
    m.buffer_size = static_cast<int>(buffer.size());
    m.train_pairs = static_cast<int>(train_pairs.size());
    result.history.push_back(m);

    if (cfg.patience > 0) {
      if (val_mrr > best_val) {
        best_val = val_mrr;
        best_epoch = epoch;
      } else if (epoch - best_epoch >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  result.best_epoch = cfg.patience > 0 ? best_epoch : static_cast<int>(result.history.size());
  result.final_train_pairs = train_pairs;
  result.final_train_pairs.insert(result.final_train_pairs.end(), val_pairs.begin(),
                                  val_pairs.end());
  result.model = std::move(model);
  return result;
}

namespace {

void collect_named(const Model& model, std::map<std::string, Tensor>& out) {
  Model copy = model;  // for_each_param needs mutable access
  for_each_param(copy.enc,
                 [&](const std::string& name, Tensor& p) { out.emplace(name, p.detached()); });
  out.emplace("ot_proj", model.ot_proj.detached());
  out.emplace("uncertainty.s", model.u.s.detached());
}

template <typename T>
void write_le(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, std::uint64_t config_hash) {
  std::map<std::string, Tensor> blobs;
  collect_named(model, blobs);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  f.write("MIMR1", 5);
  write_le(f, config_hash);
  write_le(f, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, t] : blobs) {
    write_le(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le(f, static_cast<std::uint32_t>(t.rows()));
    write_le(f, static_cast<std::uint32_t>(t.cols()));
    f.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(sizeof(double) * t.values().size()));
  }
  if (!f) throw DataError("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[5] = {};
  f.read(magic, 5);
  if (!f || std::memcmp(magic, "MIMR1", 5) != 0) {
    throw DataError("checkpoint: '" + path + "' is not a MIMR1 container");
  }
  Checkpoint ck;
  ck.config_hash = read_le<std::uint64_t>(f);
  const std::uint32_t count = read_le<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < count && f; ++i) {
    const std::uint32_t name_len = read_le<std::uint32_t>(f);
    if (name_len > 4096) throw DataError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t rows = read_le<std::uint32_t>(f);
    const std::uint32_t cols = read_le<std::uint32_t>(f);
    if (rows > (1u << 24) || cols > (1u << 24)) {
      throw DataError("checkpoint: implausible blob shape");
    }
    std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
    f.read(reinterpret_cast<char*>(vals.data()),
           static_cast<std::streamsize>(sizeof(double) * vals.size()));
    if (!f) throw DataError("checkpoint: truncated blob '" + name + "' in '" + path + "'");
    ck.blobs.emplace(std::move(name),
                     Tensor(static_cast<int>(rows), static_cast<int>(cols), std::move(vals)));
  }
  if (!f) throw DataError("checkpoint: truncated container '" + path + "'");
  return ck;
}

namespace {

void apply_blob(const Checkpoint& ck, const std::string& name, Tensor& dst) {
  auto it = ck.blobs.find(name);
  if (it == ck.blobs.end()) throw DataError("checkpoint: missing parameter '" + name + "'");
  const Tensor& src = it->second;
  if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
    throw DataError("checkpoint: parameter '" + name + "' is " + src.shape_str() +
                    ", model expects " + dst.shape_str());
  }
  dst.values() = src.values();
  dst.detach();
}

}  // namespace

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
  for_each_param(model.enc,
                 [&](const std::string& name, Tensor& p) { apply_blob(ckpt, name, p); });
  apply_blob(ckpt, "ot_proj", model.ot_proj);
  apply_blob(ckpt, "uncertainty.s", model.u.s);
}

std::string metric_log_line(const EpochMetrics& m) {
  std::string out = "{\"epoch\":" + std::to_string(m.epoch);
  const char* keys[kLossCount] = {"loss_s", "loss_r", "loss_a", "loss_v", "loss_m"};
  for (int k = 0; k < kLossCount; ++k) {
    out += ",\"";
    out += keys[k];
    out += "\":";
    append_number(out, m.losses[k]);
  }
  out += ",\"loss_total\":";
  append_number(out, m.total);
  out += ",\"mrr\":";
  append_number(out, m.mrr);
  out += ",\"hits1\":";
  append_number(out, m.hits1);
  out += ",\"hits10\":";
  append_number(out, m.hits10);
  out += ",\"val_mrr\":";
  append_number(out, m.val_mrr);
  out += ",\"buffer\":" + std::to_string(m.buffer_size);
  out += ",\"train_pairs\":" + std::to_string(m.train_pairs);
  out += "}";
  return out;
}

}  // namespace mimea
