#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mimea/config.hpp"
#include "mimea/data.hpp"
#include "mimea/errors.hpp"
#include "mimea/eval.hpp"
#include "mimea/ops.hpp"
#include "mimea/trainer.hpp"

#ifndef MIMEA_GIT_DESCRIBE
#define MIMEA_GIT_DESCRIBE "unknown"
#endif

namespace {

using namespace mimea;
using nlohmann::json;

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
LogLevel g_log = LogLevel::kInfo;

void init_log() {
  const char* v = std::getenv("MIMEA_LOG");
  if (!v) return;
  const std::string s(v);
  if (s == "error") g_log = LogLevel::kError;
  else if (s == "info") g_log = LogLevel::kInfo;
  else if (s == "debug") g_log = LogLevel::kDebug;
  else throw ConfigError("MIMEA_LOG must be error, info or debug, got '" + s + "'");
}

void log_info(const std::string& msg) {
  if (g_log >= LogLevel::kInfo) std::cerr << "[mimea] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (g_log >= LogLevel::kDebug) std::cerr << "[mimea] " << msg << "\n";
}

std::string to_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string json_num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Flags shared by train, evaluate and ablate. Overrides are collected as raw
// strings keyed like the config file so one code path validates both sources.
struct RunOptions {
  std::string data_dir;
  std::string out_dir;
  std::string config_file;
  std::string ablate_label;
  double seed_ratio = 0.2;
  bool paper_defaults = false;
  bool no_iterative = false;
  ConfigMap overrides;
};

void add_config_flags(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_flag("--paper-defaults", o.paper_defaults,
                "start from the full-scale profile (d=400, lr=5e-4, batch 512, 1000 epochs)");
  auto bind = [cmd, &o](const std::string& flag, std::string key, const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag, [&o, key = std::move(key)](const std::string& v) { o.overrides[key] = v; }, desc);
  };
  bind("--dim", "train.dim", "embedding width per modality");
  bind("--heads", "train.heads", "GAT attention heads");
  bind("--epochs", "train.epochs", "training epochs");
  bind("--batch-size", "train.batch_size", "mini-batch size");
  bind("--seed", "train.seed", "run seed");
  bind("--patience", "train.patience", "early-stopping patience, 0 disables");
  bind("--probation-period", "train.probation_period", "epochs between mutual-NN scans");
  bind("--probation-span", "train.probation_span", "epochs a candidate pair must survive");
  bind("--tau", "train.tau", "contrastive temperature");
  bind("--gamma", "train.gamma", "inner-graph negative weight");
  bind("--modalities", "train.modalities", "active losses, e.g. s,r,a,v,m");
  bind("--lr", "optim.lr", "learning rate");
  bind("--weight-decay", "optim.weight_decay", "decoupled weight decay");
  bind("--optimizer", "optim.kind", "sgd or adamw");
  bind("--lambda", "pmf.lambda", "KL-to-weight incremental rate");
  bind("--distribution", "pmf.distribution", "beta, cauchy, gamma, gumbel or laplace");
  bind("--pivot", "pmf.pivot", "fusion pivot modality");
  bind("--epsilon", "otma.epsilon", "Sinkhorn entropic regulariser");
  bind("--consume", "otma.consume", "transport consumption: replace, average or off");
  cmd->add_flag("--no-iterative", o.no_iterative, "disable probation pseudo-labelling");
  cmd->add_option("--ablate", o.ablate_label,
                  "drop one modality: w/o-structure, w/o-relation, w/o-attribute, w/o-visual");
  cmd->add_option("--seed-ratio", o.seed_ratio, "fraction of links used as training seeds");
}

std::string ablate_modalities(const std::string& label) {
  if (label == "w/o-structure") return "r,a,v,m";
  if (label == "w/o-relation") return "s,a,v,m";
  if (label == "w/o-attribute") return "s,r,v,m";
  if (label == "w/o-visual") return "s,r,a,m";
  throw ConfigError("unknown ablation '" + label +
                    "'; expected w/o-structure, w/o-relation, w/o-attribute or w/o-visual");
}

TrainConfig resolve_config(const RunOptions& o) {
  TrainConfig cfg;
  if (o.paper_defaults) apply_paper_defaults(cfg);
  if (!o.config_file.empty()) apply_config(cfg, load_config_file(o.config_file));
  apply_config(cfg, o.overrides);
  if (o.no_iterative) cfg.iterative = false;
  if (!o.ablate_label.empty()) cfg.modalities = parse_modalities(ablate_modalities(o.ablate_label));
  cfg.validate();
  return cfg;
}

KgPair load_and_split(const RunOptions& o, const TrainConfig& cfg, std::uint64_t* digest) {
  KgPair kp = load_kg_pair(o.data_dir);
  if (digest) *digest = digest_pair(kp);
  const std::vector<Pair> links = kp.seeds.train_pairs;
  kp.seeds = split_seeds(links, o.seed_ratio, cfg.seed + 1);
  log_info("loaded " + o.data_dir + ": n1=" + std::to_string(kp.g1.n) +
           " n2=" + std::to_string(kp.g2.n) + " links=" + std::to_string(links.size()) +
           " train=" + std::to_string(kp.seeds.train_pairs.size()) +
           " test=" + std::to_string(kp.seeds.test_pairs.size()));
  return kp;
}

json manifest_json(const TrainConfig& cfg, const RunOptions& o, std::uint64_t dataset_digest) {
  json cfg_json = json::object();
  for (const auto& [key, value] : parse_config_text(canonical_config_string(cfg))) {
    const std::size_t dot = key.find('.');
    cfg_json[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  json j;
  j["config"] = cfg_json;
  j["config_hash"] = to_hex(config_hash(cfg));
  j["data_dir"] = o.data_dir;
  j["dataset_digest"] = to_hex(dataset_digest);
  j["git"] = MIMEA_GIT_DESCRIBE;
  j["out_dir"] = o.out_dir;
  j["seed"] = cfg.seed;
  j["seed_ratio"] = o.seed_ratio;
  return j;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << content;
}

void print_metrics_table(const std::vector<std::pair<std::string, RankingResult>>& rows) {
  std::printf("%-14s %7s %7s %7s\n", "", "MRR", "H@1", "H@10");
  for (const auto& [label, r] : rows) {
    std::printf("%-14s %7.3f %7.3f %7.3f\n", label.c_str(), r.mrr, r.hits1, r.hits10);
  }
}

std::string metrics_json_line(const RankingResult& r) {
  return "{\"mrr\":" + json_num(r.mrr) + ",\"hits1\":" + json_num(r.hits1) +
         ",\"hits10\":" + json_num(r.hits10) + ",\"pairs\":" + std::to_string(r.ranks.size()) + "}";
}

RankingResult eval_pairs(const Tensor& z, const std::vector<Pair>& pairs, int offset,
                         bool bidirectional) {
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
  RankingResult fwd = rank_alignments(q, c, truth);
  if (!bidirectional) return fwd;
  RankingResult rev = rank_alignments(c, q, truth);
  std::vector<int> ranks = fwd.ranks;
  ranks.insert(ranks.end(), rev.ranks.begin(), rev.ranks.end());
  return from_ranks(std::move(ranks));
}

void report_history(const std::vector<EpochMetrics>& history) {
  const int stride = std::max<int>(1, static_cast<int>(history.size()) / 10);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const std::string line = metric_log_line(history[i]);
    if (g_log >= LogLevel::kDebug) log_debug(line);
    else if (i % stride == 0 || i + 1 == history.size()) log_info(line);
  }
}

int run_gen_synth(int n, int d_v, double noise, std::uint64_t seed, const std::string& out_dir) {
  const KgPair kp = gen_synthetic_pair(n, d_v, noise, seed);
  std::filesystem::create_directories(out_dir);
  save_kg_pair(out_dir, kp);
  log_info("wrote " + out_dir + " with " + std::to_string(kp.seeds.train_pairs.size()) + " links");
  std::printf("dataset_digest %s\n", to_hex(digest_pair(kp)).c_str());
  return 0;
}

int run_train(const RunOptions& o) {
  const TrainConfig cfg = resolve_config(o);
  std::uint64_t digest = 0;
  const KgPair kp = load_and_split(o, cfg, &digest);

  std::filesystem::create_directories(o.out_dir);
  write_file(o.out_dir + "/manifest.json", manifest_json(cfg, o, digest).dump(2) + "\n");
  log_info("manifest written, training for " + std::to_string(cfg.epochs) + " epochs");

  const TrainResult result = train(kp, cfg);
  report_history(result.history);

  std::string log;
  for (const EpochMetrics& m : result.history) log += metric_log_line(m) + "\n";
  write_file(o.out_dir + "/metrics.jsonl", log);

  std::string pairs_tsv;
  for (const Pair& p : result.final_train_pairs) {
    pairs_tsv += std::to_string(p.first) + "\t" + std::to_string(p.second) + "\n";
  }
  write_file(o.out_dir + "/final_pairs.tsv", pairs_tsv);
  save_checkpoint(o.out_dir + "/checkpoint.mimr", result.model, config_hash(cfg));

  const EpochMetrics& last = result.history.back();
  RankingResult r;
  r.mrr = last.mrr;
  r.hits1 = last.hits1;
  r.hits10 = last.hits10;
  r.ranks.resize(kp.seeds.test_pairs.size());
  print_metrics_table({{"test", r}});
  std::printf("%s\n", metrics_json_line(r).c_str());
  log_info("checkpoint and metrics written to " + o.out_dir);
  return 0;
}

int run_evaluate(const RunOptions& o, const std::string& ckpt_path, bool bidirectional,
                 const std::string& split) {
  const TrainConfig cfg = resolve_config(o);
  KgPair kp = load_and_split(o, cfg, nullptr);

  const CombinedKG ck = merge_pair(kp.g1, kp.g2);
  const EncoderInputs in = make_encoder_inputs(ck.merged, cfg.attr_edges);
  Model model = init_model(ck.merged, kp.g1.n, kp.g2.n, cfg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config_hash != config_hash(cfg)) {
    log_info("checkpoint config hash " + to_hex(ckpt.config_hash) +
             " differs from resolved config " + to_hex(config_hash(cfg)));
  }
  apply_checkpoint(model, ckpt);

  std::vector<Pair> pairs;
  if (split == "test") pairs = kp.seeds.test_pairs;
  else if (split == "train") pairs = kp.seeds.train_pairs;
  else if (split == "all") {
    pairs = kp.seeds.train_pairs;
    pairs.insert(pairs.end(), kp.seeds.test_pairs.begin(), kp.seeds.test_pairs.end());
  } else {
    throw ConfigError("--split must be test, train or all, got '" + split + "'");
  }
  if (pairs.empty()) throw DataError("no '" + split + "' pairs to evaluate");

  const InferenceState st = inference_forward(in, model, cfg);
  const RankingResult r = eval_pairs(st.z, pairs, ck.offset, bidirectional);
  print_metrics_table({{split + (bidirectional ? " (bidir)" : ""), r}});
  std::printf("%s\n", metrics_json_line(r).c_str());
  return 0;
}

struct SweepCell {
  std::string sweep;
  std::string label;
  TrainConfig cfg;
};

int run_ablate(const RunOptions& o, const std::string& sweep, int threads) {
  if (threads < 1) throw ConfigError("--threads must be at least 1");
  const TrainConfig base = resolve_config(o);
  const KgPair kp = load_and_split(o, base, nullptr);

  std::vector<SweepCell> cells;
  if (sweep == "modality" || sweep == "all") {
    cells.push_back({"modality", "full", base});
    for (const char* label :
         {"w/o-structure", "w/o-relation", "w/o-attribute", "w/o-visual"}) {
      TrainConfig c = base;
      c.modalities = parse_modalities(ablate_modalities(label));
      cells.push_back({"modality", label, c});
    }
  }
  if (sweep == "distribution" || sweep == "all") {
    for (Distribution d : {Distribution::kBeta, Distribution::kCauchy, Distribution::kGamma,
                           Distribution::kGumbel, Distribution::kLaplace}) {
      TrainConfig c = base;
      c.pmf.distribution = d;
      cells.push_back({"distribution", to_string(d), c});
    }
  }
  if (sweep == "pivot" || sweep == "all") {
    for (Pivot p : {Pivot::kAttribute, Pivot::kRelation, Pivot::kVisual, Pivot::kStructural}) {
      TrainConfig c = base;
      c.pmf.pivot = p;
      cells.push_back({"pivot", to_string(p), c});
    }
  }
  if (cells.empty()) {
    throw ConfigError("--sweep must be modality, distribution, pivot or all, got '" + sweep + "'");
  }

  std::vector<EpochMetrics> finals(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  const int workers = std::min<int>(threads, static_cast<int>(cells.size()));
  auto work = [&](int start) {
    for (std::size_t i = start; i < cells.size(); i += workers) {
      try {
        finals[i] = train(kp, cells[i].cfg).history.back();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::printf("%-13s %-15s %7s %7s %7s\n", "sweep", "setting", "MRR", "H@1", "H@10");
  json report = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const EpochMetrics& m = finals[i];
    std::printf("%-13s %-15s %7.3f %7.3f %7.3f\n", cells[i].sweep.c_str(),
                cells[i].label.c_str(), m.mrr, m.hits1, m.hits10);
    json row;
    row["sweep"] = cells[i].sweep;
    row["setting"] = cells[i].label;
    row["mrr"] = m.mrr;
    row["hits1"] = m.hits1;
    row["hits10"] = m.hits10;
    report.push_back(row);
  }
  if (!o.out_dir.empty()) {
    std::filesystem::create_directories(o.out_dir);
    write_file(o.out_dir + "/ablate_report.json", report.dump(2) + "\n");
    log_info("report written to " + o.out_dir + "/ablate_report.json");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    init_log();
  } catch (const mimea::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"multi-modal entity alignment pipeline"};
  app.require_subcommand(1);

  int gen_n = 0, gen_dv = 8;
  double gen_noise = 0.0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic aligned graph pair");
  gen->add_option("--n", gen_n, "entities per graph")->required();
  gen->add_option("--d-v", gen_dv, "visual feature width");
  gen->add_option("--noise", gen_noise, "fraction of perturbed triples and features");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  RunOptions train_o;
  CLI::App* tr = app.add_subcommand("train", "train on a dataset directory");
  tr->add_option("--data", train_o.data_dir, "dataset directory")->required();
  tr->add_option("--out", train_o.out_dir, "run output directory")->required();
  add_config_flags(tr, train_o);

  RunOptions eval_o;
  std::string eval_ckpt, eval_split = "test";
  bool eval_bidir = false;
  CLI::App* ev = app.add_subcommand("evaluate", "rank alignments with a trained checkpoint");
  ev->add_option("--data", eval_o.data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--split", eval_split, "pairs to rank: test, train or all");
  ev->add_flag("--bidirectional", eval_bidir, "average ranks over both directions");
  add_config_flags(ev, eval_o);

  RunOptions abl_o;
  std::string abl_sweep = "all";
  int abl_threads = 1;
  CLI::App* ab = app.add_subcommand("ablate", "modality, distribution and pivot sweeps");
  ab->add_option("--data", abl_o.data_dir, "dataset directory")->required();
  ab->add_option("--out", abl_o.out_dir, "optional report directory");
  ab->add_option("--sweep", abl_sweep, "modality, distribution, pivot or all");
  ab->add_option("--threads", abl_threads, "parallel training runs (independent tapes)");
  add_config_flags(ab, abl_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen_synth(gen_n, gen_dv, gen_noise, gen_seed, gen_out);
    if (*tr) return run_train(train_o);
    if (*ev) return run_evaluate(eval_o, eval_ckpt, eval_bidir, eval_split);
    if (*ab) return run_ablate(abl_o, abl_sweep, abl_threads);
  } catch (const mimea::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mimea::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mimea::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
