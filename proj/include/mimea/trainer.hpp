#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mimea/data.hpp"
#include "mimea/encoders.hpp"
#include "mimea/eval.hpp"
#include "mimea/mcl.hpp"
#include "mimea/optim.hpp"
#include "mimea/otma.hpp"
#include "mimea/pmf.hpp"
#include "mimea/rng.hpp"
#include "mimea/tensor.hpp"

namespace mimea {

struct TrainConfig {
  TrainConfig() { otma.consume = OtConsume::kAverage; }

  int dim = 32;
  int heads = 2;
  int epochs = 200;
  int batch_size = 16;
  std::uint64_t seed = 0;
  bool iterative = true;
  int probation_period = 5;   // mutual-NN check every this many epochs
  int probation_span = 25;    // epochs a pair must survive in the buffer
  int patience = 0;           // early stopping; 0 disables
  bool attr_edges = false;
  OptimConfig optim;
  PmfConfig pmf;
  // Desk profile blends the transported embedding with the raw one instead
  // of replacing it: at mini-batch sample counts this small, a plain
  // replacement feeds the contrastive losses entropically blurred rows and
  // training never recovers the alignment.
  OtmaConfig otma;
  double tau = 0.1;
  double gamma = 0.8;
  std::array<bool, kLossCount> modalities{true, true, true, true, true};

  void validate() const;  // throws ConfigError
};

// All learnable state plus the fixed transport bridge. The encoders cover
// the merged graph (graph-2 rows offset by n1); ot_proj maps the 4d joint
// embedding onto each d-wide modality space and is deliberately kept out of
// the optimizer so weight decay cannot drift the transport targets.
struct Model {
  ModalEncoderSet enc;
  Tensor ot_proj;  // 4d x d
  UncertaintyWeights u;
  int n1 = 0;
  int n2 = 0;
};

Model init_model(const MultiModalKG& merged, int n1, int n2, const TrainConfig& cfg);

// Full-graph forward pass on detached parameters: encode, fuse, and the
// inference-time embedding used for ranking and mutual-NN selection. z is
// the row-normalized joint embedding: its probability-guided coefficients
// already damp the modalities that carry little signal, which a flat
// concatenation of the per-modality blocks would re-amplify. The raw
// blocks stay available for diagnostics. Transport stays out of this path
// by design.
struct InferenceState {
  ModalEmbeddings embeds;
  Tensor h_m;
  Tensor z;  // n x 4d, normalized h_m
};
InferenceState inference_forward(const EncoderInputs& in, const Model& model,
                                 const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  std::array<double, kLossCount> losses{};  // epoch means; ablated slots 0
  double total = 0.0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits10 = 0.0;
  double val_mrr = -1.0;  // -1 when early stopping is off
  int buffer_size = 0;
  int train_pairs = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> history;
  std::vector<Pair> final_train_pairs;  // seeds plus promoted pseudo-labels
  bool early_stopped = false;
  int best_epoch = -1;
};

// One mini-batch loss evaluation: encode the merged graph, fuse, transport
// each graph side's batch rows, and assemble the contrastive losses. With
// `frozen` null the transport plans are solved fresh and returned in `plans`
// (slot 2*(k-1)+side for modality k in r/a/v and side in left/right; empty
// tensor when transport was skipped); passing a previous `plans` vector
// re-applies those plans verbatim, which is what a finite-difference probe
// of this stop-gradient graph needs.
struct BatchForward {
  std::array<Tensor, kLossCount> losses;
  Tensor total;
  std::vector<TransportPlan> plans;
};
BatchForward batch_forward(const EncoderInputs& in, const Model& model,
                           const std::vector<Pair>& batch, int offset, const TrainConfig& cfg,
                           const std::vector<TransportPlan>* frozen = nullptr);

// Mini-batch gradient training with optional probation pseudo-labeling over
// the second half of the epochs. Deterministic in cfg.seed. Throws
// NumericError with a diagnostic prefix when the loss leaves the finite
// range.
TrainResult train(const KgPair& kgs, const TrainConfig& cfg);

// (i, j) is kept iff each is the other's cosine nearest neighbour among the
// rows not covered by `excluded` (i over emb1 rows, j over emb2 rows); ties
// resolve to the lowest index.
std::vector<Pair> mutual_nn_pairs(const Tensor& emb1, const Tensor& emb2,
                                  const std::vector<Pair>& excluded);

// Versioned checkpoint container: magic "MIMR1", a config hash, then named
// little-endian f64 blobs covering every parameter plus ot_proj.
void save_checkpoint(const std::string& path, const Model& model, std::uint64_t config_hash);

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::map<std::string, Tensor> blobs;
};
Checkpoint load_checkpoint(const std::string& path);

// Writes blobs into an initialized model; DataError on missing names or
// shape mismatches.
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

// One metric-log line per epoch: a JSON object with a fixed key order and
// shortest round-trip number formatting, so identical runs log identical
// bytes.
std::string metric_log_line(const EpochMetrics& m);

}  // namespace mimea
