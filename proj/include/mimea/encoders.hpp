#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mimea/data.hpp"
#include "mimea/rng.hpp"
#include "mimea/tensor.hpp"

namespace mimea {

// One multi-head graph attention layer with diagonal weight matrices. The
// attention vector is split into source and destination halves so logits
// factor as a_src . (W h_i) + a_dst . (W h_j).
struct GatLayer {
  int d = 0;
  int heads = 0;
  std::vector<Tensor> w_diag;  // per head, 1 x d
  std::vector<Tensor> a_src;   // per head, d x 1
  std::vector<Tensor> a_dst;   // per head, d x 1
};

// One-hidden-layer perceptron: in -> d (ReLU) -> d.
struct Mlp {
  Tensor w1, b1, w2, b2;
};

struct ModalEncoderSet {
  int d = 0;
  GatLayer gat1, gat2;
  Mlp mlp_r, mlp_a, mlp_v;
  Tensor entity_init;  // n x d free embedding table
};

// Constant forward-pass inputs derived from a KG once per run.
struct EncoderInputs {
  Tensor adjacency;   // n x n 0/1 mask with self-loops
  Tensor rel_bow;     // n x max(1, relation_vocab)
  Tensor attr_bow;    // n x max(1, attribute_vocab)
  Tensor visual;      // n x max(1, d_v)
  Tensor image_mask;  // n x 1, 1 where the entity has an image
};

struct ModalEmbeddings {
  Tensor s, r, a, v;  // each n x d
};

// Undirected relational edges plus self-loops; with attr_edges, entities
// sharing an attribute type are also connected.
Tensor build_adjacency(const MultiModalKG& kg, bool attr_edges);

EncoderInputs make_encoder_inputs(const MultiModalKG& kg, bool attr_edges);

GatLayer init_gat_layer(int d, int heads, Rng& rng);
Mlp init_mlp(int in_dim, int d, Rng& rng);
ModalEncoderSet init_encoders(int n, int d, int heads, int rel_in, int attr_in, int d_v,
                              Rng& rng);

// Multi-head attention aggregation. When attn_out is given it receives one
// detached n x n attention matrix per head.
Tensor gat_forward(const GatLayer& layer, const Tensor& h, const Tensor& adjacency,
                   std::vector<Tensor>* attn_out = nullptr);

Tensor mlp_forward(const Mlp& mlp, const Tensor& x);

// Full per-KG forward pass: H^s through both GAT layers, H^r/H^a from bow,
// H^v from visual features with missing-image rows forced to zero.
ModalEmbeddings encode_all(const EncoderInputs& in, const ModalEncoderSet& enc);

// Visits every learnable tensor with a stable dotted name.
void for_each_param(ModalEncoderSet& enc,
                    const std::function<void(const std::string&, Tensor&)>& fn);

}  // namespace mimea
