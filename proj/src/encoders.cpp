#include "mimea/encoders.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mimea/ops.hpp"

namespace mimea {

namespace {

constexpr double kAttnLeakySlope = 0.2;

Tensor glorot(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Tensor t(rows, cols);
  for (double& x : t.values()) x = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

Tensor build_adjacency(const MultiModalKG& kg, bool attr_edges) {
  Tensor adj(kg.n, kg.n);
  for (int i = 0; i < kg.n; ++i) adj.at(i, i) = 1.0;
  for (const auto& t : kg.relational_triples) {
    adj.at(t[0], t[2]) = 1.0;
    adj.at(t[2], t[0]) = 1.0;
  }
  if (attr_edges && kg.attribute_vocab > 0) {
    // Entities sharing an attribute type become neighbors.
    for (int a = 0; a < kg.attribute_vocab; ++a) {
      std::vector<int> members;
      for (int i = 0; i < kg.n; ++i) {
        if (kg.attribute_bow[static_cast<std::size_t>(i) * kg.attribute_vocab + a]) {
          members.push_back(i);
        }
      }
      for (std::size_t p = 0; p < members.size(); ++p) {
        for (std::size_t q = p + 1; q < members.size(); ++q) {
          adj.at(members[p], members[q]) = 1.0;
          adj.at(members[q], members[p]) = 1.0;
        }
      }
    }
  }
  return adj;
}

EncoderInputs make_encoder_inputs(const MultiModalKG& kg, bool attr_edges) {
  EncoderInputs in;
  in.adjacency = build_adjacency(kg, attr_edges);
  in.rel_bow = kg.relation_bow_tensor();
  in.attr_bow = kg.attribute_bow_tensor();
  in.visual = kg.visual_tensor();
  in.image_mask = Tensor(kg.n, 1);
  for (int i = 0; i < kg.n; ++i) in.image_mask.at(i, 0) = kg.has_image[i] ? 1.0 : 0.0;
  return in;
}

GatLayer init_gat_layer(int d, int heads, Rng& rng) {
  if (heads < 1 || d % heads != 0) {
    std::ostringstream os;
    os << "gat layer: head count " << heads << " must divide d=" << d;
    throw std::invalid_argument(os.str());
  }
  GatLayer layer;
  layer.d = d;
  layer.heads = heads;
  for (int k = 0; k < heads; ++k) {
    // Diagonal weights start near the identity to preserve input scale.
    Tensor w(1, d);
    for (double& x : w.values()) x = rng.uniform(0.9, 1.1);
    layer.w_diag.push_back(std::move(w));
    layer.a_src.push_back(glorot(d, 1, rng));
    layer.a_dst.push_back(glorot(d, 1, rng));
  }
  return layer;
}

Mlp init_mlp(int in_dim, int d, Rng& rng) {
  Mlp mlp;
  mlp.w1 = glorot(in_dim, d, rng);
  mlp.b1 = Tensor(1, d);
  mlp.w2 = glorot(d, d, rng);
  mlp.b2 = Tensor(1, d);
  return mlp;
}

ModalEncoderSet init_encoders(int n, int d, int heads, int rel_in, int attr_in, int d_v,
                              Rng& rng) {
  ModalEncoderSet enc;
  enc.d = d;
  enc.gat1 = init_gat_layer(d, heads, rng);
  enc.gat2 = init_gat_layer(d, heads, rng);
  enc.mlp_r = init_mlp(std::max(1, rel_in), d, rng);
  enc.mlp_a = init_mlp(std::max(1, attr_in), d, rng);
  enc.mlp_v = init_mlp(std::max(1, d_v), d, rng);
  enc.entity_init = glorot(n, d, rng);
  return enc;
}

Tensor gat_forward(const GatLayer& layer, const Tensor& h, const Tensor& adjacency,
                   std::vector<Tensor>* attn_out) {
  if (h.cols() != layer.d) {
    std::ostringstream os;
    os << "gat_forward: input width " << h.cols() << " does not match layer d=" << layer.d;
    throw std::invalid_argument(os.str());
  }
  if (adjacency.rows() != h.rows() || adjacency.cols() != h.rows()) {
    std::ostringstream os;
    os << "gat_forward: adjacency " << adjacency.shape_str() << " does not match n=" << h.rows();
    throw std::invalid_argument(os.str());
  }
  const int d_h = layer.d / layer.heads;
  std::vector<Tensor> head_outs;
  head_outs.reserve(layer.heads);
  for (int k = 0; k < layer.heads; ++k) {
    Tensor t = mul_rowvec(h, layer.w_diag[k]);
    Tensor s_src = matmul(t, layer.a_src[k]);  // n x 1
    Tensor s_dst = matmul(t, layer.a_dst[k]);  // n x 1
    Tensor logits = leaky_relu(outer_sum(s_src, s_dst), kAttnLeakySlope);
    Tensor attn = masked_rowwise_softmax(logits, adjacency);
    if (attn_out != nullptr) attn_out->push_back(attn.detached());
    Tensor agg = matmul(attn, t);
    head_outs.push_back(relu(slice_cols(agg, k * d_h, (k + 1) * d_h)));
  }
  return concat_cols(head_outs);
}

Tensor mlp_forward(const Mlp& mlp, const Tensor& x) {
  if (x.cols() != mlp.w1.rows()) {
    std::ostringstream os;
    os << "mlp_forward: input width " << x.cols() << " does not match weight "
       << mlp.w1.shape_str();
    throw std::invalid_argument(os.str());
  }
  Tensor hidden = relu(add_rowvec(matmul(x, mlp.w1), mlp.b1));
  return add_rowvec(matmul(hidden, mlp.w2), mlp.b2);
}

ModalEmbeddings encode_all(const EncoderInputs& in, const ModalEncoderSet& enc) {
  if (in.rel_bow.rows() != enc.entity_init.rows()) {
    std::ostringstream os;
    os << "encode_all: kg has " << in.rel_bow.rows() << " entities but entity_init is "
       << enc.entity_init.shape_str();
    throw std::invalid_argument(os.str());
  }
  ModalEmbeddings out;
  out.s = gat_forward(enc.gat2, gat_forward(enc.gat1, enc.entity_init, in.adjacency),
                      in.adjacency);
  out.r = mlp_forward(enc.mlp_r, in.rel_bow);
  out.a = mlp_forward(enc.mlp_a, in.attr_bow);
  // Rows without an image are forced to zero; the mask is constant so those
  // rows also receive no gradient.
  Tensor mask(in.visual.rows(), enc.d);
  for (int i = 0; i < mask.rows(); ++i) {
    const double flag = in.image_mask.at(i, 0);
    for (int j = 0; j < enc.d; ++j) mask.at(i, j) = flag;
  }
  out.v = mul(mlp_forward(enc.mlp_v, in.visual), mask);
  return out;
}

namespace {

void visit_gat(GatLayer& layer, const std::string& prefix,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  for (int k = 0; k < layer.heads; ++k) {
    const std::string head = prefix + ".h" + std::to_string(k);
    fn(head + ".w", layer.w_diag[k]);
    fn(head + ".a_src", layer.a_src[k]);
    fn(head + ".a_dst", layer.a_dst[k]);
  }
}

void visit_mlp(Mlp& mlp, const std::string& prefix,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".w1", mlp.w1);
  fn(prefix + ".b1", mlp.b1);
  fn(prefix + ".w2", mlp.w2);
  fn(prefix + ".b2", mlp.b2);
}

}  // namespace

void for_each_param(ModalEncoderSet& enc,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("entity_init", enc.entity_init);
  visit_gat(enc.gat1, "gat1", fn);
  visit_gat(enc.gat2, "gat2", fn);
  visit_mlp(enc.mlp_r, "mlp_r", fn);
  visit_mlp(enc.mlp_a, "mlp_a", fn);
  visit_mlp(enc.mlp_v, "mlp_v", fn);
}

}  // namespace mimea
