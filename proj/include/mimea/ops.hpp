#pragma once

#include <vector>

#include "mimea/tensor.hpp"

namespace mimea {

// Differentiable operations over Tensor. Every op computes its value eagerly;
// when an argument carries a tape handle the result is recorded on that tape
// with a pull-back closure. Ops called on detached tensors are plain math.
// Shape and domain violations throw std::invalid_argument /
// std::domain_error with the offending shapes or entries in the message.

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise, same shape ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // rejects zero denominators

// ---- elementwise, unary ----
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);       // domain x > 0
Tensor abs_t(const Tensor& a);       // subgradient 0 at the origin
Tensor softplus_t(const Tensor& a);
Tensor lgamma_t(const Tensor& a);    // domain x > 0, derivative digamma
Tensor digamma_t(const Tensor& a);   // domain x > 0, derivative trigamma
Tensor clamp(const Tensor& a, double lo, double hi);  // pass-through grad inside [lo, hi]

// Broadcasting a 1x1 factor over a full tensor; both arguments get gradient.
Tensor scale_by(const Tensor& a, const Tensor& s);

// ---- row/column broadcasting ----
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // v is 1 x cols
Tensor mul_rowvec(const Tensor& a, const Tensor& v);  // v is 1 x cols
// u is n x 1, v is m x 1; out[i][j] = u[i] + v[j].
Tensor outer_sum(const Tensor& u, const Tensor& v);

// ---- reductions ----
Tensor sum(const Tensor& a);       // 1x1
Tensor mean(const Tensor& a);      // 1x1
Tensor col_mean(const Tensor& a);  // 1 x cols, mean over rows

// ---- shape surgery ----
Tensor slice_cols(const Tensor& a, int c0, int c1);  // half-open [c0, c1)
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);

// ---- softmax family ----
Tensor rowwise_softmax(const Tensor& a);
// Softmax over the entries of each row where mask is nonzero; masked entries
// come out exactly zero. The mask is treated as a constant. A row whose mask
// is all zero is rejected.
Tensor masked_rowwise_softmax(const Tensor& a, const Tensor& mask);

// ---- row normalization ----
Tensor l2_normalize_rows(const Tensor& a);       // zero row is a domain error
Tensor l2_normalize_rows_safe(const Tensor& a);  // zero row stays zero, zero grad

// ---- contrastive reduction ----
// One direction of the matched-pair objective. Both inputs are n x n
// (n >= 2) similarity logits with pairs on the diagonal of `cross`:
//   loss = (1/n) sum_i [ lse_i - cross[i][i] ]
//   lse_i = log( sum_j exp(cross[i][j]) + gamma * sum_{j != i} exp(inner[i][j]) )
// computed with per-row max subtraction.
Tensor info_nce_dir(const Tensor& cross, const Tensor& inner, double gamma);

}  // namespace mimea
