#pragma once

#include <string>

#include "mimea/encoders.hpp"
#include "mimea/tensor.hpp"

namespace mimea {

// Entropic optimal transport between uni-modal and joint-modal sample
// distributions. Marginals are always uniform over rows. Plans are computed
// outside the tape and act as constants in backward; only translate's
// embedding argument carries gradient.

struct TransportProblem {
  Tensor cost;     // n_r x n_m, entries in [0,2]
  double epsilon;  // entropic regularization > 0
};

struct TransportPlan {
  Tensor t;  // n_r x n_m nonnegative, detached
  int iterations_used = 0;
  double marginal_error = 0.0;
  bool converged = false;
};

// C_ij = 1 - cos(x_i, y_j), clamped into [0,2] against roundoff. Always
// detached. A zero-norm row raises a domain error naming the row.
Tensor cosine_cost(const Tensor& x, const Tensor& y);

// Log-domain Sinkhorn on K = exp(-C/eps) with uniform marginals. Stops when
// the max marginal violation drops below tol or the iteration cap is hit;
// a capped run returns the best plan with converged = false.
TransportPlan sinkhorn(const TransportProblem& prob, int max_iters, double tol);

// Barycentric projection P = n_m * T^T * H_uni; each output row is a convex
// combination of source rows. Gradient flows through h_uni only.
Tensor translate(const Tensor& h_uni, const TransportPlan& plan);

enum class OtConsume { kReplace, kAverage, kOff };
OtConsume parse_consume(const std::string& name);
std::string to_string(OtConsume c);

struct OtmaConfig {
  double epsilon = 0.05;
  int max_iters = 500;
  double tol = 1e-6;
  OtConsume consume = OtConsume::kReplace;
};

struct OtmaResult {
  Tensor p_r, p_a, p_v;  // each n x d
  TransportPlan plan_r, plan_a, plan_v;
};

// cost -> sinkhorn -> translate for relation, attribute, and visual against
// the fused embedding; the structural modality is not aligned. proj is the
// fixed 4d -> d bridge applied to h_m before cost computation.
OtmaResult otma_all(const ModalEmbeddings& embeds, const Tensor& h_m, const Tensor& proj,
                    const OtmaConfig& cfg);

}  // namespace mimea
