#pragma once

#include <array>
#include <string>

#include "mimea/encoders.hpp"
#include "mimea/tensor.hpp"

namespace mimea {

enum class Distribution { kBeta, kCauchy, kGamma, kGumbel, kLaplace };
enum class KlAgg { kMeanClamped, kRawSum };
enum class Pivot { kStructural, kRelation, kAttribute, kVisual };

Distribution parse_distribution(const std::string& name);
KlAgg parse_kl_agg(const std::string& name);
Pivot parse_pivot(const std::string& name);
std::string to_string(Distribution d);
std::string to_string(Pivot p);
std::string to_string(KlAgg agg);

// Per-dimension distribution parameters from the two halves of an
// embedding. For Beta and Gamma both halves pass through softplus + 1e-4;
// for the location-scale families (Cauchy, Gumbel, Laplace) the first half
// is the raw location and only the scale half is mapped to positives.
struct DistParams {
  Tensor a;  // n x d/2: alpha or location
  Tensor b;  // n x d/2: beta, rate, or scale
};

DistParams to_dist_params(const Tensor& h, Distribution dist);
DistParams to_beta(const Tensor& h);

// Closed-form KL(p || q) for one dimension, scalar path.
double kl_scalar(Distribution dist, double a1, double b1, double a2, double b2);
double beta_kl(double alpha1, double beta1, double alpha2, double beta2);

// Elementwise KL(p || q) over n x m parameter matrices, composed from tape
// ops so it differentiates when the inputs are on a tape.
Tensor kl_elementwise(Distribution dist, const DistParams& p, const DistParams& q);

// w = lambda * (2 - delta)^2
double modal_weight(double delta, double lambda);

struct PmfConfig {
  double lambda = 0.1;
  Distribution distribution = Distribution::kBeta;
  Pivot pivot = Pivot::kStructural;
  bool detach_weights = true;
  KlAgg kl_agg = KlAgg::kMeanClamped;
  // Ablation mask in [s, r, a, v] order. An inactive modality contributes a
  // zero block to h_m and is skipped by the weighting; if the pivot itself is
  // inactive the first active modality in s,r,a,v order takes its place.
  std::array<bool, 4> active{true, true, true, true};
};

struct FusionWeights {
  // Raw weights of the non-pivot modalities, in s,r,a,v order with the
  // pivot skipped (structural pivot: w_rs, w_as, w_vs); ablated slots are 0.
  std::array<double, 3> raw{};
  // Final coefficients in [s, r, a, v] order: pivot fixed at 1.0, active
  // non-pivot modalities softmax shares summing to 1, ablated ones 0.
  std::array<double, 4> coeffs{};
  Pivot pivot = Pivot::kStructural;  // effective pivot after any fallback
};

struct FuseResult {
  Tensor h_m;  // n x 4d weighted concatenation in [s, r, a, v] order
  FusionWeights weights;
};

FuseResult fuse(const ModalEmbeddings& embeds, const PmfConfig& cfg);

}  // namespace mimea
