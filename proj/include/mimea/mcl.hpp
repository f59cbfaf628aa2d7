#pragma once

#include <array>
#include <string>

#include "mimea/tensor.hpp"

namespace mimea {

// Modal-adaptive contrastive learning: bidirectional in-batch InfoNCE per
// modality plus homoscedastic-uncertainty weighting across modalities.

// One modality's aligned batch: row i of e1 and row i of e2 are a positive
// pair, everything else in the batch is a negative. Rows are L2-normalized
// at use (zero rows stay zero and score 0 against everything).
struct ContrastiveBatch {
  Tensor e1;  // n x d, graph-1 entities
  Tensor e2;  // n x d, graph-2 counterparts
  double tau = 0.1;
  double gamma = 0.8;
};

enum class Direction { kOneToTwo, kTwoToOne };

// Mean over anchors of -log[theta_pos / (theta_pos + gamma * sum_inner +
// sum_cross)] with theta(x, y) = exp(cos(x, y) / tau); negatives exclude the
// anchor index on both graphs.
Tensor modal_loss_dir(const ContrastiveBatch& batch, Direction dir);

// Average of both directions.
Tensor modal_loss(const ContrastiveBatch& batch);

// Loss index order: structural, relation, attribute, visual, fused.
inline constexpr int kLossCount = 5;
inline constexpr std::array<const char*, kLossCount> kLossNames = {"s", "r", "a", "v", "m"};

// Learnable log-variance scalars, one per loss term.
struct UncertaintyWeights {
  Tensor s;  // 1 x 5
};

UncertaintyWeights init_uncertainty();

// total = sum over active l of [exp(-s_l) * L_l + s_l]; an inactive slot
// contributes its s_l as a constant (frozen) and ignores its loss.
Tensor total_loss(const std::array<Tensor, kLossCount>& losses, const UncertaintyWeights& u,
                  const std::array<bool, kLossCount>& active);

// Comma-separated subset of {s,r,a,v,m}, e.g. "s,r,a,v,m" or "s,m".
std::array<bool, kLossCount> parse_modalities(const std::string& spec);
std::string to_string(const std::array<bool, kLossCount>& active);

}  // namespace mimea
