#include "mimea/mcl.hpp"

#include <sstream>
#include <stdexcept>

#include "mimea/errors.hpp"
#include "mimea/ops.hpp"

namespace mimea {

namespace {

void validate_batch(const ContrastiveBatch& batch) {
  if (batch.e1.rows() != batch.e2.rows() || batch.e1.cols() != batch.e2.cols()) {
    std::ostringstream msg;
    msg << "modal_loss: shape mismatch, e1 is " << batch.e1.rows() << "x" << batch.e1.cols()
        << " but e2 is " << batch.e2.rows() << "x" << batch.e2.cols();
    throw std::invalid_argument(msg.str());
  }
  if (batch.e1.rows() < 2) {
    throw std::invalid_argument("modal_loss: batch needs at least 2 pairs, got " +
                                std::to_string(batch.e1.rows()));
  }
  if (!(batch.tau > 0.0)) {
    throw std::invalid_argument("modal_loss: tau must be positive, got " +
                                std::to_string(batch.tau));
  }
  if (batch.gamma < 0.0) {
    throw std::invalid_argument("modal_loss: gamma must be nonnegative, got " +
                                std::to_string(batch.gamma));
  }
}

}  // namespace

Tensor modal_loss_dir(const ContrastiveBatch& batch, Direction dir) {
  validate_batch(batch);
  const Tensor& anchor_raw = dir == Direction::kOneToTwo ? batch.e1 : batch.e2;
  const Tensor& other_raw = dir == Direction::kOneToTwo ? batch.e2 : batch.e1;
  Tensor anchor = l2_normalize_rows_safe(anchor_raw);
  Tensor other = l2_normalize_rows_safe(other_raw);
  double inv_tau = 1.0 / batch.tau;
  Tensor cross = scale(matmul(anchor, transpose(other)), inv_tau);
  Tensor inner = scale(matmul(anchor, transpose(anchor)), inv_tau);
  return info_nce_dir(cross, inner, batch.gamma);
}

Tensor modal_loss(const ContrastiveBatch& batch) {
  Tensor forward = modal_loss_dir(batch, Direction::kOneToTwo);
  Tensor backward = modal_loss_dir(batch, Direction::kTwoToOne);
  return scale(add(forward, backward), 0.5);
}

UncertaintyWeights init_uncertainty() {
  UncertaintyWeights u;
  u.s = Tensor::zeros(1, kLossCount);
  return u;
}

Tensor total_loss(const std::array<Tensor, kLossCount>& losses, const UncertaintyWeights& u,
                  const std::array<bool, kLossCount>& active) {
  if (u.s.rows() != 1 || u.s.cols() != kLossCount) {
    throw std::invalid_argument("total_loss: uncertainty weights must be 1x" +
                                std::to_string(kLossCount));
  }
  Tensor total;
  bool has_total = false;
  for (int i = 0; i < kLossCount; ++i) {
    Tensor term;
    if (active[i]) {
      const Tensor& loss = losses[i];
      if (loss.rows() != 1 || loss.cols() != 1) {
        throw std::invalid_argument(std::string("total_loss: loss '") + kLossNames[i] +
                                    "' must be 1x1");
      }
      Tensor s_i = slice_cols(u.s, i, i + 1);
      term = add(mul(exp_t(neg(s_i)), loss), s_i);
    } else {
      term = slice_cols(u.s.detached(), i, i + 1);
    }
    total = has_total ? add(total, term) : term;
    has_total = true;
  }
  return total;
}

std::array<bool, kLossCount> parse_modalities(const std::string& spec) {
  std::array<bool, kLossCount> active{};
  std::stringstream ss(spec);
  std::string token;
  bool any = false;
  while (std::getline(ss, token, ',')) {
    size_t begin = token.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    size_t end = token.find_last_not_of(" \t");
    std::string name = token.substr(begin, end - begin + 1);
    bool found = false;
    for (int i = 0; i < kLossCount; ++i) {
      if (name == kLossNames[i]) {
        active[i] = true;
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("mcl.modalities: unknown modality '" + name + "' (expected s,r,a,v,m)");
    }
    any = true;
  }
  if (!any) {
    throw ConfigError("mcl.modalities: empty modality list");
  }
  return active;
}

std::string to_string(const std::array<bool, kLossCount>& active) {
  std::string out;
  for (int i = 0; i < kLossCount; ++i) {
    if (!active[i]) continue;
    if (!out.empty()) out += ",";
    out += kLossNames[i];
  }
  return out;
}

}  // namespace mimea
