#include "mimea/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "mimea/errors.hpp"

namespace mimea {

OptimKind parse_optim(const std::string& name) {
  if (name == "sgd") return OptimKind::kSgd;
  if (name == "adamw") return OptimKind::kAdamW;
  throw ConfigError("optimizer: expected sgd or adamw, got '" + name + "'");
}

std::string to_string(OptimKind kind) {
  return kind == OptimKind::kSgd ? "sgd" : "adamw";
}

Optimizer::Optimizer(const OptimConfig& cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("optimizer: eps must be positive");
  if (cfg.weight_decay < 0.0) throw std::invalid_argument("optimizer: negative weight decay");
}

void Optimizer::begin_step() { ++t_; }

void Optimizer::step(const std::string& name, Tensor& param, const Tensor& grad) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw std::invalid_argument("optimizer: gradient shape " + grad.shape_str() +
                                " does not match parameter '" + name + "' " + param.shape_str());
  }
  std::vector<double>& p = param.values();
  const std::vector<double>& g = grad.values();

  if (cfg_.kind == OptimKind::kSgd) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg_.lr * g[i];
    return;
  }

  if (t_ == 0) throw std::logic_error("optimizer: step() before begin_step()");
  Moments& mo = state_[name];
  if (mo.m.empty()) {
    mo.m.assign(p.size(), 0.0);
    mo.v.assign(p.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
    mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g[i];
    mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
    const double mhat = mo.m[i] / bc1;
    const double vhat = mo.v[i] / bc2;
    p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace mimea
