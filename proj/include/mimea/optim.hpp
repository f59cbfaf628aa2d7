#pragma once

#include <map>
#include <string>
#include <vector>

#include "mimea/tensor.hpp"

namespace mimea {

enum class OptimKind { kSgd, kAdamW };

OptimKind parse_optim(const std::string& name);
std::string to_string(OptimKind kind);

struct OptimConfig {
  OptimKind kind = OptimKind::kAdamW;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; ignored by SGD
};

// Keeps per-parameter moment state keyed by a stable name. One begin_step()
// per training step advances the shared bias-correction counter.
class Optimizer {
 public:
  explicit Optimizer(const OptimConfig& cfg);

  void begin_step();
  void step(const std::string& name, Tensor& param, const Tensor& grad);

  long steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace mimea
