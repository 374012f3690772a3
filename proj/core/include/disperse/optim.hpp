#pragma once

#include <cstdint>
#include <vector>

#include "disperse/tensor.hpp"

namespace disperse::model {

/// SGD with momentum and decoupled-from-nothing classic weight decay:
///   v <- momentum * v + (g + weight_decay * theta)
///   theta <- theta - lr * v
/// An optional per-parameter mask restricts which entries move (SalUn-style
/// selective updates); masked-out entries stay bit-identical.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay);

  void set_mask(std::vector<std::vector<std::uint8_t>> mask);

  void step(std::vector<ad::Tensor>& params, double lr);
  void zero_grad(std::vector<ad::Tensor>& params);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
  std::vector<std::vector<std::uint8_t>> mask_;
};

}  // namespace disperse::model
