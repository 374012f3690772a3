#include "disperse/optim.hpp"

#include <stdexcept>

namespace disperse::model {

SgdOptimizer::SgdOptimizer(double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {}

void SgdOptimizer::set_mask(std::vector<std::vector<std::uint8_t>> mask) {
  mask_ = std::move(mask);
}

void SgdOptimizer::step(std::vector<ad::Tensor>& params, double lr) {
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      velocity_[i].assign(params[i].size(), 0.0);
  }
  if (velocity_.size() != params.size())
    throw std::invalid_argument("SgdOptimizer: parameter list changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value_mut();
    const auto g = params[i].grad();
    auto& v = velocity_[i];
    const std::uint8_t* m = mask_.empty() ? nullptr : mask_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (m && !m[j]) continue;
      v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * theta[j]);
      theta[j] -= lr * v[j];
    }
  }
}

void SgdOptimizer::zero_grad(std::vector<ad::Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace disperse::model
