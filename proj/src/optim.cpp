#include "sfm/optim.hpp"

#include <cmath>

#include "sfm/core.hpp"

namespace sfm {

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
}

void Adam::step(std::size_t slot, std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw ShapeError("Adam: parameter and gradient sizes differ");
  if (slot >= slots_.size()) slots_.resize(slot + 1);
  Slot& s = slots_[slot];
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
    s.t = 0;
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.m[k] = beta1_ * s.m[k] + (1.0 - beta1_) * grad[k];
    s.v[k] = beta2_ * s.v[k] + (1.0 - beta2_) * grad[k] * grad[k];
    params[k] -= lr_ * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + eps_);
  }
}

}  // namespace sfm
