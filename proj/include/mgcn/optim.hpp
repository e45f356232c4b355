#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {

// SGD with momentum and L2 weight decay:
//   v <- mu * v + g + wd * theta
//   theta <- theta - lr * v
struct SgdState {
  Real learning_rate = 0.01;
  Real momentum = 0.0;
  Real weight_decay = 0.0;
  std::vector<std::vector<Real>> velocity;  // one buffer per parameter tensor
};

inline void sgd_step(SgdState& state, const std::vector<Tensor*>& params,
                     const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeMismatch("sgd_step: params vs grads count");
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      state.velocity[i].assign(params[i]->data.size(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw ShapeMismatch("sgd_step: velocity count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    std::vector<Real>& v = state.velocity[i];
    if (p.data.size() != g.data.size() || p.data.size() != v.size())
      throw ShapeMismatch("sgd_step: parameter " + std::to_string(i) + " shape mismatch");
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = state.momentum * v[j] + g.data[j] + state.weight_decay * p.data[j];
      p.data[j] -= state.learning_rate * v[j];
    }
  }
}

inline Real lr_schedule(Index epoch, Real base, Real decay) {
  if (epoch < 0) throw ConfigMismatch("epoch must be >= 0");
  return base * std::pow(decay, static_cast<Real>(epoch));
}

}  // namespace mgcn
