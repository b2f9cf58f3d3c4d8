// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/adam.hpp"

#include <cmath>

#include "gcrnn/errors.hpp"

namespace gcrnn {

AdamState make_adam_state(std::span<Tensor* const> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const Tensor* p : params) {
    state.m.push_back(Tensor::zeros(p->shape()));
    state.v.push_back(Tensor::zeros(p->shape()));
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state, std::span<const std::string> names) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " +
                         std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() || state.m[i].shape() != params[i]->shape()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           shape_string(params[i]->shape()) + ", gradient " +
                           shape_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) {
      const std::string label = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw TrainingError("adam_step: non-finite gradient for parameter " + label);
    }
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace gcrnn
