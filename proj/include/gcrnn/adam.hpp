// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcrnn/tensor.hpp"

namespace gcrnn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter tensor.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam_state(std::span<Tensor* const> params, AdamConfig config = {});

/// One bias-corrected Adam update. `names` labels parameters in error messages
/// and may be empty. Throws TrainingError on a non-finite gradient without
/// modifying anything.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state, std::span<const std::string> names = {});

}  // namespace gcrnn
