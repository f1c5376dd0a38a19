#pragma once

#include <cstdint>
#include <vector>

#include "hypercut/diffcore/parameters.hpp"

namespace hypercut::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// Zero moments shaped like `params`.
AdamState make_adam_state(const ParameterSet& params, const AdamConfig& config = {});

/// One bias-corrected Adam step over the trainable parameters, reading
/// `Parameter::grad`. Throws std::runtime_error (without touching anything)
/// if any gradient is non-finite or the state does not mirror `params`.
void adam_update(ParameterSet& params, AdamState& state);

}  // namespace hypercut::diff
