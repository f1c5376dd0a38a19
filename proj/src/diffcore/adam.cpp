#include "hypercut/diffcore/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace hypercut::diff {

AdamState make_adam_state(const ParameterSet& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first_moment.emplace_back(params[i].value.shape());
    state.second_moment.emplace_back(params[i].value.shape());
  }
  return state;
}

void adam_update(ParameterSet& params, AdamState& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw std::runtime_error("adam state does not match parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (state.first_moment[i].shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw std::runtime_error("adam: shape mismatch for parameter " + p.name);
    }
    if (p.trainable && !p.grad.all_finite()) {
      throw std::runtime_error("adam: non-finite gradient in parameter " + p.name);
    }
  }

  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double step = c.learning_rate * (mj / correction1) / (std::sqrt(vj / correction2) + c.epsilon);
      p.value[j] = static_cast<float>(p.value[j] - step);
    }
  }
}

}  // namespace hypercut::diff
