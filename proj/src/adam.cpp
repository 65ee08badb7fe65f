#include "nap/adam.hpp"

#include <cmath>

namespace nap {

AdamState::AdamState(AdamOptions opts, std::span<const std::span<double>> params)
    : options(opts) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.size(), 0.0);
    second_moment.emplace_back(p.size(), 0.0);
  }
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  require_shape(params.size() == grads.size() && params.size() == state.first_moment.size(),
                "adam: parameter/gradient/state block counts differ");
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_shape(params[b].size() == grads[b].size() &&
                      params[b].size() == state.first_moment[b].size(),
                  "adam: block " + std::to_string(b) + " size mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient", state.step_count + 1);
  }

  const auto& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      params[b][i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace nap
