#pragma once

#include <span>
#include <vector>

#include "nap/linalg.hpp"

namespace nap {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one block per parameter block.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long step_count = 0;

  AdamState() = default;
  AdamState(AdamOptions opts, std::span<const std::span<double>> params);
};

/// One bias-corrected ADAM update applied in place. Throws TrainingError carrying the
/// step index if any gradient is non-finite; parameters are untouched in that case.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);

}  // namespace nap
