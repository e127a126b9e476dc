#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "boxagent/tensor.hpp"

namespace boxagent::numerics {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  AdamConfig hp;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

OptState make_adam_state(std::span<const Tensor> params, const AdamConfig& hp);

// Bias-corrected Adam; params are written in place.
void adam_step(std::span<const Tensor> params, const std::vector<std::vector<double>>& grads, OptState& state);

// Rescales grads so the global L2 norm is at most max_norm; returns the norm
// before clipping. max_norm <= 0 leaves grads untouched.
double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
  // False when two evaluations at the same point disagree.
  bool consistent = true;
};

// Compares backward() against central differences over every entry of params:
// max |analytic - fd| / max(1, |fd|).
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<const Tensor> params, double eps);

}  // namespace boxagent::numerics
