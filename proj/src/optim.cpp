#include "boxagent/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace boxagent::numerics {

OptState make_adam_state(std::span<const Tensor> params, const AdamConfig& hp) {
  OptState s;
  s.hp = hp;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, const std::vector<std::vector<double>>& grads, OptState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                       " entries, parameter has " + std::to_string(params[i].size()));
    }
  }
  ++state.step;
  const auto& hp = state.hp;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
      v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<const Tensor> params, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_difference_check: eps must be > 0");
  GradCheckResult res;

  const Tensor loss = loss_fn();
  const Gradients grads = backward(loss);
  double again;
  {
    NoGradGuard ng;
    again = loss_fn().item();
  }
  if (again != loss.item()) {
    res.consistent = false;
    res.max_rel_error = std::numeric_limits<double>::infinity();
    return res;
  }

  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    const auto analytic = grads.of(p);
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + eps;
      const double up = loss_fn().item();
      w[j] = saved - eps;
      const double down = loss_fn().item();
      w[j] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double err = std::fabs(analytic[j] - fd) / std::max(1.0, std::fabs(fd));
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_index = j;
      }
      ++res.entries;
    }
  }
  return res;
}

}  // namespace boxagent::numerics
