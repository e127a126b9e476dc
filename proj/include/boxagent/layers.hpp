#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "boxagent/ops.hpp"
#include "boxagent/tensor.hpp"

namespace boxagent {

using Rng = std::mt19937_64;

namespace layers {

// y = x W + b with W stored [in, out].
struct Linear {
  numerics::Tensor weight;
  numerics::Tensor bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  numerics::Tensor operator()(const numerics::Tensor& x) const;

  // Xavier-uniform weight, zero bias.
  static Linear create(numerics::ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng);
  // Looks up name.weight / name.bias.
  static Linear bind(const numerics::ParameterSet& params, const std::string& name);
};

// Two linear layers with a ReLU between.
struct Mlp2 {
  Linear first;
  Linear second;

  numerics::Tensor operator()(const numerics::Tensor& x) const;
  static Mlp2 create(numerics::ParameterSet& params, const std::string& name, std::size_t in,
                     std::size_t hidden, std::size_t out, Rng& rng);
  static Mlp2 bind(const numerics::ParameterSet& params, const std::string& name);
};

// Layer normalization followed by a learned per-channel affine map.
struct LayerNorm {
  numerics::Tensor gain;
  numerics::Tensor shift;

  numerics::Tensor operator()(const numerics::Tensor& x) const;
  static LayerNorm create(numerics::ParameterSet& params, const std::string& name, std::size_t dim);
  static LayerNorm bind(const numerics::ParameterSet& params, const std::string& name);
};

}  // namespace layers
}  // namespace boxagent
