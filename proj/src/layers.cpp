#include "boxagent/layers.hpp"

#include <cmath>

namespace boxagent::layers {

namespace nx = boxagent::numerics;
using nx::Tensor;

Tensor Linear::operator()(const Tensor& x) const { return nx::add(nx::matmul(x, weight), bias); }

Linear Linear::create(nx::ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = dist(rng);
  Linear l;
  l.weight = params.add(name + ".weight", {in, out}, std::move(w));
  l.bias = params.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return l;
}

Linear Linear::bind(const nx::ParameterSet& params, const std::string& name) {
  return {params.get(name + ".weight"), params.get(name + ".bias")};
}

Tensor Mlp2::operator()(const Tensor& x) const { return second(nx::relu(first(x))); }

Mlp2 Mlp2::create(nx::ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out, Rng& rng) {
  Mlp2 m;
  m.first = Linear::create(params, name + ".0", in, hidden, rng);
  m.second = Linear::create(params, name + ".1", hidden, out, rng);
  return m;
}

Mlp2 Mlp2::bind(const nx::ParameterSet& params, const std::string& name) {
  return {Linear::bind(params, name + ".0"), Linear::bind(params, name + ".1")};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return nx::add(nx::mul(nx::layer_norm(x), gain), shift); }

LayerNorm LayerNorm::create(nx::ParameterSet& params, const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gain = params.add(name + ".gain", {dim}, std::vector<double>(dim, 1.0));
  ln.shift = params.add(name + ".shift", {dim}, std::vector<double>(dim, 0.0));
  return ln;
}

LayerNorm LayerNorm::bind(const nx::ParameterSet& params, const std::string& name) {
  return {params.get(name + ".gain"), params.get(name + ".shift")};
}

}  // namespace boxagent::layers
