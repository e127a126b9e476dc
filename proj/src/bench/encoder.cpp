#include "boxagent/bench/encoder.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "boxagent/attention.hpp"
#include "boxagent/ops.hpp"

namespace boxagent::bench {

namespace nx = boxagent::numerics;
using nx::Tensor;

EncoderParams create_encoder_params(std::size_t model_dim, bool with_layer, Rng& rng, nx::ParameterSet& params) {
  const std::string p = EncoderParams::kPrefix;
  EncoderParams e;
  e.patch = layers::Linear::create(params, p + "patch", 9, model_dim, rng);
  e.has_layer = with_layer;
  if (with_layer) {
    e.q = layers::Linear::create(params, p + "q", model_dim, model_dim, rng);
    e.k = layers::Linear::create(params, p + "k", model_dim, model_dim, rng);
    e.v = layers::Linear::create(params, p + "v", model_dim, model_dim, rng);
    e.o = layers::Linear::create(params, p + "o", model_dim, model_dim, rng);
    e.norm = layers::LayerNorm::create(params, p + "norm", model_dim);
  }
  return e;
}

EncoderParams bind_encoder_params(const nx::ParameterSet& params) {
  const std::string p = EncoderParams::kPrefix;
  EncoderParams e;
  e.patch = layers::Linear::bind(params, p + "patch");
  e.has_layer = params.contains(p + "q.weight");
  if (e.has_layer) {
    e.q = layers::Linear::bind(params, p + "q");
    e.k = layers::Linear::bind(params, p + "k");
    e.v = layers::Linear::bind(params, p + "v");
    e.o = layers::Linear::bind(params, p + "o");
    e.norm = layers::LayerNorm::bind(params, p + "norm");
  }
  return e;
}

Tensor scene_patches(const Scene& scene) {
  const std::size_t h = scene.height, w = scene.width;
  if (scene.grid.size() != h * w) throw nx::ShapeError("scene_patches: grid does not match its extent");
  std::vector<double> out(h * w * 9, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double* dst = out.data() + (r * w + c) * 9;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dy;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dx;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
          dst[(dy + 1) * 3 + (dx + 1)] = scene.grid[static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)];
        }
      }
    }
  }
  return Tensor::constant({h * w, 9}, std::move(out));
}

Tensor token_positions(std::size_t height, std::size_t width, std::size_t dim, double temperature) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t, double>, Tensor> cache;
  const auto key = std::make_tuple(height, width, dim, temperature);
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  std::vector<double> pts(height * width * 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      pts[2 * (r * width + c)] = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      pts[2 * (r * width + c) + 1] = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
    }
  }
  Tensor pos = attention::sinusoidal_embed(Tensor::constant({height * width, 2}, std::move(pts)), dim, temperature);
  cache.emplace(key, pos);
  return pos;
}

decoder::MemoryTokens encode_scene(const Scene& scene, const EncoderParams& params, std::size_t heads,
                                   double temperature) {
  const std::size_t d = params.patch.out_features();
  Tensor content = params.patch(scene_patches(scene));
  const Tensor pos = token_positions(scene.height, scene.width, d, temperature);
  if (params.has_layer) {
    if (params.q.in_features() != d) throw nx::ShapeError("encode_scene: encoder layer width mismatch");
    const attention::HeadLayout layout{heads, d};
    const Tensor qk = nx::add(content, pos);
    const Tensor a = params.o(attention::multi_head_attention(params.q(qk), params.k(qk), params.v(content), layout));
    content = params.norm(nx::add(content, a));
  }
  return {content, pos, scene.height, scene.width};
}

}  // namespace boxagent::bench
