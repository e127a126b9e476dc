#pragma once

// Stand-in for a backbone: each token is a linear map of its 3x3 intensity
// patch (zero outside the grid), optionally followed by one self-attention
// layer. Key positions are sinusoidal embeddings of the token centers.

#include <string>

#include "boxagent/bench/scene.hpp"
#include "boxagent/decoder.hpp"

namespace boxagent::bench {

struct EncoderParams {
  layers::Linear patch;  // 9 -> D
  bool has_layer = false;
  layers::Linear q, k, v, o;
  layers::LayerNorm norm;

  static constexpr const char* kPrefix = "encoder.";
};

EncoderParams create_encoder_params(std::size_t model_dim, bool with_layer, Rng& rng, numerics::ParameterSet& params);
EncoderParams bind_encoder_params(const numerics::ParameterSet& params);

// [H*W, 9] patches, row-major tokens, patch entries ordered by (dy, dx).
numerics::Tensor scene_patches(const Scene& scene);
// [H*W, D] key position embeddings.
numerics::Tensor token_positions(std::size_t height, std::size_t width, std::size_t dim, double temperature);

decoder::MemoryTokens encode_scene(const Scene& scene, const EncoderParams& params, std::size_t heads,
                                   double temperature = attention::kDefaultTemperature);

}  // namespace boxagent::bench
