#pragma once

// Stagewise anchor-box decoder: self-attention over queries, conditional
// cross-attention against memory with the configured reference mode, an FFN,
// and a box head that refines the anchor logits at every stage.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxagent/attention.hpp"
#include "boxagent/box_agent.hpp"
#include "boxagent/layers.hpp"
#include "boxagent/tensor.hpp"

namespace boxagent::decoder {

struct DecoderConfig {
  std::size_t stages = 3;
  std::size_t queries = 16;
  std::size_t model_dim = 64;
  std::size_t heads = 8;
  std::size_t classes = 3;
  std::size_t ffn_hidden = 128;
  box_agent::RefMode mode = box_agent::RefMode::agent_unnormalized;
  attention::WhmMode whm = attention::WhmMode::off;
  double temperature = attention::kDefaultTemperature;
  // Stop-gradient on incoming anchor logits at stages after the first.
  bool detach_boxes = true;
  // One lambda per query shared by all heads, or one per head.
  bool shared_lambda = true;

  void validate() const;
  // center+whm implies the original modulation when none is set.
  attention::WhmMode effective_whm() const;
  attention::HeadLayout layout() const { return {heads, model_dim}; }
};

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j, DecoderConfig base = {});

// Key/value memory the decoder attends to.
struct MemoryTokens {
  numerics::Tensor content;  // [H*W, D]
  numerics::Tensor key_pos;  // [H*W, D], sinusoidal embeddings of token centers
  std::size_t height = 0;
  std::size_t width = 0;
};

struct DecoderState {
  numerics::Tensor logits;      // [N,4]; sigmoid gives (cx, cy, w, h)
  numerics::Tensor embeddings;  // [N,D]
  std::size_t stage = 0;
};

struct StageParams {
  layers::Linear sa_q, sa_k, sa_v, sa_o;
  layers::LayerNorm norm1;
  layers::Linear ca_q, ca_k, ca_v, ca_o;
  layers::LayerNorm norm2;
  layers::Mlp2 ffn;
  layers::LayerNorm norm3;
  layers::Mlp2 lambda;
  layers::Linear walker;
  layers::Linear whm_ref;
};

struct DecoderParams {
  numerics::Tensor anchors;  // [N,4] logits
  std::vector<StageParams> stages;
  layers::Mlp2 box_head;      // shared across stages
  layers::Linear class_head;  // shared; C classes plus no-object

  // Parameter names use this prefix, e.g. "decoder.stage0.walker.weight".
  static constexpr const char* kPrefix = "decoder.";
  static std::string walker_prefix(std::size_t stage);
};

// Creates anchors (inverse sigmoid of U(0.05, 0.95)) and zero content
// embeddings; returns the initial state.
DecoderState init_queries(const DecoderConfig& config, Rng& rng, numerics::ParameterSet& params);

// init_queries followed by every stage and head; all parameters exist in every
// mode so that a seed gives the same initial weights regardless of mode.
DecoderParams create_decoder_params(const DecoderConfig& config, Rng& rng, numerics::ParameterSet& params);
DecoderParams bind_decoder_params(const DecoderConfig& config, const numerics::ParameterSet& params);

DecoderState initial_state(const DecoderConfig& config, const DecoderParams& params);

struct StagePrediction {
  numerics::Tensor boxes;         // [N,4] in (0,1)
  numerics::Tensor class_logits;  // [N,C+1], last column is no-object
};

struct StageTrace {
  std::size_t stage = 0;
  std::vector<geometry::BoxCCWH> previous_boxes;  // per query
  std::vector<geometry::BoxCCWH> current_boxes;
  // [query][head]
  std::vector<std::vector<box_agent::Point>> agent_points;
  // [head] -> N x K row-major
  std::vector<std::vector<double>> attention;
  std::vector<std::vector<double>> spatial_attention;
  std::vector<std::vector<double>> class_scores;  // softmax per query
  std::vector<double> walker;                     // N x 2n raw z, empty when unused
};

struct StageResult {
  DecoderState state;
  StagePrediction prediction;
  std::optional<StageTrace> trace;
};

StageResult decoder_stage(const DecoderState& state, const MemoryTokens& memory, const DecoderParams& params,
                          const DecoderConfig& config, bool want_trace = false);

struct ForwardResult {
  std::vector<StagePrediction> stages;
  std::vector<StageTrace> traces;  // empty unless requested
};

ForwardResult forward(const MemoryTokens& memory, const DecoderConfig& config, const DecoderParams& params,
                      bool want_trace = false);

}  // namespace boxagent::decoder
