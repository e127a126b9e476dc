#include "boxagent/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "boxagent/ops.hpp"

namespace boxagent::decoder {

namespace nx = boxagent::numerics;
using nx::Tensor;
using box_agent::RefMode;
using attention::WhmMode;

void DecoderConfig::validate() const {
  if (stages == 0) throw std::invalid_argument("decoder config: stages must be >= 1");
  if (queries == 0) throw std::invalid_argument("decoder config: queries must be >= 1");
  if (classes == 0) throw std::invalid_argument("decoder config: classes must be >= 1");
  if (model_dim % 4 != 0) throw std::invalid_argument("decoder config: model_dim must be a multiple of 4");
  layout().validate();
  if (!(temperature > 0)) throw std::invalid_argument("decoder config: temperature must be > 0");
  if (ffn_hidden == 0) throw std::invalid_argument("decoder config: ffn_hidden must be >= 1");
}

WhmMode DecoderConfig::effective_whm() const {
  if (mode == RefMode::center_whm && whm == WhmMode::off) return WhmMode::original;
  return whm;
}

nlohmann::json to_json(const DecoderConfig& c) {
  return {{"stages", c.stages},
          {"queries", c.queries},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"classes", c.classes},
          {"ffn_hidden", c.ffn_hidden},
          {"mode", box_agent::to_string(c.mode)},
          {"whm", attention::to_string(c.whm)},
          {"temperature", c.temperature},
          {"detach_boxes", c.detach_boxes},
          {"shared_lambda", c.shared_lambda}};
}

DecoderConfig decoder_config_from_json(const nlohmann::json& j, DecoderConfig c) {
  c.stages = j.value("stages", c.stages);
  c.queries = j.value("queries", c.queries);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.heads = j.value("heads", c.heads);
  c.classes = j.value("classes", c.classes);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  if (j.contains("mode")) c.mode = box_agent::parse_ref_mode(j.at("mode").get<std::string>());
  if (j.contains("whm")) c.whm = attention::parse_whm_mode(j.at("whm").get<std::string>());
  c.temperature = j.value("temperature", c.temperature);
  c.detach_boxes = j.value("detach_boxes", c.detach_boxes);
  c.shared_lambda = j.value("shared_lambda", c.shared_lambda);
  return c;
}

std::string DecoderParams::walker_prefix(std::size_t stage) {
  return std::string(kPrefix) + "stage" + std::to_string(stage) + ".walker.";
}

DecoderState init_queries(const DecoderConfig& config, Rng& rng, nx::ParameterSet& params) {
  config.validate();
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::vector<double> logits(config.queries * 4);
  for (auto& v : logits) {
    // Resample the measure-zero endpoint so sigmoid stays strictly inside.
    double p = unit(rng);
    while (p <= 0.05) p = unit(rng);
    v = std::log(p / (1.0 - p));
  }
  DecoderState s;
  s.logits = params.add(std::string(DecoderParams::kPrefix) + "anchors", {config.queries, 4}, std::move(logits));
  s.embeddings = Tensor::zeros({config.queries, config.model_dim});
  return s;
}

DecoderParams create_decoder_params(const DecoderConfig& config, Rng& rng, nx::ParameterSet& params) {
  const DecoderState init = init_queries(config, rng, params);
  const std::size_t d = config.model_dim;
  const std::string p = DecoderParams::kPrefix;
  DecoderParams dp;
  dp.anchors = init.logits;
  for (std::size_t s = 0; s < config.stages; ++s) {
    const std::string sp = p + "stage" + std::to_string(s) + ".";
    StageParams st;
    st.sa_q = layers::Linear::create(params, sp + "sa_q", d, d, rng);
    st.sa_k = layers::Linear::create(params, sp + "sa_k", d, d, rng);
    st.sa_v = layers::Linear::create(params, sp + "sa_v", d, d, rng);
    st.sa_o = layers::Linear::create(params, sp + "sa_o", d, d, rng);
    st.norm1 = layers::LayerNorm::create(params, sp + "norm1", d);
    st.ca_q = layers::Linear::create(params, sp + "ca_q", d, d, rng);
    st.ca_k = layers::Linear::create(params, sp + "ca_k", d, d, rng);
    st.ca_v = layers::Linear::create(params, sp + "ca_v", d, d, rng);
    st.ca_o = layers::Linear::create(params, sp + "ca_o", d, d, rng);
    st.norm2 = layers::LayerNorm::create(params, sp + "norm2", d);
    st.ffn = layers::Mlp2::create(params, sp + "ffn", d, config.ffn_hidden, d, rng);
    st.norm3 = layers::LayerNorm::create(params, sp + "norm3", d);
    const std::size_t lam_out = config.shared_lambda ? d : config.heads * d;
    st.lambda = layers::Mlp2::create(params, sp + "lambda", d, d, lam_out, rng);
    // lambda = 1 for a zero embedding, i.e. T starts as the identity.
    std::fill(st.lambda.second.bias.mutable_values().begin(), st.lambda.second.bias.mutable_values().end(), 1.0);
    st.walker = box_agent::create_walker_head(params, sp + "walker", d, config.heads, rng);
    st.whm_ref = layers::Linear::create(params, sp + "whm_ref", d, 2, rng);
    dp.stages.push_back(std::move(st));
  }
  dp.box_head = layers::Mlp2::create(params, p + "box_head", d, d, 4, rng);
  // Zero offsets at initialization.
  for (auto& v : dp.box_head.second.weight.mutable_values()) v = 0.0;
  dp.class_head = layers::Linear::create(params, p + "class_head", d, config.classes + 1, rng);
  return dp;
}

DecoderParams bind_decoder_params(const DecoderConfig& config, const nx::ParameterSet& params) {
  config.validate();
  const std::string p = DecoderParams::kPrefix;
  DecoderParams dp;
  dp.anchors = params.get(p + "anchors");
  if (dp.anchors.shape() != nx::Shape{config.queries, 4}) {
    throw nx::ShapeError("bind_decoder_params: anchors " + nx::shape_str(dp.anchors.shape()) + " for " +
                         std::to_string(config.queries) + " queries");
  }
  for (std::size_t s = 0; s < config.stages; ++s) {
    const std::string sp = p + "stage" + std::to_string(s) + ".";
    StageParams st;
    st.sa_q = layers::Linear::bind(params, sp + "sa_q");
    st.sa_k = layers::Linear::bind(params, sp + "sa_k");
    st.sa_v = layers::Linear::bind(params, sp + "sa_v");
    st.sa_o = layers::Linear::bind(params, sp + "sa_o");
    st.norm1 = layers::LayerNorm::bind(params, sp + "norm1");
    st.ca_q = layers::Linear::bind(params, sp + "ca_q");
    st.ca_k = layers::Linear::bind(params, sp + "ca_k");
    st.ca_v = layers::Linear::bind(params, sp + "ca_v");
    st.ca_o = layers::Linear::bind(params, sp + "ca_o");
    st.norm2 = layers::LayerNorm::bind(params, sp + "norm2");
    st.ffn = layers::Mlp2::bind(params, sp + "ffn");
    st.norm3 = layers::LayerNorm::bind(params, sp + "norm3");
    st.lambda = layers::Mlp2::bind(params, sp + "lambda");
    st.walker = layers::Linear::bind(params, sp + "walker");
    st.whm_ref = layers::Linear::bind(params, sp + "whm_ref");
    dp.stages.push_back(std::move(st));
  }
  dp.box_head = layers::Mlp2::bind(params, p + "box_head");
  dp.class_head = layers::Linear::bind(params, p + "class_head");
  return dp;
}

DecoderState initial_state(const DecoderConfig& config, const DecoderParams& params) {
  return {params.anchors, Tensor::zeros({config.queries, config.model_dim}), 0};
}

namespace {

std::vector<geometry::BoxCCWH> boxes_of(const Tensor& boxes) {
  std::vector<geometry::BoxCCWH> out(boxes.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {boxes[4 * i], boxes[4 * i + 1], boxes[4 * i + 2], boxes[4 * i + 3]};
  }
  return out;
}

std::vector<double> row_softmax(std::span<const double> logits, std::size_t len, double scale) {
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r * len < logits.size(); ++r) {
    const double* x = logits.data() + r * len;
    double mx = x[0] * scale;
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[j] * scale);
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += (out[r * len + j] = std::exp(x[j] * scale - mx));
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] /= s;
  }
  return out;
}

}  // namespace

StageResult decoder_stage(const DecoderState& state, const MemoryTokens& memory, const DecoderParams& params,
                          const DecoderConfig& config, bool want_trace) {
  const std::size_t n = config.queries, d = config.model_dim, heads = config.heads;
  if (state.stage >= params.stages.size()) {
    throw std::out_of_range("decoder_stage: stage " + std::to_string(state.stage) + " of " +
                            std::to_string(params.stages.size()));
  }
  if (state.logits.shape() != nx::Shape{n, 4} || state.embeddings.shape() != nx::Shape{n, d}) {
    throw nx::ShapeError("decoder_stage: state logits " + nx::shape_str(state.logits.shape()) + ", embeddings " +
                         nx::shape_str(state.embeddings.shape()) + " for N=" + std::to_string(n) +
                         ", D=" + std::to_string(d));
  }
  if (memory.content.rank() != 2 || memory.content.dim(1) != d || memory.key_pos.shape() != memory.content.shape()) {
    throw nx::ShapeError("decoder_stage: memory " + nx::shape_str(memory.content.shape()) + " / key positions " +
                         nx::shape_str(memory.key_pos.shape()) + " for D=" + std::to_string(d));
  }
  const StageParams& sp = params.stages[state.stage];
  const auto layout = config.layout();
  const Tensor& f = state.embeddings;

  const Tensor logits_in =
      (state.stage > 0 && config.detach_boxes) ? nx::detach(state.logits) : state.logits;
  const Tensor box = nx::sigmoid(logits_in);
  const Tensor centers = nx::slice(box, 1, 0, 2);

  const Tensor lambda = attention::lambda_from_embedding(f, sp.lambda);
  const Tensor walker = box_agent::uses_walker(config.mode) ? box_agent::walker_from_embedding(f, sp.walker) : Tensor();

  // Self-attention with positional terms at the box centers.
  const Tensor qk = nx::add(f, attention::sinusoidal_embed(centers, d, config.temperature));
  const Tensor sa = sp.sa_o(attention::multi_head_attention(sp.sa_q(qk), sp.sa_k(qk), sp.sa_v(f), layout));
  const Tensor f1 = sp.norm1(nx::add(f, sa));

  // Conditional cross-attention.
  const auto agents = box_agent::agent_points(box, walker, heads, config.mode);
  auto spatial = box_agent::per_head_spatial_queries(lambda, agents, d, config.temperature);
  if (config.shared_lambda && (config.mode == RefMode::center || config.mode == RefMode::center_whm)) {
    spatial.resize(1);
  }
  const WhmMode whm = config.effective_whm();
  if (whm != WhmMode::off) {
    const Tensor ref_wh = nx::sigmoid(sp.whm_ref(f));
    const Tensor box_wh = nx::maximum(nx::slice(box, 1, 2, 2), Tensor::scalar(geometry::kMinBoxSide));
    for (auto& q : spatial) q = attention::modulate_spatial_query(q, ref_wh, box_wh, whm);
  }
  attention::CrossAttentionInputs ca_in{sp.ca_q(f1), sp.ca_k(memory.content), std::move(spatial), memory.key_pos,
                                        sp.ca_v(memory.content)};
  const auto ca = attention::cross_attention(ca_in, layout, &sp.ca_o);
  const Tensor f2 = sp.norm2(nx::add(f1, ca.output));
  const Tensor f3 = sp.norm3(nx::add(f2, sp.ffn(f2)));

  const Tensor new_logits = nx::add(logits_in, params.box_head(f3));
  const Tensor class_logits = params.class_head(f3);

  StageResult res;
  res.state = {new_logits, f3, state.stage + 1};
  res.prediction = {nx::sigmoid(new_logits), class_logits};
  if (want_trace) {
    StageTrace t;
    t.stage = state.stage;
    t.previous_boxes = boxes_of(box);
    t.current_boxes = boxes_of(res.prediction.boxes);
    t.agent_points.assign(n, std::vector<box_agent::Point>(heads));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t q = 0; q < n; ++q) t.agent_points[q][h] = {agents[h][2 * q], agents[h][2 * q + 1]};
    const std::size_t keys = memory.content.dim(0);
    const double scale = 1.0 / std::sqrt(2.0 * static_cast<double>(layout.head_dim()));
    for (std::size_t h = 0; h < heads; ++h) {
      auto w = ca.weights[h].values();
      t.attention.emplace_back(w.begin(), w.end());
      t.spatial_attention.push_back(row_softmax(ca.spatial_logits[h].values(), keys, scale));
    }
    const auto probs = row_softmax(class_logits.values(), config.classes + 1, 1.0);
    for (std::size_t q = 0; q < n; ++q) {
      t.class_scores.emplace_back(probs.begin() + static_cast<std::ptrdiff_t>(q * (config.classes + 1)),
                                  probs.begin() + static_cast<std::ptrdiff_t>((q + 1) * (config.classes + 1)));
    }
    if (walker.defined()) t.walker.assign(walker.values().begin(), walker.values().end());
    res.trace = std::move(t);
  }
  return res;
}

ForwardResult forward(const MemoryTokens& memory, const DecoderConfig& config, const DecoderParams& params,
                      bool want_trace) {
  config.validate();
  ForwardResult out;
  DecoderState state = initial_state(config, params);
  for (std::size_t s = 0; s < config.stages; ++s) {
    StageResult r = decoder_stage(state, memory, params, config, want_trace);
    out.stages.push_back(std::move(r.prediction));
    if (r.trace) out.traces.push_back(std::move(*r.trace));
    state = std::move(r.state);
  }
  return out;
}

}  // namespace boxagent::decoder
