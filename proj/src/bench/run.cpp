#include "boxagent/bench/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "boxagent/ops.hpp"

namespace boxagent::bench {

namespace nx = boxagent::numerics;
using nx::Tensor;

void RunConfig::validate() const {
  scene.validate();
  decoder.validate();
  if (decoder.classes != scene.classes) {
    throw std::invalid_argument("run config: decoder classes " + std::to_string(decoder.classes) +
                                " differ from scene classes " + std::to_string(scene.classes));
  }
  if (decoder.queries < scene.k_max) {
    throw std::invalid_argument("run config: " + std::to_string(decoder.queries) + " queries cannot cover " +
                                std::to_string(scene.k_max) + " objects");
  }
  if (train_scenes == 0 && epochs > 0) throw std::invalid_argument("run config: no training scenes");
  if (eval_scenes == 0) throw std::invalid_argument("run config: eval_scenes must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("run config: batch_size must be >= 1");
  if (!(adam.lr > 0)) throw std::invalid_argument("run config: learning rate must be > 0");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"scene", to_json(c.scene)},
          {"decoder", decoder::to_json(c.decoder)},
          {"optimizer", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"loss",
           {{"cls", c.loss.cls}, {"l1", c.loss.l1}, {"giou", c.loss.giou}, {"no_object", c.loss.no_object}}},
          {"epochs", c.epochs},
          {"train_scenes", c.train_scenes},
          {"eval_scenes", c.eval_scenes},
          {"batch_size", c.batch_size},
          {"grad_clip", c.grad_clip},
          {"encoder_layer", c.encoder_layer},
          {"seed", c.seed},
          {"data_seed", c.data_seed},
          {"out_dir", c.out_dir},
          {"record_wall_clock", c.record_wall_clock}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("scene")) c.scene = scene_spec_from_json(j.at("scene"));
  c.decoder.classes = c.scene.classes;
  if (j.contains("decoder")) c.decoder = decoder::decoder_config_from_json(j.at("decoder"), c.decoder);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.adam.lr = o.value("lr", c.adam.lr);
    c.adam.beta1 = o.value("beta1", c.adam.beta1);
    c.adam.beta2 = o.value("beta2", c.adam.beta2);
    c.adam.eps = o.value("eps", c.adam.eps);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.cls = l.value("cls", c.loss.cls);
    c.loss.l1 = l.value("l1", c.loss.l1);
    c.loss.giou = l.value("giou", c.loss.giou);
    c.loss.no_object = l.value("no_object", c.loss.no_object);
  }
  c.epochs = j.value("epochs", c.epochs);
  c.train_scenes = j.value("train_scenes", c.train_scenes);
  c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.encoder_layer = j.value("encoder_layer", c.encoder_layer);
  c.seed = j.value("seed", c.seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.record_wall_clock = j.value("record_wall_clock", c.record_wall_clock);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
}

Model create_model(const RunConfig& config) {
  config.validate();
  Model m;
  m.config = config.decoder;
  Rng rng(config.seed);
  // Decoder first so its initialization does not depend on the encoder choice.
  m.decoder = decoder::create_decoder_params(config.decoder, rng, m.params);
  m.encoder = create_encoder_params(config.decoder.model_dim, config.encoder_layer, rng, m.params);
  return m;
}

Model bind_model(const decoder::DecoderConfig& config, nx::ParameterSet params) {
  Model m;
  m.config = config;
  m.params = std::move(params);
  m.decoder = decoder::bind_decoder_params(config, m.params);
  m.encoder = bind_encoder_params(m.params);
  if (m.encoder.patch.out_features() != config.model_dim) {
    throw nx::ShapeError("bind_model: encoder width " + std::to_string(m.encoder.patch.out_features()) +
                         " vs model width " + std::to_string(config.model_dim));
  }
  return m;
}

decoder::ForwardResult run_model(const Model& model, const Scene& scene, bool want_trace) {
  const auto memory = encode_scene(scene, model.encoder, model.config.heads, model.config.temperature);
  return decoder::forward(memory, model.config, model.decoder, want_trace);
}

EvalResult evaluate_predictions(const std::vector<decoder::StagePrediction>& final_stage,
                                const std::vector<matcher::Targets>& targets, const matcher::LossWeights& w) {
  if (final_stage.empty()) throw std::invalid_argument("evaluate: no scenes");
  if (final_stage.size() != targets.size()) throw std::invalid_argument("evaluate: predictions and targets differ");
  EvalResult r;
  double iou_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < final_stage.size(); ++s) {
    const auto& pred = final_stage[s];
    const auto& tg = targets[s];
    if (tg.size() == 0) continue;
    const auto a = matcher::hungarian(matcher::matching_cost(pred, tg, w));
    const std::size_t width = pred.class_logits.dim(1);
    for (auto [p, t] : a.pairs) {
      const geometry::BoxCCWH pb{pred.boxes[4 * p], pred.boxes[4 * p + 1], pred.boxes[4 * p + 2],
                                 pred.boxes[4 * p + 3]};
      const double v = geometry::iou(geometry::to_corners(pb), geometry::to_corners(tg.boxes[t]));
      const double* row = pred.class_logits.data() + p * width;
      const auto cls = static_cast<std::size_t>(std::max_element(row, row + width) - row);
      iou_sum += v;
      if (v >= 0.5 && cls == tg.classes[t]) ++hits;
      ++r.targets;
    }
  }
  if (r.targets > 0) {
    r.mean_iou = iou_sum / static_cast<double>(r.targets);
    r.acc50 = static_cast<double>(hits) / static_cast<double>(r.targets);
  }
  return r;
}

EvalResult evaluate(const Model& model, const std::vector<Scene>& scenes, const matcher::LossWeights& w) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  nx::NoGradGuard no_grad;
  std::vector<decoder::StagePrediction> preds;
  std::vector<matcher::Targets> targets;
  for (const auto& s : scenes) {
    preds.push_back(run_model(model, s).stages.back());
    targets.push_back(s.targets);
  }
  return evaluate_predictions(preds, targets, w);
}

std::vector<EvalResult> evaluate_stages(const Model& model, const std::vector<Scene>& scenes,
                                        const matcher::LossWeights& w) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  nx::NoGradGuard no_grad;
  std::vector<std::vector<decoder::StagePrediction>> preds(model.config.stages);
  std::vector<matcher::Targets> targets;
  for (const auto& s : scenes) {
    auto fwd = run_model(model, s);
    for (std::size_t k = 0; k < preds.size(); ++k) preds[k].push_back(std::move(fwd.stages[k]));
    targets.push_back(s.targets);
  }
  std::vector<EvalResult> out;
  for (const auto& p : preds) out.push_back(evaluate_predictions(p, targets, w));
  return out;
}

TrainResult train(const RunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult out{{}, create_model(config), 0.0};
  Model& model = out.model;
  const auto train_set = generate_scenes(config.scene, config.train_scenes, config.data_seed);
  const auto eval_set = generate_scenes(config.scene, config.eval_scenes, config.data_seed + 1);
  const auto& params = model.params.tensors();
  nx::OptState opt = nx::make_adam_state(params, config.adam);
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto non_finite = [&](const std::string& what, std::size_t epoch) {
    throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", seed " +
                            std::to_string(config.seed) + ": " + what,
                        epoch, config.seed);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].size(), 0.0);
      for (std::size_t k = b; k < end; ++k) {
        const Scene& scene = train_set[order[k]];
        Tensor loss;
        try {
          const auto fwd = run_model(model, scene);
          loss = matcher::set_loss(fwd.stages, scene.targets, config.loss);
        } catch (const nx::NumericError& e) {
          non_finite(e.what(), epoch);
        }
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
          non_finite("loss " + std::to_string(lv), epoch);
        }
        loss_sum += lv;
        const auto g = nx::backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (!g.touched(params[i])) continue;
          const auto gi = g.of(params[i]);
          for (std::size_t j = 0; j < gi.size(); ++j) grads[i][j] += inv * gi[j];
        }
      }
      nx::clip_grad_norm(grads, config.grad_clip);
      nx::adam_step(params, grads, opt);
    }
    EvalResult ev;
    try {
      ev = evaluate(model, eval_set, config.loss);
    } catch (const nx::NumericError& e) {
      non_finite(e.what(), epoch);
    }
    CurvePoint pt;
    pt.epoch = epoch;
    pt.loss = loss_sum / static_cast<double>(train_set.size());
    pt.mean_iou = ev.mean_iou;
    pt.acc50 = ev.acc50;
    pt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.curve.push_back(pt);
    if (on_epoch) on_epoch(pt);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

box_agent::WalkerStats walker_stats(const Model& model, const std::vector<Scene>& scenes) {
  box_agent::WalkerStats stats(box_agent::to_string(model.config.mode));
  nx::NoGradGuard no_grad;
  for (const auto& s : scenes) {
    const auto fwd = run_model(model, s, true);
    for (const auto& t : fwd.traces) {
      if (!t.walker.empty()) stats.record(t.stage, t.walker);
    }
  }
  return stats;
}

}  // namespace boxagent::bench
