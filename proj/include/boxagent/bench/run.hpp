#pragma once

// Training and evaluation on synthetic scenes.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxagent/bench/encoder.hpp"
#include "boxagent/bench/scene.hpp"
#include "boxagent/decoder.hpp"
#include "boxagent/matcher.hpp"
#include "boxagent/optim.hpp"

namespace boxagent::bench {

struct RunConfig {
  SceneSpec scene;
  decoder::DecoderConfig decoder;
  numerics::AdamConfig adam;
  matcher::LossWeights loss;
  std::size_t epochs = 60;
  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 50;
  std::size_t batch_size = 4;
  // Global gradient-norm limit per step; <= 0 disables clipping.
  double grad_clip = 0.1;
  bool encoder_layer = false;
  // Model initialization and batch order.
  std::uint64_t seed = 0;
  // Train scenes use data_seed, eval scenes data_seed + 1.
  std::uint64_t data_seed = 1000;
  std::string out_dir = "out";
  // Write measured seconds into the curve CSV (breaks byte-identical reruns).
  bool record_wall_clock = false;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing fields keep their defaults; decoder.classes follows scene.classes.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Parameters plus the views the forward pass needs.
struct Model {
  decoder::DecoderConfig config;
  numerics::ParameterSet params;
  EncoderParams encoder;
  decoder::DecoderParams decoder;
};

Model create_model(const RunConfig& config);
// Binds an existing parameter set (e.g. from a checkpoint).
Model bind_model(const decoder::DecoderConfig& config, numerics::ParameterSet params);

decoder::ForwardResult run_model(const Model& model, const Scene& scene, bool want_trace = false);

struct CurvePoint {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mean_iou = 0.0;
  double acc50 = 0.0;
  double seconds = 0.0;
};

struct EvalResult {
  double mean_iou = 0.0;
  double acc50 = 0.0;
  std::size_t targets = 0;
};

// Final-stage predictions matched with the set-loss cost; acc50 counts
// targets whose match has IoU >= 0.5 and the right argmax class.
EvalResult evaluate_predictions(const std::vector<decoder::StagePrediction>& final_stage,
                                const std::vector<matcher::Targets>& targets, const matcher::LossWeights& w);
EvalResult evaluate(const Model& model, const std::vector<Scene>& scenes, const matcher::LossWeights& w);
// Same metric for every stage's predictions, in stage order.
std::vector<EvalResult> evaluate_stages(const Model& model, const std::vector<Scene>& scenes,
                                        const matcher::LossWeights& w);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::uint64_t seed)
      : std::runtime_error(what), epoch_(epoch), seed_(seed) {}
  std::size_t epoch() const { return epoch_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::size_t epoch_;
  std::uint64_t seed_;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  Model model;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const CurvePoint&)>;

// Fully deterministic given the config; throws TrainingError on a
// non-finite loss.
TrainResult train(const RunConfig& config, const EpochCallback& on_epoch = {});

// Walker offsets of every eval scene, by stage.
box_agent::WalkerStats walker_stats(const Model& model, const std::vector<Scene>& scenes);

}  // namespace boxagent::bench
