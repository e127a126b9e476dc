// Command-line front end: selftest, train, eval, viz, sweep.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "boxagent/bench/artifacts.hpp"
#include "boxagent/simd/kernels.hpp"
#include "boxagent/verify.hpp"

using namespace boxagent;

namespace {

template <typename T>
std::vector<T> split_list(const std::string& s, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  if (out.empty()) throw std::invalid_argument("empty list: '" + s + "'");
  return out;
}

std::uint64_t parse_seed(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad seed: " + s);
  return v;
}

box_agent::RefMode parse_mode(const std::string& s) { return box_agent::parse_ref_mode(s); }

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;

  void attach(CLI::App* cmd, bool with_seed_mode) {
    if (with_seed_mode) {
      cmd->add_option("--seed", seed, "Model seed");
      cmd->add_option("--mode", mode, "Reference mode");
    }
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Adam learning rate");
  }

  void apply(bench::RunConfig& c) const {
    if (seed) c.seed = *seed;
    if (mode) c.decoder.mode = box_agent::parse_ref_mode(*mode);
    if (out) c.out_dir = *out;
    if (epochs) c.epochs = *epochs;
    if (lr) c.adam.lr = *lr;
  }
};

int cmd_selftest() {
  std::cout << "kernels: " << simd::isa_name(simd::active_isa()) << "\n";
  bool ok = true;
  for (const auto& r : verify::run_fast_checks()) {
    std::cout << verify::format(r) << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_train(const std::string& config_path, const Overrides& ov) {
  auto c = bench::load_run_config(config_path);
  ov.apply(c);
  bench::ensure_writable_dir(c.out_dir);
  std::cerr << "training " << box_agent::to_string(c.decoder.mode) << " seed " << c.seed << " -> " << c.out_dir
            << "\n";
  const auto result = bench::train(c, [](const bench::CurvePoint& p) {
    std::fprintf(stderr, "epoch %zu loss %.4f iou %.4f acc50 %.4f (%.1fs)\n", p.epoch, p.loss, p.mean_iou, p.acc50,
                 p.seconds);
  });
  bench::write_run(c, result);
  const auto& last = result.curve.empty() ? bench::CurvePoint{} : result.curve.back();
  std::cout << nlohmann::json{{"mode", box_agent::to_string(c.decoder.mode)},
                              {"seed", c.seed},
                              {"epochs", c.epochs},
                              {"mean_iou", last.mean_iou},
                              {"acc50", last.acc50},
                              {"seconds", result.seconds},
                              {"out", c.out_dir}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path) {
  const auto ck = bench::load_checkpoint(checkpoint);
  const auto c = bench::load_run_config(config_path);
  const auto model = bench::bind_model(ck.config.decoder, ck.params);
  const auto scenes = bench::generate_scenes(c.scene, c.eval_scenes, c.data_seed + 1);
  const auto stages = bench::evaluate_stages(model, scenes, c.loss);
  const auto& ev = stages.back();
  nlohmann::json per_stage = nlohmann::json::array();
  for (const auto& st : stages) per_stage.push_back({{"mean_iou", st.mean_iou}, {"acc50", st.acc50}});
  std::cout << nlohmann::json{{"mean_iou", ev.mean_iou}, {"acc50", ev.acc50}, {"targets", ev.targets}, {"stages", per_stage}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_viz(const std::string& checkpoint, std::uint64_t scene_seed, const std::string& out) {
  const auto ck = bench::load_checkpoint(checkpoint);
  const auto model = bench::bind_model(ck.config.decoder, ck.params);
  const auto scene = bench::generate_scenes(ck.config.scene, 1, scene_seed).front();
  const auto fwd = [&] {
    numerics::NoGradGuard g;
    return bench::run_model(model, scene, true);
  }();
  const auto index = bench::emit_attention_maps(out, fwd.traces, scene.height, scene.width);
  bench::write_text(bench::fs::path(out) / "scene.pgm", bench::pgm_bytes(scene.grid, scene.height, scene.width));
  nlohmann::json targets = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.targets.size(); ++i) {
    const auto& b = scene.targets.boxes[i];
    targets.push_back({{"box", {b.cx, b.cy, b.w, b.h}}, {"class", scene.targets.classes[i]}});
  }
  bench::write_json(bench::fs::path(out) / "scene.json", {{"scene_seed", scene_seed}, {"targets", targets}});
  std::cout << index.size() << " attention maps written to " << out << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& modes, const std::string& seeds,
              const Overrides& ov, std::size_t jobs) {
  auto c = bench::load_run_config(config_path);
  ov.apply(c);
  const auto entries = bench::sweep(c, split_list(modes, parse_mode), split_list(seeds, parse_seed), jobs);
  for (const auto& e : entries) {
    std::printf("%s seed %llu: mean_iou %.4f acc50 %.4f (%.1fs)\n", e.mode.c_str(),
                static_cast<unsigned long long>(e.seed), e.mean_iou, e.acc50, e.seconds);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-box decoder with box agents on synthetic rectangle scenes"};
  app.require_subcommand(1);

  auto* selftest = app.add_subcommand("selftest", "Run the property and oracle checks");

  std::string config, checkpoint, out, modes, seeds;
  std::uint64_t scene_seed = 0;
  std::size_t jobs = 1;

  Overrides train_ov;
  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--config", config, "JSON run config")->required()->check(CLI::ExistingFile);
  train_ov.attach(train, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the config's eval scenes");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--config", config)->required()->check(CLI::ExistingFile);

  auto* viz = app.add_subcommand("viz", "Write attention maps for one generated scene");
  viz->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  viz->add_option("--scene-seed", scene_seed)->required();
  viz->add_option("--out", out)->required();

  Overrides sweep_ov;
  auto* sw = app.add_subcommand("sweep", "Train every (mode, seed) pair");
  sw->add_option("--config", config)->required()->check(CLI::ExistingFile);
  sw->add_option("--modes", modes, "Comma-separated reference modes")->required();
  sw->add_option("--seeds", seeds, "Comma-separated seeds")->required();
  sw->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
  sweep_ov.attach(sw, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*selftest) return cmd_selftest();
    if (*train) return cmd_train(config, train_ov);
    if (*eval) return cmd_eval(checkpoint, config);
    if (*viz) return cmd_viz(checkpoint, scene_seed, out);
    if (*sw) return cmd_sweep(config, modes, seeds, sweep_ov, jobs);
  } catch (const bench::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
