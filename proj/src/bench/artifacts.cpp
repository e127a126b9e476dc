#include "boxagent/bench/artifacts.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace boxagent::bench {

namespace nx = boxagent::numerics;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kCheckpointFormat = "boxagent-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw std::runtime_error("directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

std::string curve_csv(const std::vector<CurvePoint>& curve, bool with_seconds) {
  std::string s = "epoch,loss,mean_iou,acc50,seconds\n";
  for (const auto& p : curve) {
    s += std::to_string(p.epoch) + "," + fmt(p.loss) + "," + fmt(p.mean_iou) + "," + fmt(p.acc50) + "," +
         (with_seconds ? fmt(p.seconds) : std::string("0")) + "\n";
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(f);
}

void save_checkpoint(const fs::path& path, const RunConfig& config, const nx::ParameterSet& params) {
  nlohmann::json entries = nlohmann::json::object();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries[params.names()[i]] = {{"offset", offset}, {"shape", params.tensors()[i].shape()}};
    offset += params.tensors()[i].size();
  }
  // The output directory is where the file lives, not part of the model; leaving
  // it out keeps checkpoints of identical runs byte-identical.
  nlohmann::json cfg = to_json(config);
  cfg.erase("out_dir");
  const nlohmann::json header = {{"format", kCheckpointFormat},
                                 {"version", kCheckpointVersion},
                                 {"config", cfg},
                                 {"order", params.names()},
                                 {"params", entries}};
  const std::string text = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors()) {
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len == 0 || len > (1u << 26)) throw std::runtime_error("checkpoint " + path.string() + ": bad header");
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  if (header.value("format", "") != kCheckpointFormat || header.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unknown format");
  }
  std::vector<double> blob;
  {
    std::ostringstream rest;
    rest << f.rdbuf();
    const std::string bytes = rest.str();
    if (bytes.size() % sizeof(double) != 0) throw std::runtime_error("checkpoint " + path.string() + ": ragged data");
    blob.resize(bytes.size() / sizeof(double));
    std::memcpy(blob.data(), bytes.data(), bytes.size());
  }
  Checkpoint ck{run_config_from_json(header.at("config")), {}};
  const auto& entries = header.at("params");
  for (const auto& name : header.at("order")) {
    const auto& e = entries.at(name.get<std::string>());
    const auto offset = e.at("offset").get<std::size_t>();
    const auto shape = e.at("shape").get<nx::Shape>();
    const std::size_t n = nx::numel(shape);
    if (offset + n > blob.size()) throw std::runtime_error("checkpoint " + path.string() + ": parameter out of range");
    ck.params.add(name.get<std::string>(), shape,
                  std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                      blob.begin() + static_cast<std::ptrdiff_t>(offset + n)));
  }
  return ck;
}

std::string pgm_bytes(const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw nx::ShapeError("pgm_bytes: value count does not match extent");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = values.empty() ? 0.0 : *hi - *lo;
  for (double v : values) {
    const double t = range > 0 ? (v - *lo) / range : 128.0 / 255.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  return out;
}

nlohmann::json emit_attention_maps(const fs::path& dir, const std::vector<decoder::StageTrace>& traces,
                                   std::size_t height, std::size_t width) {
  ensure_writable_dir(dir);
  const std::size_t keys = height * width;
  nlohmann::json index = nlohmann::json::array();
  auto box_json = [](const geometry::BoxCCWH& b) { return nlohmann::json::array({b.cx, b.cy, b.w, b.h}); };
  for (const auto& t : traces) {
    const std::size_t queries = t.agent_points.size();
    for (std::size_t h = 0; h < t.attention.size(); ++h) {
      if (t.attention[h].size() != queries * keys) {
        throw nx::ShapeError("emit_attention_maps: attention size does not match the token grid");
      }
      for (std::size_t q = 0; q < queries; ++q) {
        std::vector<double> w(t.attention[h].begin() + static_cast<std::ptrdiff_t>(q * keys),
                              t.attention[h].begin() + static_cast<std::ptrdiff_t>((q + 1) * keys));
        const std::string name =
            "q" + std::to_string(q) + "_s" + std::to_string(t.stage) + "_h" + std::to_string(h) + ".pgm";
        write_text(dir / name, pgm_bytes(w, height, width));
        const auto& a = t.agent_points[q][h];
        index.push_back({{"file", name},
                         {"query", q},
                         {"stage", t.stage},
                         {"head", h},
                         {"agent_point", {a.x, a.y}},
                         {"previous_box", box_json(t.previous_boxes[q])},
                         {"current_box", box_json(t.current_boxes[q])}});
      }
    }
  }
  write_json(dir / "index.json", index);
  return index;
}

void write_run(const RunConfig& config, const TrainResult& result) {
  const fs::path dir = config.out_dir;
  ensure_writable_dir(dir);
  write_json(dir / "config.json", to_json(config));
  write_text(dir / "curve.csv", curve_csv(result.curve, config.record_wall_clock));
  std::string timing = "epoch,seconds\n";
  for (const auto& p : result.curve) timing += std::to_string(p.epoch) + "," + fmt(p.seconds) + "\n";
  write_text(dir / "timing.csv", timing);
  save_checkpoint(dir / "checkpoint.bin", config, result.model.params);
  const auto eval_set = generate_scenes(config.scene, config.eval_scenes, config.data_seed + 1);
  const auto stages = evaluate_stages(result.model, eval_set, config.loss);
  const auto& ev = stages.back();
  nlohmann::json per_stage = nlohmann::json::array();
  for (const auto& st : stages) per_stage.push_back({{"mean_iou", st.mean_iou}, {"acc50", st.acc50}});
  write_json(dir / "eval.json",
             {{"mean_iou", ev.mean_iou}, {"acc50", ev.acc50}, {"targets", ev.targets}, {"stages", per_stage}});
  if (box_agent::uses_walker(config.decoder.mode)) {
    write_json(dir / "walker_stats.json", walker_stats(result.model, eval_set).to_json());
  }
}

std::vector<SweepEntry> sweep(const RunConfig& base, const std::vector<box_agent::RefMode>& modes,
                              const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  if (modes.empty() || seeds.empty()) throw std::invalid_argument("sweep: need at least one mode and one seed");
  const fs::path root = base.out_dir;
  ensure_writable_dir(root);
  std::vector<RunConfig> runs;
  for (auto m : modes) {
    for (auto s : seeds) {
      RunConfig c = base;
      c.decoder.mode = m;
      c.seed = s;
      c.out_dir = (root / (std::string(box_agent::to_string(m)) + "_seed" + std::to_string(s))).string();
      c.validate();
      runs.push_back(std::move(c));
    }
  }
  std::vector<SweepEntry> entries(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        const auto r = train(runs[i]);
        write_run(runs[i], r);
        const auto& last = r.curve.empty() ? CurvePoint{} : r.curve.back();
        entries[i] = {box_agent::to_string(runs[i].decoder.mode), runs[i].seed, last.mean_iou, last.acc50, r.seconds,
                      runs[i].out_dir};
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, runs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::string csv = "mode,seed,mean_iou,acc50,seconds\n";
  nlohmann::json js = nlohmann::json::array();
  for (const auto& e : entries) {
    csv += e.mode + "," + std::to_string(e.seed) + "," + fmt(e.mean_iou) + "," + fmt(e.acc50) + "," + fmt(e.seconds) +
           "\n";
    js.push_back({{"mode", e.mode},
                  {"seed", e.seed},
                  {"mean_iou", e.mean_iou},
                  {"acc50", e.acc50},
                  {"seconds", e.seconds},
                  {"dir", e.dir}});
  }
  write_text(root / "summary.csv", csv);
  write_json(root / "summary.json", js);
  return entries;
}

}  // namespace boxagent::bench
