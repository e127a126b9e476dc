#pragma once

// On-disk formats: curve CSVs, checkpoints, PGM attention maps with a JSON
// index, and sweep summaries.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxagent/bench/run.hpp"

namespace boxagent::bench {

namespace fs = std::filesystem;

// Creates dir (and parents); throws if it cannot be created or written.
void ensure_writable_dir(const fs::path& dir);

// Header epoch,loss,mean_iou,acc50,seconds. The seconds column is 0 unless
// with_seconds is set.
std::string curve_csv(const std::vector<CurvePoint>& curve, bool with_seconds);
void write_text(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

// u64 little-endian header length, JSON header
// {"format", "version", "config", "params": {name: {offset, shape}}},
// then every parameter as little-endian doubles. Offsets count doubles.
void save_checkpoint(const fs::path& path, const RunConfig& config, const numerics::ParameterSet& params);

struct Checkpoint {
  RunConfig config;
  numerics::ParameterSet params;
};
Checkpoint load_checkpoint(const fs::path& path);

// Binary 8-bit PGM; values min-max normalized to 0..255, constant input maps
// to 128.
std::string pgm_bytes(const std::vector<double>& values, std::size_t height, std::size_t width);

// One PGM per (query, stage, head) of the spatial-plus-content attention
// weights, named q{q}_s{s}_h{h}.pgm, plus index.json listing every file with
// {file, query, stage, head, agent_point, previous_box, current_box}.
nlohmann::json emit_attention_maps(const fs::path& dir, const std::vector<decoder::StageTrace>& traces,
                                   std::size_t height, std::size_t width);

// Writes config.json, curve.csv, timing.csv, checkpoint.bin, eval.json and,
// for walker modes, walker_stats.json into config.out_dir.
void write_run(const RunConfig& config, const TrainResult& result);

struct SweepEntry {
  std::string mode;
  std::uint64_t seed = 0;
  double mean_iou = 0.0;
  double acc50 = 0.0;
  double seconds = 0.0;
  std::string dir;
};

// Trains every (mode, seed) pair into <out_dir>/<mode>_seed<seed>/ and writes
// summary.csv / summary.json. jobs > 1 runs pairs on parallel threads.
std::vector<SweepEntry> sweep(const RunConfig& base, const std::vector<box_agent::RefMode>& modes,
                              const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

}  // namespace boxagent::bench
