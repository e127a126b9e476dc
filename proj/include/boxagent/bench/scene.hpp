#pragma once

// Synthetic scenes: axis-aligned rectangles of C classes rasterized onto an
// H x W token grid, each class with its own fill intensity.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "boxagent/layers.hpp"
#include "boxagent/matcher.hpp"

namespace boxagent::bench {

struct SceneSpec {
  std::size_t height = 24;
  std::size_t width = 24;
  std::size_t k_min = 1;
  std::size_t k_max = 3;
  double s_min = 0.1;
  double s_max = 0.5;
  std::size_t classes = 3;

  void validate() const;
  // Fill value of class c: (c + 1) / C.
  double intensity(std::size_t cls) const;
};

nlohmann::json to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec base = {});

struct Scene {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> grid;  // row-major, row 0 at y = 0
  matcher::Targets targets;
};

// Cell (r, c) takes the intensity of the last listed rectangle covering its
// center ((c + 0.5) / W, (r + 0.5) / H), else 0.
Scene rasterize(const SceneSpec& spec, matcher::Targets targets);

// K uniform in [k_min, k_max]; side lengths uniform in [s_min, s_max]; centers
// uniform in the unit square, redrawn until the box lies inside it.
Scene generate_scene(Rng& rng, const SceneSpec& spec);

std::vector<Scene> generate_scenes(const SceneSpec& spec, std::size_t count, std::uint64_t seed);

}  // namespace boxagent::bench
