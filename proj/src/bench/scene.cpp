#include "boxagent/bench/scene.hpp"

#include <random>
#include <stdexcept>
#include <string>

namespace boxagent::bench {

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("scene spec: empty grid");
  if (k_min == 0 || k_min > k_max) {
    throw std::invalid_argument("scene spec: need 1 <= k_min <= k_max, got " + std::to_string(k_min) + ".." +
                                std::to_string(k_max));
  }
  if (!(s_min > 0) || s_min > s_max) throw std::invalid_argument("scene spec: need 0 < s_min <= s_max");
  if (s_min > 1.0) throw std::invalid_argument("scene spec: s_min > 1 cannot fit in the unit square");
  if (classes == 0) throw std::invalid_argument("scene spec: classes must be >= 1");
}

double SceneSpec::intensity(std::size_t cls) const {
  return static_cast<double>(cls + 1) / static_cast<double>(classes);
}

nlohmann::json to_json(const SceneSpec& s) {
  return {{"height", s.height}, {"width", s.width}, {"k_min", s.k_min},     {"k_max", s.k_max},
          {"s_min", s.s_min},   {"s_max", s.s_max}, {"classes", s.classes}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec s) {
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.k_min = j.value("k_min", s.k_min);
  s.k_max = j.value("k_max", s.k_max);
  s.s_min = j.value("s_min", s.s_min);
  s.s_max = j.value("s_max", s.s_max);
  s.classes = j.value("classes", s.classes);
  return s;
}

Scene rasterize(const SceneSpec& spec, matcher::Targets targets) {
  spec.validate();
  if (targets.boxes.size() != targets.classes.size()) {
    throw std::invalid_argument("rasterize: boxes and classes differ in length");
  }
  Scene s{spec.height, spec.width, std::vector<double>(spec.height * spec.width, 0.0), std::move(targets)};
  for (std::size_t k = 0; k < s.targets.size(); ++k) {
    const auto c = geometry::to_corners(s.targets.boxes[k]);
    const double value = spec.intensity(s.targets.classes[k]);
    for (std::size_t r = 0; r < spec.height; ++r) {
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(spec.height);
      if (y < c.y0 || y > c.y1) continue;
      for (std::size_t col = 0; col < spec.width; ++col) {
        const double x = (static_cast<double>(col) + 0.5) / static_cast<double>(spec.width);
        if (x >= c.x0 && x <= c.x1) s.grid[r * spec.width + col] = value;
      }
    }
  }
  return s;
}

Scene generate_scene(Rng& rng, const SceneSpec& spec) {
  spec.validate();
  std::uniform_int_distribution<std::size_t> count(spec.k_min, spec.k_max);
  std::uniform_int_distribution<std::size_t> cls(0, spec.classes - 1);
  std::uniform_real_distribution<double> side(spec.s_min, spec.s_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  matcher::Targets t;
  const std::size_t k = count(rng);
  for (std::size_t i = 0; i < k; ++i) {
    const double w = side(rng), h = side(rng);
    double cx = 0.0, cy = 0.0;
    do {
      cx = unit(rng);
      cy = unit(rng);
    } while (cx - w / 2 < 0.0 || cx + w / 2 > 1.0 || cy - h / 2 < 0.0 || cy + h / 2 > 1.0);
    t.boxes.push_back({cx, cy, w, h});
    t.classes.push_back(cls(rng));
  }
  return rasterize(spec, std::move(t));
}

std::vector<Scene> generate_scenes(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(rng, spec));
  return out;
}

}  // namespace boxagent::bench
