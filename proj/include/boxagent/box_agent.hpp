#pragma once

// Box agents: a learned walker z (n x 2 per query) moves n head-specific
// reference points inside the previous anchor box,
//   b_i = (cx, cy) + (z_x * w/2, z_y * h/2),
// and each head builds its conditional spatial query from its own point.

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxagent/geometry.hpp"
#include "boxagent/layers.hpp"
#include "boxagent/tensor.hpp"

namespace boxagent::box_agent {

enum class RefMode {
  center,
  center_whm,
  agent_unnormalized,
  agent_tanh,
  agent_noscale,
  agent_sigma,
  agent_fixed_grid,
};

const char* to_string(RefMode mode);
RefMode parse_ref_mode(const std::string& s);
std::vector<RefMode> all_ref_modes();

// Modes whose agent points depend on the walker.
bool uses_walker(RefMode mode);

constexpr std::size_t walker_parameter_count(std::size_t model_dim, std::size_t heads) {
  return 2 * heads * model_dim + 2 * heads;
}

layers::Linear create_walker_head(numerics::ParameterSet& params, const std::string& name, std::size_t model_dim,
                                  std::size_t heads, Rng& rng);

// Linear head [N,D] -> [N,2n]; row r holds (z_x, z_y) for heads 0..n-1. The
// tanh used by RefMode::agent_tanh is applied inside agent_points, so the
// walker itself is always the raw head output.
numerics::Tensor walker_from_embedding(const numerics::Tensor& f, const layers::Linear& head);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Grid offsets used by RefMode::agent_fixed_grid, in units of (w, h): the
// 3x3 cell centers of the box minus the middle one. Head i uses entry i % 8.
const std::vector<Point>& fixed_grid_offsets();

// Scalar form; z holds 2n values (ignored by center and fixed-grid modes).
std::vector<Point> agent_points(const geometry::BoxCCWH& box, std::span<const double> z, std::size_t heads,
                                RefMode mode);

// Tensor form: boxes [N,4] (cx, cy, w, h), z [N,2n] or undefined for modes that
// do not use it. Returns one [N,2] tensor per head.
std::vector<numerics::Tensor> agent_points(const numerics::Tensor& boxes, const numerics::Tensor& z,
                                           std::size_t heads, RefMode mode);

// lambda [N,D] shared across heads, or [N,n*D] with head i using columns
// [i*D, (i+1)*D). Agents that are the same tensor share one query.
std::vector<numerics::Tensor> per_head_spatial_queries(const numerics::Tensor& lambda,
                                                       std::span<const numerics::Tensor> agents,
                                                       std::size_t dim, double temperature);

// Walker range statistics by decoder stage.
class WalkerStats {
 public:
  static constexpr double kHistLo = -3.0;
  static constexpr double kHistHi = 3.0;
  static constexpr std::size_t kBins = 50;

  explicit WalkerStats(std::string mode) : mode_(std::move(mode)) {}

  // z: interleaved (z_x, z_y) pairs.
  void record(std::size_t stage, std::span<const double> z);
  void merge(const WalkerStats& other);

  bool empty() const { return stages_.empty(); }
  // Fraction of components (both axes) inside [-1, 1]; throws when empty.
  double fraction_in_range() const;
  double fraction_in_range(std::size_t stage) const;

  // {mode, stages: {"<s>": {fraction_in_range, fraction_x_in_range,
  //  fraction_y_in_range, count, histogram_x, histogram_y}}, overall}.
  // Histograms: {bin_edges[51], counts[50], underflow, overflow}.
  nlohmann::json to_json() const;

 private:
  struct Histogram {
    std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);
    std::size_t underflow = 0;
    std::size_t overflow = 0;
    std::size_t in_range = 0;
    std::size_t total = 0;
    void add(double v);
    void merge(const Histogram& o);
    nlohmann::json to_json() const;
  };
  struct StageHist {
    Histogram x;
    Histogram y;
  };

  std::string mode_;
  std::map<std::size_t, StageHist> stages_;
};

}  // namespace boxagent::box_agent
