#include "boxagent/box_agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "boxagent/attention.hpp"
#include "boxagent/ops.hpp"

namespace boxagent::box_agent {

namespace nx = boxagent::numerics;
using nx::Tensor;

const char* to_string(RefMode mode) {
  switch (mode) {
    case RefMode::center: return "center";
    case RefMode::center_whm: return "center+whm";
    case RefMode::agent_unnormalized: return "agent-unnormalized";
    case RefMode::agent_tanh: return "agent-tanh";
    case RefMode::agent_noscale: return "agent-noscale";
    case RefMode::agent_sigma: return "agent-sigma";
    case RefMode::agent_fixed_grid: return "agent-fixed-grid";
  }
  return "?";
}

std::vector<RefMode> all_ref_modes() {
  return {RefMode::center,        RefMode::center_whm,  RefMode::agent_unnormalized, RefMode::agent_tanh,
          RefMode::agent_noscale, RefMode::agent_sigma, RefMode::agent_fixed_grid};
}

RefMode parse_ref_mode(const std::string& s) {
  for (RefMode m : all_ref_modes()) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown reference mode: " + s);
}

bool uses_walker(RefMode mode) {
  switch (mode) {
    case RefMode::agent_unnormalized:
    case RefMode::agent_tanh:
    case RefMode::agent_noscale:
    case RefMode::agent_sigma:
      return true;
    default:
      return false;
  }
}

layers::Linear create_walker_head(nx::ParameterSet& params, const std::string& name, std::size_t model_dim,
                                  std::size_t heads, Rng& rng) {
  return layers::Linear::create(params, name, model_dim, 2 * heads, rng);
}

Tensor walker_from_embedding(const Tensor& f, const layers::Linear& head) {
  if (f.rank() != 2 || f.dim(1) != head.in_features()) {
    throw nx::ShapeError("walker_from_embedding: embedding " + nx::shape_str(f.shape()) + " vs head input " +
                         std::to_string(head.in_features()));
  }
  return head(f);
}

const std::vector<Point>& fixed_grid_offsets() {
  static const std::vector<Point> grid = [] {
    std::vector<Point> g;
    for (int gy = -1; gy <= 1; ++gy)
      for (int gx = -1; gx <= 1; ++gx)
        if (gx != 0 || gy != 0) g.push_back({gx / 3.0, gy / 3.0});
    return g;
  }();
  return grid;
}

std::vector<Point> agent_points(const geometry::BoxCCWH& box, std::span<const double> z, std::size_t heads,
                                RefMode mode) {
  const double w = std::max(box.w, geometry::kMinBoxSide);
  const double h = std::max(box.h, geometry::kMinBoxSide);
  if (uses_walker(mode) && z.size() != 2 * heads) {
    throw nx::ShapeError("agent_points: walker has " + std::to_string(z.size()) + " values for " +
                         std::to_string(heads) + " heads");
  }
  std::vector<Point> out(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const double zx = uses_walker(mode) ? z[2 * i] : 0.0;
    const double zy = uses_walker(mode) ? z[2 * i + 1] : 0.0;
    switch (mode) {
      case RefMode::center:
      case RefMode::center_whm:
        out[i] = {box.cx, box.cy};
        break;
      case RefMode::agent_unnormalized:
        out[i] = {box.cx + zx * (w / 2), box.cy + zy * (h / 2)};
        break;
      case RefMode::agent_tanh:
        out[i] = {box.cx + std::tanh(zx) * (w / 2), box.cy + std::tanh(zy) * (h / 2)};
        break;
      case RefMode::agent_noscale:
        out[i] = {box.cx + zx, box.cy + zy};
        break;
      case RefMode::agent_sigma:
        out[i] = {geometry::sigmoid(geometry::inverse_sigmoid(box.cx) + zx),
                  geometry::sigmoid(geometry::inverse_sigmoid(box.cy) + zy)};
        break;
      case RefMode::agent_fixed_grid: {
        const Point g = fixed_grid_offsets()[i % fixed_grid_offsets().size()];
        out[i] = {box.cx + g.x * w, box.cy + g.y * h};
        break;
      }
    }
  }
  return out;
}

std::vector<Tensor> agent_points(const Tensor& boxes, const Tensor& z, std::size_t heads, RefMode mode) {
  if (boxes.rank() != 2 || boxes.dim(1) != 4) {
    throw nx::ShapeError("agent_points: expected boxes [N,4], got " + nx::shape_str(boxes.shape()));
  }
  const std::size_t n = boxes.dim(0);
  if (uses_walker(mode) && (!z.defined() || z.shape() != nx::Shape{n, 2 * heads})) {
    throw nx::ShapeError("agent_points: walker " + (z.defined() ? nx::shape_str(z.shape()) : std::string("missing")) +
                         " for " + std::to_string(n) + " queries and " + std::to_string(heads) + " heads");
  }
  const Tensor centers = nx::slice(boxes, 1, 0, 2);
  std::vector<Tensor> out;
  out.reserve(heads);
  if (mode == RefMode::center || mode == RefMode::center_whm) {
    out.assign(heads, centers);
    return out;
  }
  const Tensor wh = nx::maximum(nx::slice(boxes, 1, 2, 2), Tensor::scalar(geometry::kMinBoxSide));
  const Tensor half = nx::scale(wh, 0.5);
  if (mode == RefMode::agent_fixed_grid) {
    const auto& grid = fixed_grid_offsets();
    for (std::size_t i = 0; i < heads; ++i) {
      const Point g = grid[i % grid.size()];
      out.push_back(nx::add(centers, nx::mul(wh, Tensor::constant({2}, {g.x, g.y}))));
    }
    return out;
  }
  const Tensor walk = mode == RefMode::agent_tanh ? nx::tanh(z) : z;
  const Tensor logit_centers = mode == RefMode::agent_sigma ? geometry::inverse_sigmoid(centers) : Tensor();
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor zi = nx::slice(walk, 1, 2 * i, 2);
    switch (mode) {
      case RefMode::agent_unnormalized:
      case RefMode::agent_tanh:
        out.push_back(nx::add(centers, nx::mul(zi, half)));
        break;
      case RefMode::agent_noscale:
        out.push_back(nx::add(centers, zi));
        break;
      case RefMode::agent_sigma:
        out.push_back(nx::sigmoid(nx::add(logit_centers, zi)));
        break;
      default:
        throw std::logic_error("agent_points: unhandled mode");
    }
  }
  return out;
}

std::vector<Tensor> per_head_spatial_queries(const Tensor& lambda, std::span<const Tensor> agents, std::size_t dim,
                                             double temperature) {
  const std::size_t heads = agents.size();
  if (lambda.rank() != 2 || (lambda.dim(1) != dim && lambda.dim(1) != heads * dim)) {
    throw nx::ShapeError("per_head_spatial_queries: lambda " + nx::shape_str(lambda.shape()) + " for width " +
                         std::to_string(dim) + " and " + std::to_string(heads) + " heads");
  }
  const bool shared = lambda.dim(1) == dim;
  std::unordered_map<const nx::Node*, Tensor> embedded;
  std::vector<Tensor> out;
  out.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const nx::Node* key = agents[i].node().get();
    auto it = embedded.find(key);
    if (it == embedded.end()) it = embedded.emplace(key, attention::sinusoidal_embed(agents[i], dim, temperature)).first;
    const Tensor lam = shared ? lambda : nx::slice(lambda, 1, i * dim, dim);
    out.push_back(attention::conditional_spatial_query(lam, it->second));
  }
  return out;
}

// ---- WalkerStats ----------------------------------------------------------------

void WalkerStats::Histogram::add(double v) {
  ++total;
  if (v >= -1.0 && v <= 1.0) ++in_range;
  if (v < kHistLo) {
    ++underflow;
  } else if (v >= kHistHi) {
    ++overflow;
  } else {
    auto bin = static_cast<std::size_t>((v - kHistLo) / (kHistHi - kHistLo) * static_cast<double>(kBins));
    counts[std::min(bin, kBins - 1)]++;
  }
}

void WalkerStats::Histogram::merge(const Histogram& o) {
  for (std::size_t i = 0; i < kBins; ++i) counts[i] += o.counts[i];
  underflow += o.underflow;
  overflow += o.overflow;
  in_range += o.in_range;
  total += o.total;
}

nlohmann::json WalkerStats::Histogram::to_json() const {
  std::vector<double> edges(kBins + 1);
  for (std::size_t i = 0; i <= kBins; ++i) {
    edges[i] = kHistLo + (kHistHi - kHistLo) * static_cast<double>(i) / static_cast<double>(kBins);
  }
  return {{"bin_edges", edges}, {"counts", counts}, {"underflow", underflow}, {"overflow", overflow}};
}

void WalkerStats::record(std::size_t stage, std::span<const double> z) {
  if (z.size() % 2 != 0) throw nx::ShapeError("WalkerStats::record: odd number of walker components");
  auto& s = stages_[stage];
  for (std::size_t i = 0; i < z.size(); i += 2) {
    s.x.add(z[i]);
    s.y.add(z[i + 1]);
  }
}

void WalkerStats::merge(const WalkerStats& other) {
  for (const auto& [stage, h] : other.stages_) {
    auto& mine = stages_[stage];
    mine.x.merge(h.x);
    mine.y.merge(h.y);
  }
}

double WalkerStats::fraction_in_range() const {
  if (stages_.empty()) throw std::invalid_argument("WalkerStats: no walkers recorded");
  std::size_t in = 0, total = 0;
  for (const auto& [stage, h] : stages_) {
    in += h.x.in_range + h.y.in_range;
    total += h.x.total + h.y.total;
  }
  return static_cast<double>(in) / static_cast<double>(total);
}

double WalkerStats::fraction_in_range(std::size_t stage) const {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw std::invalid_argument("WalkerStats: stage " + std::to_string(stage) + " not recorded");
  const auto& h = it->second;
  return static_cast<double>(h.x.in_range + h.y.in_range) / static_cast<double>(h.x.total + h.y.total);
}

nlohmann::json WalkerStats::to_json() const {
  if (stages_.empty()) throw std::invalid_argument("WalkerStats: no walkers recorded");
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [stage, h] : stages_) {
    stages[std::to_string(stage)] = {
        {"fraction_in_range", fraction_in_range(stage)},
        {"fraction_x_in_range", static_cast<double>(h.x.in_range) / static_cast<double>(h.x.total)},
        {"fraction_y_in_range", static_cast<double>(h.y.in_range) / static_cast<double>(h.y.total)},
        {"count", h.x.total},
        {"histogram_x", h.x.to_json()},
        {"histogram_y", h.y.to_json()},
    };
  }
  return {{"mode", mode_}, {"stages", stages}, {"overall", {{"fraction_in_range", fraction_in_range()}}}};
}

}  // namespace boxagent::box_agent
