#include <doctest.h>

#include <cmath>
#include <random>

#include "boxagent/box_agent.hpp"
#include "boxagent/optim.hpp"

using namespace boxagent;
using namespace boxagent::box_agent;
namespace nx = boxagent::numerics;
using nx::Tensor;

TEST_CASE("mode names round-trip") {
  for (RefMode m : all_ref_modes()) CHECK(parse_ref_mode(to_string(m)) == m);
  CHECK_THROWS(parse_ref_mode("agent"));
  CHECK(uses_walker(RefMode::agent_sigma));
  CHECK_FALSE(uses_walker(RefMode::agent_fixed_grid));
  CHECK_FALSE(uses_walker(RefMode::center_whm));
}

TEST_CASE("walker head") {
  Rng rng(1);
  nx::ParameterSet ps;
  auto head = create_walker_head(ps, "w", 256, 8, rng);
  CHECK(ps.scalar_count() == 4112);
  CHECK(walker_parameter_count(256, 8) == 4112);
  Tensor w = head.weight, b = head.bias;
  for (auto& v : w.mutable_values()) v = 0;
  for (auto& v : b.mutable_values()) v = 0;
  const Tensor z = walker_from_embedding(Tensor::full({3, 256}, 0.4), head);
  CHECK(z.shape() == nx::Shape{3, 16});
  for (double v : z.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(walker_from_embedding(Tensor::zeros({3, 255}), head), nx::ShapeError);
}

TEST_CASE("agent points, scalar form") {
  const geometry::BoxCCWH box{0.5, 0.4, 0.2, 0.4};
  const double z[2] = {1.0, -1.0};
  const auto p = agent_points(box, z, 1, RefMode::agent_unnormalized)[0];
  CHECK(p.x == doctest::Approx(0.6));
  CHECK(p.y == doctest::Approx(0.2));
  const auto n = agent_points(box, z, 1, RefMode::agent_noscale)[0];
  CHECK(n.x == doctest::Approx(1.5));
  CHECK(n.y == doctest::Approx(-0.6));
  const auto t = agent_points(box, z, 1, RefMode::agent_tanh)[0];
  CHECK(t.x == doctest::Approx(0.5 + std::tanh(1.0) * 0.1));
  const auto s = agent_points(box, z, 1, RefMode::agent_sigma)[0];
  CHECK(s.x == doctest::Approx(1.0 / (1.0 + std::exp(-(std::log(0.5 / 0.5) + 1.0)))));
  const double zero[2] = {0, 0};
  const auto s0 = agent_points(box, zero, 1, RefMode::agent_sigma)[0];
  CHECK(s0.x == doctest::Approx(0.5));
  CHECK(s0.y == doctest::Approx(0.4));
  const auto c = agent_points(box, {}, 3, RefMode::center);
  for (const auto& q : c) CHECK((q.x == 0.5 && q.y == 0.4));
  CHECK_THROWS_AS(agent_points(box, z, 2, RefMode::agent_unnormalized), nx::ShapeError);
}

TEST_CASE("fixed grid covers the eight outer cell centers") {
  const auto& g = fixed_grid_offsets();
  REQUIRE(g.size() == 8);
  const geometry::BoxCCWH box{0.5, 0.5, 0.3, 0.6};
  const auto pts = agent_points(box, {}, 10, RefMode::agent_fixed_grid);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(pts[i].x == doctest::Approx(0.5 + g[i % 8].x * 0.3));
    CHECK(pts[i].y == doctest::Approx(0.5 + g[i % 8].y * 0.6));
    CHECK(std::abs(pts[i].x - 0.5) <= 0.1 + 1e-12);
  }
}

TEST_CASE("tensor agent points match the scalar form in every mode") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> side(0.05, 0.5), pos(0.3, 0.7), zd(-2, 2);
  const std::size_t n = 5, heads = 4;
  std::vector<double> bv, zv;
  for (std::size_t i = 0; i < n; ++i) bv.insert(bv.end(), {pos(rng), pos(rng), side(rng), side(rng)});
  for (std::size_t i = 0; i < n * 2 * heads; ++i) zv.push_back(zd(rng));
  const Tensor boxes = Tensor::parameter({n, 4}, bv);
  const Tensor z = Tensor::parameter({n, 2 * heads}, zv);
  for (RefMode m : all_ref_modes()) {
    const auto pts = agent_points(boxes, uses_walker(m) ? z : Tensor(), heads, m);
    REQUIRE(pts.size() == heads);
    for (std::size_t q = 0; q < n; ++q) {
      const geometry::BoxCCWH b{bv[4 * q], bv[4 * q + 1], bv[4 * q + 2], bv[4 * q + 3]};
      const auto ref = agent_points(b, std::span<const double>(zv).subspan(q * 2 * heads, 2 * heads), heads, m);
      for (std::size_t h = 0; h < heads; ++h) {
        CHECK(pts[h][2 * q] == doctest::Approx(ref[h].x).epsilon(1e-13));
        CHECK(pts[h][2 * q + 1] == doctest::Approx(ref[h].y).epsilon(1e-13));
      }
    }
    if (m == RefMode::center || m == RefMode::center_whm) continue;
    const std::vector<Tensor> ps{boxes, z};
    auto loss = [&] {
      Tensor acc = Tensor::scalar(0.0);
      for (const auto& p : agent_points(boxes, uses_walker(m) ? z : Tensor(), heads, m))
        acc = nx::add(acc, nx::sum(nx::mul(p, p)));
      return acc;
    };
    CHECK(nx::finite_difference_check(loss, ps, 1e-6).max_rel_error < 1e-7);
  }
}

TEST_CASE("per-head spatial queries") {
  const Tensor lam = Tensor::full({2, 8}, 1.0);
  const Tensor origin = Tensor::zeros({2, 2});
  const Tensor agents[] = {origin, origin, origin};
  const auto q = per_head_spatial_queries(lam, agents, 8, 20.0);
  REQUIRE(q.size() == 3);
  for (const auto& t : q) {
    for (std::size_t i = 0; i < 16; i += 2) {
      CHECK(t[i] == 0.0);
      CHECK(t[i + 1] == 1.0);
    }
  }
  // Separate tensors at the same point give identical queries.
  const Tensor a = Tensor::constant({1, 2}, {0.3, 0.6}), b = Tensor::constant({1, 2}, {0.3, 0.6});
  const Tensor two[] = {a, b};
  const auto same = per_head_spatial_queries(Tensor::full({1, 8}, 0.5), two, 8, 20.0);
  CHECK(std::equal(same[0].values().begin(), same[0].values().end(), same[1].values().begin()));
  // Per-head lambda uses its own slice.
  std::vector<double> lv(16, 1.0);
  for (std::size_t i = 8; i < 16; ++i) lv[i] = 2.0;
  const auto per = per_head_spatial_queries(Tensor::constant({1, 16}, lv), two, 8, 20.0);
  for (std::size_t i = 0; i < 8; ++i) CHECK(per[1][i] == 2.0 * per[0][i]);
}

TEST_CASE("walker statistics") {
  WalkerStats zero("agent-unnormalized");
  const std::vector<double> zeros(16, 0.0);
  zero.record(0, zeros);
  CHECK(zero.fraction_in_range() == 1.0);
  WalkerStats s("agent-unnormalized");
  const std::vector<double> z{-2, 0, 0.5, 3};
  s.record(1, z);
  CHECK(s.fraction_in_range() == 0.5);
  CHECK(s.fraction_in_range(1) == 0.5);
  CHECK_THROWS(s.fraction_in_range(0));
  const auto j = s.to_json();
  CHECK(j["mode"] == "agent-unnormalized");
  const auto& hx = j["stages"]["1"]["histogram_x"];
  CHECK(hx["bin_edges"].size() == 51);
  CHECK(hx["counts"].size() == 50);
  CHECK(j["stages"]["1"]["fraction_x_in_range"] == 0.5);
  CHECK(j["stages"]["1"]["count"] == 2);
  CHECK(j["stages"]["1"]["histogram_y"]["overflow"] == 1);
  s.merge(zero);
  CHECK(s.fraction_in_range() == doctest::Approx(18.0 / 20.0));
  CHECK_THROWS(WalkerStats("x").to_json());
}
