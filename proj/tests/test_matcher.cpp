#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "boxagent/matcher.hpp"
#include "boxagent/ops.hpp"
#include "boxagent/optim.hpp"

using namespace boxagent;
using namespace boxagent::matcher;
namespace nx = boxagent::numerics;
using nx::Tensor;

namespace {

// Minimum over all permutations via std::next_permutation, independent of
// the recursive brute_force.
double permutation_minimum(const CostMatrix& c) {
  std::vector<std::size_t> preds(c.preds);
  std::iota(preds.begin(), preds.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (std::size_t t = 0; t < c.targets; ++t) s += c(preds[t], t);
    best = std::min(best, s);
  } while (std::next_permutation(preds.begin(), preds.end()));
  return best;
}

CostMatrix random_matrix(std::mt19937_64& rng, std::size_t p, std::size_t t) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(p * t);
  for (auto& x : v) x = u(rng);
  return {p, t, v};
}

bool valid(const Assignment& a, std::size_t p, std::size_t t) {
  if (a.pairs.size() != t) return false;
  std::vector<char> used(p, 0);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    if (a.pairs[i].second != i || a.pairs[i].first >= p || used[a.pairs[i].first]) return false;
    used[a.pairs[i].first] = 1;
  }
  return true;
}

}  // namespace

TEST_CASE("small assignments") {
  const CostMatrix one(1, 1, {3.5});
  CHECK(hungarian(one).pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});
  const CostMatrix two(2, 2, {1, 2, 2, 1});
  const auto b = brute_force(two);
  CHECK(b.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  CHECK(total_cost(two, b) == 2.0);
  std::vector<double> diag(25, 1000.0);
  for (std::size_t i = 0; i < 5; ++i) diag[i * 5 + i] = 1000.0 - 1000.0;
  const auto h = hungarian(CostMatrix(5, 5, diag));
  for (std::size_t i = 0; i < 5; ++i) CHECK(h.pairs[i] == std::pair<std::size_t, std::size_t>{i, i});
  CHECK(hungarian(CostMatrix(3, 0, {})).pairs.empty());
}

TEST_CASE("preconditions") {
  CHECK_THROWS(hungarian(CostMatrix(2, 3, std::vector<double>(6, 0.0))));
  CHECK_THROWS(brute_force(CostMatrix(2, 3, std::vector<double>(6, 0.0))));
  CHECK_THROWS(brute_force(CostMatrix(9, 9, std::vector<double>(81, 0.0))));
  CHECK_THROWS(CostMatrix(2, 2, {1, 2, 3}));
  CHECK_THROWS(CostMatrix(1, 1, {std::nan("")}));
}

TEST_CASE("hungarian and brute force agree with a permutation oracle on 5x5 to 7x7") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> side(5, 7);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = side(rng);
    const auto c = random_matrix(rng, n, n);
    const auto h = hungarian(c), b = brute_force(c);
    REQUIRE(valid(h, n, n));
    REQUIRE(valid(b, n, n));
    CHECK(total_cost(c, h) == total_cost(c, b));
    CHECK(total_cost(c, b) == doctest::Approx(permutation_minimum(c)).epsilon(1e-14));
  }
}

TEST_CASE("rectangular matrices and shift invariance") {
  std::mt19937_64 rng(43);
  for (int i = 0; i < 300; ++i) {
    const std::size_t t = 1 + rng() % 5, p = t + rng() % 4;
    const auto c = random_matrix(rng, p, t);
    const auto h = hungarian(c), b = brute_force(c);
    REQUIRE(valid(h, p, t));
    CHECK(total_cost(c, h) == total_cost(c, b));
    // Adding a per-target constant shifts every assignment's total equally.
    std::vector<double> shifted = c.values;
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t k = 0; k < t; ++k) shifted[r * t + k] += 0.25 * static_cast<double>(k + 1);
    CHECK(brute_force(CostMatrix(p, t, shifted)).pairs == b.pairs);
    std::vector<double> global = c.values;
    for (auto& x : global) x += 3.0;
    CHECK(brute_force(CostMatrix(p, t, global)).pairs == b.pairs);
  }
}

TEST_CASE("ties resolve deterministically") {
  const CostMatrix flat(4, 2, std::vector<double>(8, 1.0));
  const auto b = brute_force(flat);
  CHECK(b.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  const auto h1 = hungarian(flat), h2 = hungarian(flat);
  CHECK(h1.pairs == h2.pairs);
  CHECK(total_cost(flat, h1) == 2.0);
}

namespace {

decoder::StagePrediction prediction(std::vector<double> boxes, std::vector<double> logits, std::size_t width) {
  const std::size_t n = boxes.size() / 4;
  return {Tensor::parameter({n, 4}, std::move(boxes)), Tensor::parameter({n, width}, std::move(logits))};
}

}  // namespace

TEST_CASE("set loss hand example") {
  const auto pred = prediction({0.5, 0.5, 0.2, 0.2}, {0.0, 0.0}, 2);
  Targets t{{{0.5, 0.5, 0.4, 0.4}}, {0}};
  const LossWeights w{0.0, 1.0, 1.0, 0.1};
  const auto terms = stage_loss(pred, t, w);
  CHECK(terms.l1 == doctest::Approx(0.4));
  CHECK(terms.giou == doctest::Approx(0.75));
  CHECK(terms.total.item() == doctest::Approx(1.15));
}

TEST_CASE("set loss limits") {
  SUBCASE("exact, confident predictions give zero box terms") {
    const auto pred = prediction({0.3, 0.4, 0.2, 0.2, 0.7, 0.6, 0.1, 0.3, 0.5, 0.5, 0.1, 0.1},
                                 {20, 0, 0, 0, 20, 0, 0, 0, 20}, 3);
    Targets t{{{0.7, 0.6, 0.1, 0.3}, {0.3, 0.4, 0.2, 0.2}}, {1, 0}};
    const auto terms = stage_loss(pred, t, {});
    CHECK(terms.l1 == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(terms.giou == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(terms.cls < 1e-7);
  }
  SUBCASE("zero weights give zero loss") {
    const auto pred = prediction({0.3, 0.4, 0.2, 0.2}, {1, 2, 3}, 3);
    Targets t{{{0.6, 0.6, 0.3, 0.3}}, {1}};
    CHECK(stage_loss(pred, t, {0, 0, 0, 0.1}).total.item() == 0.0);
  }
  SUBCASE("empty targets supervise everything toward no-object") {
    const auto pred = prediction({0.3, 0.4, 0.2, 0.2, 0.6, 0.6, 0.1, 0.1}, {0, 0, 0, 1, 2, 3}, 3);
    const auto terms = stage_loss(pred, {}, {});
    const double l0 = -(0 - std::log(3.0));
    const double l1 = -(3 - std::log(std::exp(1) + std::exp(2) + std::exp(3)));
    CHECK(terms.cls == doctest::Approx((l0 + l1) / 2));
    CHECK(terms.l1 == 0.0);
    CHECK(terms.total.item() == doctest::Approx(2 * (l0 + l1) / 2));
  }
}

TEST_CASE("matching cost matches its definition") {
  const auto pred = prediction({0.3, 0.4, 0.2, 0.2, 0.6, 0.6, 0.3, 0.1}, {0.5, -1, 0.2, 2, 0, 1}, 3);
  Targets t{{{0.35, 0.4, 0.2, 0.3}}, {1}};
  const LossWeights w{2, 5, 2, 0.1};
  const auto c = matching_cost(pred, t, w);
  REQUIRE(c.preds == 2);
  const double z0 = std::exp(0.5) + std::exp(-1) + std::exp(0.2);
  const geometry::BoxCCWH p0{0.3, 0.4, 0.2, 0.2}, tb{0.35, 0.4, 0.2, 0.3};
  const double expect = 2 * -(std::exp(-1) / z0) + 5 * geometry::box_l1(p0, tb) +
                        2 * (1 - geometry::giou(geometry::to_corners(p0), geometry::to_corners(tb)));
  CHECK(c(0, 0) == doctest::Approx(expect));
}

TEST_CASE("set loss gradients with the matching held fixed") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0.3, 0.7), side(0.1, 0.3), u(-1, 1);
  std::vector<std::vector<double>> bs(2), ls(2);
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 5; ++i) bs[s].insert(bs[s].end(), {pos(rng), pos(rng), side(rng), side(rng)});
    for (int i = 0; i < 5 * 4; ++i) ls[s].push_back(u(rng));
  }
  const std::vector<decoder::StagePrediction> stages{prediction(bs[0], ls[0], 4), prediction(bs[1], ls[1], 4)};
  Targets t{{{0.4, 0.5, 0.2, 0.2}, {0.6, 0.4, 0.1, 0.3}, {0.5, 0.5, 0.3, 0.1}}, {0, 2, 1}};
  const LossWeights w;
  const auto fixed = match_stages(stages, t, w);
  CHECK(set_loss(stages, t, w).item() == set_loss(stages, t, w, &fixed).item());
  const std::vector<Tensor> ps{stages[0].boxes, stages[0].class_logits, stages[1].boxes, stages[1].class_logits};
  const auto r = nx::finite_difference_check([&] { return set_loss(stages, t, w, &fixed); }, ps, 1e-6);
  CHECK(r.max_rel_error < 1e-6);
  CHECK_THROWS(set_loss({}, t, w));
}
