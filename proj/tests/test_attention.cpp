#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "boxagent/attention.hpp"
#include "boxagent/optim.hpp"

using namespace boxagent;
using namespace boxagent::attention;
namespace nx = boxagent::numerics;
using nx::Tensor;

TEST_CASE("sinusoidal embedding at the origin and its self inner product") {
  const auto e = sinusoidal_embed(0.0, 0.0, 64);
  for (std::size_t i = 0; i < 64; i += 2) {
    CHECK(e[i] == 0.0);
    CHECK(e[i + 1] == 1.0);
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const auto v = sinusoidal_embed(u(rng), u(rng), 32);
    double s = 0;
    for (double x : v) s += x * x;
    CHECK(s == doctest::Approx(16.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(sinusoidal_embed(0.1, 0.2, 30), nx::ShapeError);
}

TEST_CASE("sinusoidal embedding layout matches the closed form") {
  const double x = 0.3, y = 0.8, t = 20.0;
  const std::size_t d = 16;
  const auto e = sinusoidal_embed(x, y, d, t);
  for (std::size_t i = 0; i < d / 4; ++i) {
    const double w = std::pow(t, 2.0 * static_cast<double>(i) / static_cast<double>(d / 2));
    CHECK(e[2 * i] == doctest::Approx(std::sin(2 * std::numbers::pi * x / w)));
    CHECK(e[2 * i + 1] == doctest::Approx(std::cos(2 * std::numbers::pi * x / w)));
    CHECK(e[d / 2 + 2 * i] == doctest::Approx(std::sin(2 * std::numbers::pi * y / w)));
    CHECK(e[d / 2 + 2 * i + 1] == doctest::Approx(std::cos(2 * std::numbers::pi * y / w)));
  }
  const Tensor pts = Tensor::parameter({2, 2}, {x, y, 0.1, 0.9});
  const Tensor et = sinusoidal_embed(pts, d, t);
  for (std::size_t i = 0; i < d; ++i) CHECK(et[i] == e[i]);
  const std::vector<Tensor> ps{pts};
  auto loss = [&] { return nx::sum(nx::mul(sinusoidal_embed(pts, d, t), Tensor::full({2, d}, 0.37))); };
  CHECK(nx::finite_difference_check(loss, ps, 1e-6).max_rel_error < 1e-7);
}

TEST_CASE("lambda and the conditional spatial query") {
  Rng rng(2);
  nx::ParameterSet params;
  auto ffn = layers::Mlp2::create(params, "lam", 8, 8, 8, rng);
  Tensor w1 = ffn.first.weight, w2 = ffn.second.weight, b2 = ffn.second.bias;
  for (auto& v : w1.mutable_values()) v = 0;
  for (auto& v : w2.mutable_values()) v = 0;
  for (auto& v : b2.mutable_values()) v = 1;
  const Tensor f = Tensor::constant({3, 8}, std::vector<double>(24, 0.7));
  const Tensor lam = lambda_from_embedding(f, ffn);
  for (double v : lam.values()) CHECK(v == 1.0);
  const Tensor p = Tensor::constant({3, 8}, std::vector<double>(24, -0.3));
  const Tensor q = conditional_spatial_query(lam, p);
  CHECK(std::equal(q.values().begin(), q.values().end(), p.values().begin()));
  const Tensor z = conditional_spatial_query(Tensor::zeros({3, 8}), p);
  for (double v : z.values()) CHECK(v == 0.0);
  const Tensor h = conditional_spatial_query(Tensor::constant({1, 2}, {2, 0.5}), Tensor::constant({1, 2}, {0.3, -0.4}));
  CHECK(h[0] == doctest::Approx(0.6));
  CHECK(h[1] == doctest::Approx(-0.2));
  CHECK_THROWS_AS(lambda_from_embedding(Tensor::zeros({3, 5}), ffn), nx::ShapeError);
}

TEST_CASE("cross-attention weights") {
  const HeadLayout one{1, 4};
  SUBCASE("zero queries give uniform weights") {
    CrossAttentionInputs in{Tensor::zeros({2, 4}), Tensor::constant({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3}),
                            {Tensor::zeros({2, 4})}, Tensor::constant({3, 4}, {1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 1, 1}),
                            Tensor::zeros({3, 4})};
    const auto out = cross_attention(in, one);
    for (double v : out.weights[0].values()) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("identical keys give uniform weights") {
    CrossAttentionInputs in{Tensor::constant({1, 4}, {0.3, -1, 2, 0.5}), Tensor::full({5, 4}, 0.7),
                            {Tensor::constant({1, 4}, {1, 2, 3, 4})}, Tensor::full({5, 4}, -0.2),
                            Tensor::zeros({5, 4})};
    const auto out = cross_attention(in, one);
    for (double v : out.weights[0].values()) CHECK(v == doctest::Approx(0.2));
  }
  SUBCASE("two keys with logits 0 and ln 3") {
    // Logit scale is 1/sqrt(2 * 4); put ln 3 * sqrt(8) into the content term.
    const double t = std::log(3.0) * std::sqrt(8.0);
    CrossAttentionInputs in{Tensor::constant({1, 4}, {1, 0, 0, 0}), Tensor::constant({2, 4}, {0, 0, 0, 0, t, 0, 0, 0}),
                            {Tensor::zeros({1, 4})}, Tensor::zeros({2, 4}), Tensor::zeros({2, 4})};
    const auto w = cross_attention(in, one).weights[0];
    CHECK(w[0] == doctest::Approx(0.25));
    CHECK(w[1] == doctest::Approx(0.75));
  }
}

TEST_CASE("cross-attention: shared spatial query equals per-head copies, and rows sum to 1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  auto rnd = [&](nx::Shape s) {
    std::vector<double> v(nx::numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor::parameter(s, v);
  };
  const HeadLayout layout{4, 16};
  const Tensor cq = rnd({5, 16}), ck = rnd({9, 16}), sq = rnd({5, 16}), sk = rnd({9, 16}), v = rnd({9, 16});
  const auto shared = cross_attention({cq, ck, {sq}, sk, v}, layout);
  const auto copies = cross_attention({cq, ck, {sq, sq, sq, sq}, sk, v}, layout);
  CHECK(std::equal(shared.output.values().begin(), shared.output.values().end(), copies.output.values().begin()));
  for (const auto& w : shared.weights) {
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < 9; ++k) s += w[r * 9 + k];
      CHECK(s == doctest::Approx(1.0));
    }
  }
  const std::vector<Tensor> ps{cq, ck, sq, sk, v};
  std::vector<double> mix(5 * 16);
  for (auto& x : mix) x = u(rng);
  const Tensor m = Tensor::constant({5, 16}, mix);
  const Tensor sq2 = rnd({5, 16});
  const std::vector<Tensor> ps2{cq, ck, sq, sq2, sk, v};
  auto loss = [&] { return nx::sum(nx::mul(cross_attention({cq, ck, {sq, sq2, sq, sq2}, sk, v}, layout).output, m)); };
  CHECK(nx::finite_difference_check(loss, ps2, 1e-6).max_rel_error < 1e-7);
  CHECK_THROWS_AS(cross_attention({cq, ck, {sq, sq}, sk, v}, layout), nx::ShapeError);
}

TEST_CASE("WH modulation") {
  CHECK(wh_modulate(1, 2, {0.5, 2.0, 1.0, 1.0, WhmMode::original}, 4) == doctest::Approx(2.25));
  CHECK(wh_modulate(1, 2, {1, 1, 1, 1, WhmMode::off}, 4) == 1.5);
  CHECK(wh_modulate(0.3, -0.7, {0.2, 0.4, 0.2, 0.4, WhmMode::original}, 16) ==
        wh_modulate(0.3, -0.7, {}, 16));
  CHECK(wh_modulate(0.3, -0.7, {0.5, 0.5, 0.9, 0.1, WhmMode::scale_free}, 16) == wh_modulate(0.3, -0.7, {}, 16));
  CHECK_THROWS(wh_modulate(1, 1, {1, 1, 0, 1, WhmMode::original}, 4));
  CHECK(parse_whm_mode("scale-free") == WhmMode::scale_free);
  CHECK_THROWS(parse_whm_mode("oval"));
}

TEST_CASE("tensor modulation scales the x-half and y-half") {
  const Tensor q = Tensor::constant({1, 4}, {1, 2, 3, 4});
  const Tensor ref = Tensor::constant({1, 2}, {0.2, 0.9});
  const Tensor box = Tensor::constant({1, 2}, {0.4, 0.3});
  const Tensor o = modulate_spatial_query(q, ref, box, WhmMode::original);
  CHECK(o[0] == doctest::Approx(0.5));
  CHECK(o[1] == doctest::Approx(1.0));
  CHECK(o[2] == doctest::Approx(9.0));
  CHECK(o[3] == doctest::Approx(12.0));
  const Tensor s = modulate_spatial_query(q, ref, box, WhmMode::scale_free);
  CHECK(s[0] == doctest::Approx(0.4));
  CHECK(s[3] == doctest::Approx(7.2));
  CHECK(modulate_spatial_query(q, ref, box, WhmMode::off).node() == q.node());
}
