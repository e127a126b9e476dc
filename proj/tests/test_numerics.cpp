#include <doctest.h>

#include <cmath>
#include <random>

#include "boxagent/ops.hpp"
#include "boxagent/optim.hpp"

using namespace boxagent::numerics;

TEST_CASE("matmul by the identity returns the matrix") {
  const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor a = Tensor::constant({3, 3}, {1.5, -2, 3, 4, 5.25, -6, 7, 8, 9.125});
  const Tensor p = matmul(eye, a);
  CHECK(std::equal(p.values().begin(), p.values().end(), a.values().begin()));
}

TEST_CASE("softmax and sigmoid values") {
  const Tensor s = softmax(Tensor::constant({3}, {0, 0, 0}));
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
  const Tensor g = sigmoid(Tensor::constant({2}, {0, 2}));
  CHECK(g[0] == 0.5);
  CHECK(g[1] == doctest::Approx(0.8807970779778823).epsilon(1e-15));
  // Large magnitudes stay finite.
  const Tensor big = sigmoid(Tensor::constant({2}, {-800, 800}));
  CHECK(big[0] == 0.0);
  CHECK(big[1] == 1.0);
  const Tensor ls = log_softmax(Tensor::constant({2}, {0, std::log(3.0)}));
  CHECK(std::exp(ls[0]) == doctest::Approx(0.25));
  CHECK(std::exp(ls[1]) == doctest::Approx(0.75));
}

TEST_CASE("product rule and constant-function gradients") {
  const Tensor x = Tensor::parameter({1}, {3.0});
  const Tensor y = Tensor::parameter({1}, {5.0});
  const auto g = backward(sum(mul(x, y)));
  CHECK(g.of(x)[0] == 5.0);
  CHECK(g.of(y)[0] == 3.0);

  const Tensor v = Tensor::parameter({4}, {0.1, -2.0, 3.0, 0.7});
  const auto gs = backward(sum(softmax(v)));
  for (double d : gs.of(v)) CHECK(std::abs(d) < 1e-15);
}

TEST_CASE("untouched leaves get exact zeros") {
  const Tensor a = Tensor::parameter({2}, {1, 2});
  const Tensor b = Tensor::parameter({2}, {3, 4});
  const auto g = backward(sum(a));
  CHECK_FALSE(g.touched(b));
  CHECK(g.of(b) == std::vector<double>{0, 0});
}

TEST_CASE("backward rejects non-scalar roots and shape errors are reported") {
  const Tensor a = Tensor::parameter({2}, {1, 2});
  CHECK_THROWS_AS(backward(a), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(Tensor::constant({2}, {1.0, NAN}), NumericError);
  CHECK_THROWS_AS(log(Tensor::constant({1}, {0.0})), NumericError);
}

TEST_CASE("broadcasting follows trailing alignment") {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row = Tensor::constant({3}, {10, 20, 30});
  const Tensor col = Tensor::constant({2, 1}, {100, 200});
  const Tensor r = add(a, row);
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{11, 22, 33, 14, 25, 36});
  const Tensor c = add(a, col);
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) ==
        std::vector<double>{101, 102, 103, 204, 205, 206});
  // Broadcast gradient reduces over the repeated axis.
  const Tensor p = Tensor::parameter({3}, {1, 1, 1});
  const auto g = backward(sum(mul(a, p)));
  CHECK(g.of(p) == std::vector<double>{5, 7, 9});
}

TEST_CASE("finite differences agree with backward on a sigmoid regression loss") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> w(16), x(4), t(4);
  for (auto& v : w) v = n(rng);
  for (auto& v : x) v = n(rng);
  for (auto& v : t) v = n(rng);
  const Tensor W = Tensor::parameter({4, 4}, w);
  const Tensor X = Tensor::constant({4, 1}, x);
  const Tensor T = Tensor::constant({4, 1}, t);
  auto loss = [&] {
    const Tensor d = sub(sigmoid(matmul(W, X)), T);
    return mean(mul(d, d));
  };
  const std::vector<Tensor> ps{W};
  const auto r = finite_difference_check(loss, ps, 1e-6);
  CHECK(r.consistent);
  CHECK(r.entries == 16);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("finite differences are exact for a linear loss and reject eps = 0") {
  const Tensor w = Tensor::parameter({3}, {0.3, -1.2, 2.0});
  const Tensor x = Tensor::constant({3}, {1.0, 2.0, -0.5});
  auto loss = [&] { return sum(mul(w, x)); };
  const std::vector<Tensor> ps{w};
  CHECK(finite_difference_check(loss, ps, 1e-6).max_rel_error < 1e-8);
  CHECK_THROWS(finite_difference_check(loss, ps, 0.0));
}

TEST_CASE("gradients of composite ops match finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rnd = [&](Shape s) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor::parameter(s, v);
  };
  const Tensor a = rnd({3, 4}), b = rnd({4, 5}), c = rnd({4, 5}), d = rnd({3, 4});
  const std::vector<Tensor> ps{a, b, c, d};
  auto loss = [&] {
    const Tensor m = matmul(a, b);                           // [3,5]
    const Tensor n = matmul_nt(m, c);                        // [3,4]
    const Tensor ln = layer_norm(add(n, d));
    const Tensor sm = softmax(scale(ln, 1.7));
    const Tensor parts[] = {slice(sm, 1, 0, 2), tanh(slice(ln, 1, 2, 2))};
    const Tensor cat = concat(parts, 1);
    const Tensor e = div(exp(clamp(cat, -0.9, 0.9)), add_scalar(abs(d), 1.5));
    const std::size_t rows[] = {2, 0, 2};
    const Tensor gr = gather_rows(transpose(transpose(e)), rows);
    return add(sum(mul(gr, gr)), mean(sum_last(log(add_scalar(sigmoid(reshape(n, {12})), 0.1)))));
  };
  const auto r = finite_difference_check(loss, ps, 1e-6);
  CHECK(r.consistent);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("batched matmul gradient") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> av(2 * 3 * 4), bv(2 * 4 * 2);
  for (auto& x : av) x = u(rng);
  for (auto& x : bv) x = u(rng);
  const Tensor a = Tensor::parameter({2, 3, 4}, av), b = Tensor::parameter({2, 4, 2}, bv);
  const std::vector<Tensor> ps{a, b};
  auto loss = [&] {
    const Tensor m = matmul(a, b);
    return sum(mul(m, m));
  };
  CHECK(finite_difference_check(loss, ps, 1e-6).max_rel_error < 1e-7);
}

TEST_CASE("detach and no-grad stop recording") {
  const Tensor p = Tensor::parameter({2}, {1, 2});
  CHECK_FALSE(detach(p).requires_grad());
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(mul(p, p).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(mul(p, p).requires_grad());
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    const Tensor p = Tensor::parameter({3}, {1, 2, 3});
    const std::vector<Tensor> ps{p};
    auto st = make_adam_state(ps, {});
    adam_step(ps, {{0, 0, 0}}, st);
    CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{1, 2, 3});
  }
  SUBCASE("first bias-corrected step is about lr") {
    const Tensor p = Tensor::parameter({1}, {1.0});
    const std::vector<Tensor> ps{p};
    auto st = make_adam_state(ps, {0.1, 0.9, 0.999, 1e-8});
    adam_step(ps, {{1.0}}, st);
    // 1 - 0.1 * 1 / (1 + 1e-8)
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-8));
    CHECK(st.step == 1);
  }
  SUBCASE("locality") {
    const Tensor a = Tensor::parameter({1}, {1.0}), b = Tensor::parameter({1}, {2.0});
    const std::vector<Tensor> ps{a, b};
    auto st = make_adam_state(ps, {});
    adam_step(ps, {{0.5}, {0.0}}, st);
    CHECK(a[0] != 1.0);
    CHECK(b[0] == 2.0);
  }
}

TEST_CASE("gradient clipping rescales to the limit") {
  std::vector<std::vector<double>> g{{3.0}, {4.0}};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0][0] == doctest::Approx(0.6));
  CHECK(g[1][0] == doctest::Approx(0.8));
  std::vector<std::vector<double>> h{{3.0}, {4.0}};
  clip_grad_norm(h, 0.0);
  CHECK(h[0][0] == 3.0);
}

TEST_CASE("parameter set bookkeeping") {
  ParameterSet ps;
  ps.add("a.weight", {2, 3}, std::vector<double>(6, 0.0));
  ps.add("a.bias", {3}, std::vector<double>(3, 0.0));
  ps.add("b.weight", {4}, std::vector<double>(4, 0.0));
  CHECK(ps.scalar_count() == 13);
  CHECK(ps.scalar_count_with_prefix("a.") == 9);
  CHECK(ps.contains("b.weight"));
  CHECK_THROWS(ps.add("a.bias", {1}, {0.0}));
  CHECK_THROWS(ps.get("missing"));
}
