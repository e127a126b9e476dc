#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "boxagent/simd/kernels.hpp"

using namespace boxagent::simd;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Textbook triple loop, independent of both kernel tables.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                               std::size_t a_row, std::size_t a_col, const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * a_row + p * a_col]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

}  // namespace

TEST_CASE("scalar gemm matches the naive product, plain and transposed A") {
  std::mt19937_64 rng(1);
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {9, 17, 4}, {16, 64, 64}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], n = sh[1], k = sh[2];
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    for (bool transposed : {false, true}) {
      const std::size_t a_row = transposed ? 1 : k, a_col = transposed ? m : 1;
      const auto ref = naive_gemm(m, n, k, a, a_row, a_col, b);
      std::vector<double> c(m * n, 0.0);
      kernels(Isa::scalar).gemm({m, n, k, a.data(), a_row, a_col, b.data(), n, c.data(), n, false});
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("AVX2 kernels agree with the scalar reference") {
  if (!isa_supported(Isa::avx2)) {
    MESSAGE("AVX2 not available on this CPU; equivalence test skipped");
    return;
  }
  std::mt19937_64 rng(2);
  const auto& s = kernels(Isa::scalar);
  const auto& v = kernels(Isa::avx2);
  for (std::size_t m : {1u, 3u, 4u, 5u, 13u, 16u}) {
    for (std::size_t n : {1u, 7u, 8u, 9u, 33u, 64u}) {
      for (std::size_t k : {1u, 2u, 9u, 64u}) {
        for (bool transposed : {false, true}) {
          for (bool acc : {false, true}) {
            const auto a = random_vec(m * k, rng);
            const auto b = random_vec(k * n, rng);
            const auto init = random_vec(m * n, rng);
            const std::size_t a_row = transposed ? 1 : k, a_col = transposed ? m : 1;
            auto cs = init, cv = init;
            s.gemm({m, n, k, a.data(), a_row, a_col, b.data(), n, cs.data(), n, acc});
            v.gemm({m, n, k, a.data(), a_row, a_col, b.data(), n, cv.data(), n, acc});
            double worst = 0;
            for (std::size_t i = 0; i < cs.size(); ++i) worst = std::max(worst, std::abs(cs[i] - cv[i]));
            // Only fused-multiply-add rounding differs.
            CHECK(worst <= 1e-13 * static_cast<double>(k));
          }
        }
      }
    }
  }
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 31u, 64u, 1001u}) {
    const auto x = random_vec(n, rng), y = random_vec(n, rng);
    CHECK(v.dot(x.data(), y.data(), n) == doctest::Approx(s.dot(x.data(), y.data(), n)).epsilon(1e-12));
    auto ys = y, yv = y;
    s.axpy(0.75, x.data(), ys.data(), n);
    v.axpy(0.75, x.data(), yv.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yv[i]).epsilon(1e-15));
    std::vector<double> ms(n), mv(n), as(n), av(n);
    s.mul(x.data(), y.data(), ms.data(), n);
    v.mul(x.data(), y.data(), mv.data(), n);
    s.add(x.data(), y.data(), as.data(), n);
    v.add(x.data(), y.data(), av.data(), n);
    CHECK(ms == mv);
    CHECK(as == av);
  }
}

TEST_CASE("gemm row results do not depend on how many rows are computed together") {
  std::mt19937_64 rng(3);
  for (Isa isa : {Isa::scalar, Isa::avx2}) {
    if (!isa_supported(isa)) continue;
    const auto& t = kernels(isa);
    const std::size_t m = 13, n = 37, k = 64;
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> all(m * n);
    t.gemm({m, n, k, a.data(), k, 1, b.data(), n, all.data(), n, false});
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> row(n);
      t.gemm({1, n, k, a.data() + i * k, k, 1, b.data(), n, row.data(), n, false});
      CHECK(std::equal(row.begin(), row.end(), all.begin() + static_cast<std::ptrdiff_t>(i * n)));
    }
  }
}

TEST_CASE("ISA selection") {
  CHECK(isa_supported(Isa::scalar));
  CHECK(isa_name(Isa::scalar) == "scalar");
  const Isa before = active_isa();
  set_active_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  CHECK(kernels().isa == Isa::scalar);
  set_active_isa(before);
}
