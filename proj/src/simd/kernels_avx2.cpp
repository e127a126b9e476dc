// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so nothing here may run on a machine without AVX2.

#include <immintrin.h>

#include <cmath>

#include "boxagent/simd/kernels.hpp"

namespace boxagent::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4x8 register block: four rows of C, two ymm columns each.
inline void block_4x8(const GemmArgs& g, std::size_t i, std::size_t j) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    double* crow = g.c + (i + r) * g.ldc + j;
    if (g.accumulate) {
      acc[r][0] = _mm256_loadu_pd(crow);
      acc[r][1] = _mm256_loadu_pd(crow + 4);
    } else {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
  }
  const double* a0 = g.a + i * g.a_row;
  for (std::size_t p = 0; p < g.k; ++p) {
    const double* brow = g.b + p * g.ldb + j;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    const double* ap = a0 + p * g.a_col;
    for (int r = 0; r < 4; ++r) {
      const __m256d a = _mm256_broadcast_sd(ap + r * g.a_row);
      acc[r][0] = _mm256_fmadd_pd(a, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(a, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    double* crow = g.c + (i + r) * g.ldc + j;
    _mm256_storeu_pd(crow, acc[r][0]);
    _mm256_storeu_pd(crow + 4, acc[r][1]);
  }
}

// One row of C over columns [j0, n): 4-wide vectors then a scalar tail.
inline void row_tail(const GemmArgs& g, std::size_t i, std::size_t j0) {
  double* crow = g.c + i * g.ldc;
  const double* arow = g.a + i * g.a_row;
  std::size_t j = j0;
  for (; j + 4 <= g.n; j += 4) {
    __m256d acc = g.accumulate ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
    for (std::size_t p = 0; p < g.k; ++p) {
      const __m256d a = _mm256_broadcast_sd(arow + p * g.a_col);
      acc = _mm256_fmadd_pd(a, _mm256_loadu_pd(g.b + p * g.ldb + j), acc);
    }
    _mm256_storeu_pd(crow + j, acc);
  }
  for (; j < g.n; ++j) {
    double acc = g.accumulate ? crow[j] : 0.0;
    for (std::size_t p = 0; p < g.k; ++p) acc = std::fma(arow[p * g.a_col], g.b[p * g.ldb + j], acc);
    crow[j] = acc;
  }
}

void gemm_avx2(const GemmArgs& g) {
  const std::size_t n8 = g.n - g.n % 8;
  std::size_t i = 0;
  for (; i + 4 <= g.m; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) block_4x8(g, i, j);
    for (std::size_t r = 0; r < 4; ++r) row_tail(g, i + r, n8);
  }
  for (; i < g.m; ++i) row_tail(g, i, 0);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

}  // namespace

namespace detail {
const KernelTable avx2_table{Isa::avx2, gemm_avx2, dot_avx2, axpy_avx2, mul_avx2, add_avx2};
}

}  // namespace boxagent::simd
