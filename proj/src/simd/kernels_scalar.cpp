#include "boxagent/simd/kernels.hpp"

namespace boxagent::simd {
namespace {

void gemm_scalar(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    if (!g.accumulate) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0;
    }
    for (std::size_t p = 0; p < g.k; ++p) {
      const double a = g.a[i * g.a_row + p * g.a_col];
      const double* brow = g.b + p * g.ldb;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += a * brow[j];
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void add_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

}  // namespace

namespace detail {
const KernelTable scalar_table{Isa::scalar, gemm_scalar, dot_scalar, axpy_scalar, mul_scalar,
                               add_scalar};
}

}  // namespace boxagent::simd
