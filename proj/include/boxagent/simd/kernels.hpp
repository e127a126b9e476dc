#pragma once

// Dense double-precision kernels used by the tensor layer. Each kernel has a
// scalar reference version and, on x86-64, an AVX2+FMA version. The active
// table is chosen once at startup from the CPU features; BOXAGENT_ISA=scalar
// or BOXAGENT_ISA=avx2 overrides the choice.

#include <cstddef>
#include <string_view>

namespace boxagent::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// C[i,j] (+)= sum_k A(i,k) * B[k*ldb + j], where A(i,k) = a[i*a_row + k*a_col].
// Passing a_row = 1, a_col = lda reads A transposed without a copy.
struct GemmArgs {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  const double* a = nullptr;
  std::size_t a_row = 0;
  std::size_t a_col = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

struct KernelTable {
  Isa isa;
  void (*gemm)(const GemmArgs& args);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = x * y (elementwise)
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // out = x + y
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
};

bool isa_supported(Isa isa);

// Table for a specific ISA; throws std::runtime_error when unsupported.
const KernelTable& kernels(Isa isa);

// Active table.
const KernelTable& kernels();

Isa active_isa();

// Not thread-safe; call before any concurrent work starts.
void set_active_isa(Isa isa);

namespace detail {
extern const KernelTable scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace boxagent::simd
