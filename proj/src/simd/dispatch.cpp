#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "boxagent/simd/kernels.hpp"

namespace boxagent::simd {
namespace {

#if defined(__x86_64__) || defined(_M_X64)
constexpr bool kX86 = true;
#else
constexpr bool kX86 = false;
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("BOXAGENT_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{&kernels(initial_isa())};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
  static const bool avx2 = kX86 && cpu_has_avx2();
  return avx2;
}

const KernelTable& kernels(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::runtime_error("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2) return detail::avx2_table;
#endif
  return detail::scalar_table;
}

const KernelTable& kernels() { return *active_slot().load(std::memory_order_relaxed); }

Isa active_isa() { return kernels().isa; }

void set_active_isa(Isa isa) { active_slot().store(&kernels(isa), std::memory_order_relaxed); }

}  // namespace boxagent::simd
