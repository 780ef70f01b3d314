#include "dsmil/kernels.hpp"

#include <cstdlib>
#include <string>

#include "dsmil/error.hpp"
#include "kernels_internal.hpp"

namespace dsmil::kernels {

namespace {

constexpr KernelTable kScalar{Isa::Scalar,           &detail::dot_scalar,     &detail::axpy_scalar,
                              &detail::sum_scalar,   &detail::gemm_nn_scalar, &detail::gemm_tn_scalar,
                              &detail::gemm_nt_scalar};

#if defined(DSMIL_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::Avx2,         &detail::dot_avx2,     &detail::axpy_avx2,
                            &detail::sum_avx2,   &detail::gemm_nn_avx2, &detail::gemm_tn_avx2,
                            &detail::gemm_nt_avx2};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const KernelTable* pick_default() {
  const char* forced = std::getenv("DSMIL_KERNELS");
  if (forced != nullptr && std::string(forced) == "scalar") return &kScalar;
  if (const KernelTable* t = avx2_table()) return t;
  return &kScalar;
}

const KernelTable*& active_slot() {
  static const KernelTable* slot = pick_default();
  return slot;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(DSMIL_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *active_slot(); }

bool available(Isa isa) { return isa == Isa::Scalar || avx2_table() != nullptr; }

void set_active(Isa isa) {
  if (isa == Isa::Scalar) {
    active_slot() = &kScalar;
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw ValidationError("kernel variant avx2 is not available on this build/CPU");
  active_slot() = t;
}

std::string_view name(Isa isa) { return isa == Isa::Scalar ? "scalar" : "avx2"; }

}  // namespace dsmil::kernels
