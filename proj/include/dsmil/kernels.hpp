#pragma once

// Inner-loop arithmetic used by the tensor ops. Each kernel has a scalar
// reference and, on x86-64, an AVX2+FMA variant. The variant is picked once
// at startup from CPUID; DSMIL_KERNELS=scalar in the environment forces the
// reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace dsmil::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // Row-major dense products. All accumulate into c.
  //   gemm_nn: c[m x n] += a[m x k] * b[k x n]
  //   gemm_tn: c[m x n] += a[k x m]^T * b[k x n]
  //   gemm_nt: c[m x n] += a[m x k] * b[n x k]^T
  using Gemm = void (*)(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                        double* c);
  Gemm gemm_nn;
  Gemm gemm_tn;
  Gemm gemm_nt;
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_table();

const KernelTable& active();
void set_active(Isa isa);  // throws ValidationError if unavailable
bool available(Isa isa);
std::string_view name(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

inline void gemm_nn(const KernelTable& t, std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  t.gemm_nn(m, k, n, a, b, c);
}
inline void gemm_tn(const KernelTable& t, std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  t.gemm_tn(m, k, n, a, b, c);
}
inline void gemm_nt(const KernelTable& t, std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
  t.gemm_nt(m, k, n, a, b, c);
}

}  // namespace dsmil::kernels
