// Compiled with -mavx2 -mfma. Only reached after a CPUID check.

#include <immintrin.h>

#include "kernels_internal.hpp"

namespace dsmil::kernels::detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

}  // namespace

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 7 < n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 3 < n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 3 < n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 3 < n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double total = hsum(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

}  // namespace dsmil::kernels::detail

namespace dsmil::kernels::detail {

namespace {

// c[i, j..] += sum_p a(i, p) * b[p * n + j..] with a(i, p) = a[i * a_row + p * a_col].
inline void gemm_rows(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t a_row,
                      std::size_t a_col, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * a_row;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 7 < n; j += 8) {
      __m256d acc0 = _mm256_loadu_pd(ci + j);
      __m256d acc1 = _mm256_loadu_pd(ci + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d s = _mm256_set1_pd(ai[p * a_col]);
        acc0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(b + p * n + j), acc0);
        acc1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(b + p * n + j + 4), acc1);
      }
      _mm256_storeu_pd(ci + j, acc0);
      _mm256_storeu_pd(ci + j + 4, acc1);
    }
    for (; j + 3 < n; j += 4) {
      __m256d acc = _mm256_loadu_pd(ci + j);
      for (std::size_t p = 0; p < k; ++p) {
        acc = _mm256_fmadd_pd(_mm256_set1_pd(ai[p * a_col]), _mm256_loadu_pd(b + p * n + j), acc);
      }
      _mm256_storeu_pd(ci + j, acc);
    }
    for (; j < n; ++j) {
      double acc = ci[j];
      for (std::size_t p = 0; p < k; ++p) acc += ai[p * a_col] * b[p * n + j];
      ci[j] = acc;
    }
  }
}

}  // namespace

void gemm_nn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_rows(m, k, n, a, k, 1, b, c);
}

void gemm_tn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_rows(m, k, n, a, 1, m, b, c);
}

void gemm_nt_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      std::size_t p = 0;
      double acc = 0.0;
      if (k >= 4) {
        __m256d v = _mm256_setzero_pd();
        for (; p + 3 < k; p += 4) v = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p), v);
        acc = hsum(v);
      }
      for (; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace dsmil::kernels::detail
