#pragma once

#include <cstddef>

namespace dsmil::kernels::detail {

double dot_scalar(const double* x, const double* y, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
double sum_scalar(const double* x, std::size_t n);
void gemm_nn_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_tn_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_nt_scalar(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);

#if defined(DSMIL_HAVE_AVX2)
double dot_avx2(const double* x, const double* y, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
double sum_avx2(const double* x, std::size_t n);
void gemm_nn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_tn_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_nt_avx2(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
#endif

}  // namespace dsmil::kernels::detail
