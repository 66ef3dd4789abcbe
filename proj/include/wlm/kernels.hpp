#pragma once

// Dense row-major GEMM entry points, backed by Eigen's blocked product.
// Eigen runs single-threaded here (no OpenMP), which keeps the summation
// order, and therefore the results, fixed for a given build.

#include <cstddef>

#include <Eigen/Core>

namespace wlm::kernels {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <class T>
using Map = Eigen::Map<RowMajor<T>>;

// C[m×n] += A[m×k] · B[k×n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  Map<T>(c, m, n).noalias() += ConstMap<T>(a, m, k) * ConstMap<T>(b, k, n);
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  Map<T>(c, k, n).noalias() += ConstMap<T>(a, m, k).transpose() * ConstMap<T>(b, m, n);
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  Map<T>(c, m, n).noalias() += ConstMap<T>(a, m, k) * ConstMap<T>(b, n, k).transpose();
}

}  // namespace wlm::kernels
