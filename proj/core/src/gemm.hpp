#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace cpf::detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const double* p, std::size_t rows, std::size_t cols) {
  return ConstMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MutMap view(double* p, std::size_t rows, std::size_t cols) {
  return MutMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// C(m x n) += A(m x k) B(k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  view(c, m, n).noalias() += view(a, m, k) * view(b, k, n);
}

// C(m x n) += A(m x k) B(n x k)^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  view(c, m, n).noalias() += view(a, m, k) * view(b, n, k).transpose();
}

// C(k x n) += A(m x k)^T B(m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  view(c, k, n).noalias() += view(a, m, k).transpose() * view(b, m, n);
}

}  // namespace cpf::detail
