#pragma once

#include "amnet/matrix.h"

// Dense accumulate-into kernels shared by recorded operations.
namespace amnet::kernels {

// out += a * b
inline void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row_span(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* brow = b.row_span(k).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out += a * b^T
inline void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_span(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_span(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) += s;
    }
  }
}

// out += a^T * b
inline void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.row_span(k).data();
    const double* brow = b.row_span(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.row_span(i).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
    }
  }
}

}  // namespace amnet::kernels
