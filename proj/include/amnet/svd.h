#pragma once

#include <vector>

#include "amnet/matrix.h"

namespace amnet {

// Thin singular value decomposition a = u * diag(sigma) * v^T with
// k = min(rows, cols) components sorted by decreasing singular value.
struct SvdResult {
  Matrix u;                   // rows x k
  std::vector<double> sigma;  // k
  Matrix v;                   // cols x k
};

// One-sided Jacobi (Hestenes) iteration. Accurate to working precision for
// the small dense matrices used here.
SvdResult svd(const Matrix& a);

}  // namespace amnet
