#pragma once

#include <cstddef>
#include <span>

#include "amnet/matrix.h"
#include "amnet/tape.h"

namespace amnet {

// ---------------------------------------------------------------------------
// Gradual magnitude pruning.

// Cubic sparsity ramp from 0 to `final_sparsity` over `pruning_steps`
// updates spaced `frequency` training steps apart. One tracker per branch.
struct SparsityTracker {
  double final_sparsity = 0.0;    // s_f in [0, 1)
  std::size_t pruning_steps = 1;  // nu
  std::size_t frequency = 100;    // delta m, in training steps

  std::size_t last_step() const { return pruning_steps * frequency; }
  // True when masks are due for recomputation at training step m.
  bool is_update_step(std::size_t m) const { return m % frequency == 0 && m <= last_step(); }
};

// s_f - s_f (1 - m / (nu dm))^3, clamped to s_f past the end of the ramp.
double sparsity_schedule(const SparsityTracker& tracker, std::size_t m);

// Weights paired with a 0/1 mask. Pruned weights stay in storage so that a
// later pruning pass can revive them.
struct MaskedMatrix {
  Matrix weights;
  Matrix mask;  // entries are exactly 0.0 or 1.0

  MaskedMatrix() = default;
  explicit MaskedMatrix(Matrix w);

  std::size_t zeros() const;
  std::size_t nonzeros() const { return mask.size() - zeros(); }
  double sparsity() const;
  Matrix effective() const;
};

// Number of entries pruned out of `count` at ratio s.
std::size_t pruned_count(double s, std::size_t count);

// Recomputes the mask so that exactly floor(s * size) entries with the
// smallest underlying |weight| are zero. Ties go to the lower flat index.
void apply_magnitude_pruning(MaskedMatrix& mm, double s);

// x * (W o M). Gradients reach W only where the mask is one. Reports
// 2 * rows(x) * nnz(M) FLOPs.
Var masked_matmul(Var x, MaskedMatrix& mm);

// ---------------------------------------------------------------------------
// Truncated low-rank factorization.

// W (w x v) ~= p1 * p2^T with p1: w x r and p2: v x r. Branches share one
// pair at the largest rank and use the leading columns.
struct FactorPair {
  Matrix p1;
  Matrix p2;

  std::size_t rank() const { return p1.cols(); }
  std::size_t out_dim() const { return p1.rows(); }  // w
  std::size_t in_dim() const { return p2.rows(); }   // v
  Matrix reconstruct(std::size_t r) const;
};

// Best rank-r approximation in Frobenius norm: p1 = U_r Sigma_r, p2 = V_r.
FactorPair svd_factorize(const Matrix& w, std::size_t r);

// y = P1[:, :r] (P2[:, :r]^T x) for a length-v input; returns a 1 x w row.
Matrix truncated_linear(const FactorPair& fp, std::size_t r, std::span<const double> x);

// Row-vector form used inside recurrent cells: u * (P1_r P2_r^T) computed as
// (u * P1_r) * P2_r^T. Gradients reach only the leading r columns.
Var truncated_row_product(Var u, FactorPair& fp, std::size_t r);

double dense_flops(std::size_t w, std::size_t v);
double truncated_flops(std::size_t w, std::size_t v, std::size_t r);
// wv / (w + v): ranks strictly below this are cheaper than the dense product.
double break_even_rank(std::size_t w, std::size_t v);

// Largest r with 2 r (w + v) <= (1 - target_ratio) * 2 w v.
std::size_t rank_for_compression(std::size_t w, std::size_t v, double target_ratio);

}  // namespace amnet
