#include "amnet/compression.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "amnet/error.h"
#include "amnet/ops.h"
#include "amnet/svd.h"
#include "kernels.h"

namespace amnet {

double sparsity_schedule(const SparsityTracker& tracker, std::size_t m) {
  AMNET_REQUIRE(tracker.final_sparsity >= 0.0 && tracker.final_sparsity < 1.0,
                "sparsity_schedule: final sparsity must lie in [0, 1)");
  AMNET_REQUIRE(tracker.pruning_steps > 0 && tracker.frequency > 0,
                "sparsity_schedule: pruning steps and frequency must be positive");
  const double sf = tracker.final_sparsity;
  if (m >= tracker.last_step()) return sf;
  const double remaining = 1.0 - static_cast<double>(m) / static_cast<double>(tracker.last_step());
  return sf - sf * remaining * remaining * remaining;
}

MaskedMatrix::MaskedMatrix(Matrix w) : weights(std::move(w)), mask(weights.rows(), weights.cols(), 1.0) {}

std::size_t MaskedMatrix::zeros() const {
  return static_cast<std::size_t>(std::count(mask.data().begin(), mask.data().end(), 0.0));
}

double MaskedMatrix::sparsity() const {
  return mask.empty() ? 0.0 : static_cast<double>(zeros()) / static_cast<double>(mask.size());
}

Matrix MaskedMatrix::effective() const {
  Matrix e = weights;
  e.clear_grad();
  for (std::size_t k = 0; k < e.size(); ++k) e[k] *= mask[k];
  return e;
}

std::size_t pruned_count(double s, std::size_t count) {
  AMNET_REQUIRE(s >= 0.0 && s < 1.0, "pruning ratio must lie in [0, 1)");
  // Guard against products such as 0.7 * 10 landing just below an integer.
  return static_cast<std::size_t>(std::floor(s * static_cast<double>(count) + 1e-9));
}

void apply_magnitude_pruning(MaskedMatrix& mm, double s) {
  AMNET_REQUIRE(mm.mask.same_shape(mm.weights), "apply_magnitude_pruning: mask shape mismatch");
  const std::size_t n = mm.weights.size();
  const std::size_t k = pruned_count(s, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(mm.weights[a]) < std::abs(mm.weights[b]);
  });
  mm.mask.fill(1.0);
  for (std::size_t i = 0; i < k; ++i) mm.mask[order[i]] = 0.0;
}

Var masked_matmul(Var x, MaskedMatrix& mm) {
  AMNET_REQUIRE(x.valid(), "masked_matmul: unbound input");
  Tape& tape = *x.tape();
  const Matrix& xv = x.value();
  AMNET_REQUIRE(xv.cols() == mm.weights.rows(), "masked_matmul: dimension mismatch " +
                                                    xv.shape_string() + " x " +
                                                    mm.weights.shape_string());
  Var w = tape.parameter(mm.weights);
  Var eff = tape.memo(&mm, 0, [&] { return tape.constant(mm.effective()); });
  Matrix out(xv.rows(), mm.weights.cols());
  kernels::gemm_acc(xv, eff.value(), out);
  const double flops = 2.0 * xv.rows() * static_cast<double>(mm.nonzeros());
  const Matrix* mask = &mm.mask;
  return tape.record(
      std::move(out), {x, w, eff},
      [x, eff, mask](const Matrix& g, std::span<Matrix* const> gi) {
        if (gi[0]) kernels::gemm_nt_acc(g, eff.value(), *gi[0]);
        if (gi[1]) {
          Matrix gw(gi[1]->rows(), gi[1]->cols());
          kernels::gemm_tn_acc(x.value(), g, gw);
          for (std::size_t k = 0; k < gw.size(); ++k) (*gi[1])[k] += gw[k] * (*mask)[k];
        }
      },
      flops);
}

Matrix FactorPair::reconstruct(std::size_t r) const {
  AMNET_REQUIRE(r >= 1 && r <= rank(), "FactorPair::reconstruct: invalid rank");
  Matrix out(out_dim(), in_dim());
  for (std::size_t i = 0; i < out_dim(); ++i)
    for (std::size_t j = 0; j < in_dim(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < r; ++k) s += p1(i, k) * p2(j, k);
      out(i, j) = s;
    }
  return out;
}

FactorPair svd_factorize(const Matrix& w, std::size_t r) {
  AMNET_REQUIRE(r >= 1 && r <= std::min(w.rows(), w.cols()),
                "svd_factorize: rank " + std::to_string(r) + " invalid for " + w.shape_string());
  const SvdResult d = svd(w);
  FactorPair fp{Matrix(w.rows(), r), Matrix(w.cols(), r)};
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t i = 0; i < w.rows(); ++i) fp.p1(i, k) = d.u(i, k) * d.sigma[k];
    for (std::size_t j = 0; j < w.cols(); ++j) fp.p2(j, k) = d.v(j, k);
  }
  return fp;
}

Matrix truncated_linear(const FactorPair& fp, std::size_t r, std::span<const double> x) {
  AMNET_REQUIRE(r >= 1 && r <= fp.rank(), "truncated_linear: invalid rank");
  AMNET_REQUIRE(x.size() == fp.in_dim(), "truncated_linear: input length mismatch");
  std::vector<double> z(r, 0.0);
  for (std::size_t j = 0; j < fp.in_dim(); ++j)
    for (std::size_t k = 0; k < r; ++k) z[k] += fp.p2(j, k) * x[j];
  Matrix y(1, fp.out_dim());
  for (std::size_t i = 0; i < fp.out_dim(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < r; ++k) s += fp.p1(i, k) * z[k];
    y[i] = s;
  }
  return y;
}

Var truncated_row_product(Var u, FactorPair& fp, std::size_t r) {
  AMNET_REQUIRE(u.valid(), "truncated_row_product: unbound input");
  AMNET_REQUIRE(r >= 1 && r <= fp.rank(), "truncated_row_product: invalid rank");
  AMNET_REQUIRE(u.cols() == fp.out_dim(), "truncated_row_product: dimension mismatch");
  Tape& tape = *u.tape();
  Var p1 = tape.memo(&fp.p1, r, [&] {
    Var full = tape.parameter(fp.p1);
    return r == fp.rank() ? full : slice_cols(full, 0, r);
  });
  Var p2t = tape.memo(&fp.p2, r, [&] {
    Var full = tape.parameter(fp.p2);
    return transpose(r == fp.rank() ? full : slice_cols(full, 0, r));
  });
  return matmul(matmul(u, p1), p2t);
}

double dense_flops(std::size_t w, std::size_t v) { return 2.0 * w * v; }

double truncated_flops(std::size_t w, std::size_t v, std::size_t r) { return 2.0 * r * (w + v); }

double break_even_rank(std::size_t w, std::size_t v) {
  return static_cast<double>(w) * static_cast<double>(v) / static_cast<double>(w + v);
}

std::size_t rank_for_compression(std::size_t w, std::size_t v, double target_ratio) {
  AMNET_REQUIRE(target_ratio > 0.0 && target_ratio < 1.0,
                "rank_for_compression: target ratio must lie in (0, 1)");
  const double budget = (1.0 - target_ratio) * dense_flops(w, v);
  const auto r = static_cast<std::size_t>(std::floor(budget / (2.0 * (w + v)) + 1e-9));
  AMNET_REQUIRE(r >= 1, "rank_for_compression: no rank >= 1 meets the target");
  return std::min(r, std::min(w, v));
}

}  // namespace amnet
