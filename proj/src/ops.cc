#include "amnet/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amnet/error.h"
#include "kernels.h"

namespace amnet {
namespace {

Tape& tape_of(Var a) {
  AMNET_REQUIRE(a.valid(), "operation on an unbound variable");
  return *a.tape();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  AMNET_REQUIRE(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape_string() +
                                     " vs " + b.shape_string());
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    z += x;
  }
  for (double& x : v) x /= z;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  return m + std::log(z);
}

double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  AMNET_REQUIRE(av.cols() == bv.rows(),
                "matmul: dimension mismatch " + av.shape_string() + " x " + bv.shape_string());
  Matrix out(av.rows(), bv.cols());
  kernels::gemm_acc(av, bv, out);
  const double flops = 2.0 * av.rows() * av.cols() * bv.cols();
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b](const Matrix& g, std::span<Matrix* const> gi) {
        if (gi[0]) kernels::gemm_nt_acc(g, b.value(), *gi[0]);
        if (gi[1]) kernels::gemm_tn_acc(a.value(), g, *gi[1]);
      },
      flops);
}

Var transpose(Var a) {
  return tape_of(a).record(a.value().transposed(), {a},
                           [](const Matrix& g, std::span<Matrix* const> gi) {
                             for (std::size_t r = 0; r < g.rows(); ++r)
                               for (std::size_t c = 0; c < g.cols(); ++c) (*gi[0])(c, r) += g(r, c);
                           });
}

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const bool broadcast = !av.same_shape(bv);
  if (broadcast) {
    AMNET_REQUIRE(bv.rows() == 1 && bv.cols() == av.cols(),
                  "add: shape mismatch " + av.shape_string() + " + " + bv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto orow = out.row_span(r);
    auto brow = bv.row_span(broadcast ? 0 : r);
    for (std::size_t c = 0; c < av.cols(); ++c) orow[c] += brow[c];
  }
  const double flops = static_cast<double>(av.size());
  return tape_of(a).record(
      std::move(out), {a, b},
      [broadcast](const Matrix& g, std::span<Matrix* const> gi) {
        if (gi[0]) {
          auto d = gi[0]->data();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += g[k];
        }
        if (gi[1]) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto grow = g.row_span(r);
            auto drow = gi[1]->row_span(broadcast ? 0 : r);
            for (std::size_t c = 0; c < g.cols(); ++c) drow[c] += grow[c];
          }
        }
      },
      flops);
}

Var sub(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "sub");
  Matrix out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= bv[k];
  return tape_of(a).record(
      std::move(out), {a, b},
      [](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (gi[0]) (*gi[0])[k] += g[k];
          if (gi[1]) (*gi[1])[k] -= g[k];
        }
      },
      static_cast<double>(av.size()));
}

Var mul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same_shape(av, bv, "mul");
  Matrix out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= bv[k];
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b](const Matrix& g, std::span<Matrix* const> gi) {
        const Matrix& av = a.value();
        const Matrix& bv = b.value();
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (gi[0]) (*gi[0])[k] += g[k] * bv[k];
          if (gi[1]) (*gi[1])[k] += g[k] * av[k];
        }
      },
      static_cast<double>(av.size()));
}

Var scale(Var a, double factor) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= factor;
  return tape_of(a).record(
      std::move(out), {a},
      [factor](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t k = 0; k < g.size(); ++k) (*gi[0])[k] += factor * g[k];
      },
      static_cast<double>(a.value().size()));
}

Var scale_by(Var a, Var s) {
  const double sv = s.scalar();
  Matrix out = a.value();
  for (double& v : out.data()) v *= sv;
  return tape_of(a).record(
      std::move(out), {a, s},
      [a, s](const Matrix& g, std::span<Matrix* const> gi) {
        const Matrix& av = a.value();
        const double sv = s.value()[0];
        double acc = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (gi[0]) (*gi[0])[k] += sv * g[k];
          acc += g[k] * av[k];
        }
        if (gi[1]) (*gi[1])[0] += acc;
      },
      static_cast<double>(a.value().size()));
}

Var activate(Activation kind, Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) {
    switch (kind) {
      case Activation::sigmoid: v = sigmoid_value(v); break;
      case Activation::tanh: v = std::tanh(v); break;
      case Activation::relu: v = v > 0.0 ? v : 0.0; break;
    }
  }
  const double flops = static_cast<double>(out.size());
  return tape_of(a).record(
      std::move(out), {a},
      [kind, a](const Matrix& g, std::span<Matrix* const> gi) {
        const Matrix& x = a.value();
        for (std::size_t k = 0; k < g.size(); ++k) {
          double d = 0.0;
          switch (kind) {
            case Activation::sigmoid: {
              const double y = sigmoid_value(x[k]);
              d = y * (1.0 - y);
              break;
            }
            case Activation::tanh: {
              const double y = std::tanh(x[k]);
              d = 1.0 - y * y;
              break;
            }
            case Activation::relu: d = x[k] > 0.0 ? 1.0 : 0.0; break;
          }
          (*gi[0])[k] += g[k] * d;
        }
      },
      flops);
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a).record(
      Matrix(1, 1, s), {a},
      [](const Matrix& g, std::span<Matrix* const> gi) {
        for (double& v : gi[0]->data()) v += g[0];
      },
      static_cast<double>(a.value().size()));
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  AMNET_REQUIRE(n > 0, "mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var concat_cols(const std::vector<Var>& parts) {
  AMNET_REQUIRE(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    AMNET_REQUIRE(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row_span(r).begin(), v.row_span(r).end(), out.row_span(r).begin() + off);
    off += v.cols();
  }
  return tape_of(parts.front())
      .record(std::move(out), parts, [offsets](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t p = 0; p < gi.size(); ++p) {
          if (!gi[p]) continue;
          Matrix& d = *gi[p];
          for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g(r, offsets[p] + c);
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Matrix& av = a.value();
  AMNET_REQUIRE(begin < end && end <= av.cols(), "slice_cols: invalid range");
  Matrix out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
  return tape_of(a).record(std::move(out), {a},
                           [begin](const Matrix& g, std::span<Matrix* const> gi) {
                             for (std::size_t r = 0; r < g.rows(); ++r)
                               for (std::size_t c = 0; c < g.cols(); ++c)
                                 (*gi[0])(r, begin + c) += g(r, c);
                           });
}

Var stack_rows(const std::vector<Var>& rows) {
  AMNET_REQUIRE(!rows.empty(), "stack_rows: no inputs");
  const std::size_t cols = rows.front().cols();
  Matrix out(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Matrix& v = rows[r].value();
    AMNET_REQUIRE(v.rows() == 1 && v.cols() == cols, "stack_rows: inputs must be 1 x cols");
    std::copy(v.data().begin(), v.data().end(), out.row_span(r).begin());
  }
  return tape_of(rows.front())
      .record(std::move(out), rows, [](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t r = 0; r < gi.size(); ++r) {
          if (!gi[r]) continue;
          auto grow = g.row_span(r);
          auto d = gi[r]->data();
          for (std::size_t c = 0; c < d.size(); ++c) d[c] += grow[c];
        }
      });
}

Var row_of(Var a, std::size_t r) {
  const Matrix& av = a.value();
  AMNET_REQUIRE(r < av.rows(), "row_of: row out of range");
  return tape_of(a).record(Matrix::row(av.row_span(r)), {a},
                           [r](const Matrix& g, std::span<Matrix* const> gi) {
                             auto d = gi[0]->row_span(r);
                             for (std::size_t c = 0; c < d.size(); ++c) d[c] += g[c];
                           });
}

Var element(Var a, std::size_t r, std::size_t c) {
  const Matrix& av = a.value();
  AMNET_REQUIRE(r < av.rows() && c < av.cols(), "element: index out of range");
  return tape_of(a).record(Matrix(1, 1, av(r, c)), {a},
                           [r, c](const Matrix& g, std::span<Matrix* const> gi) {
                             (*gi[0])(r, c) += g[0];
                           });
}

Var softmax_rows(Var logits) {
  Matrix out = logits.value();
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row_span(r));
  Matrix y = out;
  return tape_of(logits).record(
      std::move(out), {logits},
      [y = std::move(y)](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto yr = y.row_span(r);
          auto gr = g.row_span(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
          auto d = gi[0]->row_span(r);
          for (std::size_t c = 0; c < yr.size(); ++c) d[c] += yr[c] * (gr[c] - dot);
        }
      },
      3.0 * logits.value().size());
}

Var log_softmax_rows(Var logits) {
  const Matrix& x = logits.value();
  Matrix out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    const double lse = logsumexp(row);
    for (double& v : row) v -= lse;
  }
  Matrix y = out;
  return tape_of(logits).record(
      std::move(out), {logits},
      [y = std::move(y)](const Matrix& g, std::span<Matrix* const> gi) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto yr = y.row_span(r);
          auto gr = g.row_span(r);
          double gsum = 0.0;
          for (double v : gr) gsum += v;
          auto d = gi[0]->row_span(r);
          for (std::size_t c = 0; c < yr.size(); ++c) d[c] += gr[c] - std::exp(yr[c]) * gsum;
        }
      },
      3.0 * x.size());
}

Var logsumexp_rows(Var logits) {
  const Matrix& x = logits.value();
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = logsumexp(x.row_span(r));
  Matrix lse = out;
  return tape_of(logits).record(
      std::move(out), {logits},
      [logits, lse = std::move(lse)](const Matrix& g, std::span<Matrix* const> gi) {
        const Matrix& x = logits.value();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          auto d = gi[0]->row_span(r);
          auto xr = x.row_span(r);
          for (std::size_t c = 0; c < xr.size(); ++c) d[c] += g(r, 0) * std::exp(xr[c] - lse(r, 0));
        }
      },
      3.0 * x.size());
}

}  // namespace amnet
