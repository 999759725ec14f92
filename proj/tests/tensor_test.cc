#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amnet/error.h"
#include "amnet/ops.h"
#include "amnet/tape.h"
#include "support/gradcheck.h"

namespace amnet {
namespace {

using testing::gradient_rel_error;
using testing::random_matrix;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  Matrix m = random_matrix(3, 4, rng);
  Tape tape(false);
  Var out = matmul(tape.constant(Matrix::identity(3)), tape.constant(m));
  EXPECT_EQ(out.value(), m);
}

TEST(Matmul, HandArithmetic) {
  Tape tape(false);
  Var out = matmul(tape.constant(Matrix::row({1, 2})), tape.constant(Matrix(2, 1, {3, 4})));
  EXPECT_EQ(out.rows(), 1u);
  EXPECT_DOUBLE_EQ(out.scalar(), 11.0);
}

TEST(Matmul, ReportsFlops) {
  Tape tape(false);
  matmul(tape.constant(Matrix(4, 3, 1.0)), tape.constant(Matrix(3, 5, 1.0)));
  EXPECT_DOUBLE_EQ(tape.flops(), 2.0 * 4 * 3 * 5);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Matrix(2, 3)), tape.constant(Matrix(2, 3))), ContractError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Matrix a = random_matrix(4, 3, rng, -2, 2);
  Matrix b = random_matrix(3, 5, rng, -2, 2);
  const double err = gradient_rel_error({&a, &b}, [&](Tape& t) {
    return sum(matmul(t.parameter(a), t.parameter(b)));
  });
  EXPECT_LT(err, 1e-5);
}

TEST(Elementwise, ActivationsAtZero) {
  Tape tape(false);
  Var z = tape.constant(Matrix(1, 1, 0.0));
  EXPECT_DOUBLE_EQ(sigmoid(z).scalar(), 0.5);
  EXPECT_DOUBLE_EQ(tanh(z).scalar(), 0.0);
  EXPECT_DOUBLE_EQ(relu(z).scalar(), 0.0);
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Matrix(2, 2)), tape.constant(Matrix(2, 3))), ContractError);
  EXPECT_THROW(mul(tape.constant(Matrix(2, 2)), tape.constant(Matrix(1, 2))), ContractError);
}

TEST(Elementwise, RowBroadcastAdd) {
  Tape tape(false);
  Var out = add(tape.constant(Matrix(2, 2, {1, 2, 3, 4})), tape.constant(Matrix::row({10, 20})));
  EXPECT_EQ(out.value(), Matrix(2, 2, {11, 22, 13, 24}));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Matrix a = random_matrix(5, 5, rng, -2, 2);
  Matrix b = random_matrix(5, 5, rng, -2, 2);
  Matrix w = random_matrix(5, 5, rng, -2, 2);  // breaks the symmetry of sum()
  auto weighted = [&](Tape& t, Var v) { return sum(mul(v, t.constant(w))); };
  EXPECT_LT(gradient_rel_error({&a, &b}, [&](Tape& t) {
              return weighted(t, add(t.parameter(a), t.parameter(b)));
            }), 1e-5);
  EXPECT_LT(gradient_rel_error({&a, &b}, [&](Tape& t) {
              return weighted(t, mul(t.parameter(a), t.parameter(b)));
            }), 1e-5);
  EXPECT_LT(gradient_rel_error({&a, &b}, [&](Tape& t) {
              return weighted(t, sub(t.parameter(a), t.parameter(b)));
            }), 1e-5);
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) { return weighted(t, sigmoid(t.parameter(a))); }),
            1e-5);
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) { return weighted(t, tanh(t.parameter(a))); }),
            1e-5);
}

TEST(Elementwise, ReluGradientAwayFromKink) {
  Matrix a(2, 3, {-1.5, -0.3, 0.4, 1.2, -2.0, 0.7});
  Matrix w(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) {
              return sum(mul(relu(t.parameter(a)), t.constant(w)));
            }), 1e-5);
}

TEST(Elementwise, ReshapesAndScalesHaveGradients) {
  std::mt19937_64 rng(4);
  Matrix a = random_matrix(3, 4, rng, -2, 2);
  Matrix s = random_matrix(1, 1, rng, -2, 2);
  Matrix w = random_matrix(4, 3, rng, -2, 2);
  EXPECT_LT(gradient_rel_error({&a, &s}, [&](Tape& t) {
              Var x = t.parameter(a);
              Var parts = concat_cols({slice_cols(x, 2, 4), slice_cols(x, 0, 2)});
              Var rows = stack_rows({row_of(parts, 2), row_of(parts, 0), row_of(parts, 1)});
              Var y = scale_by(scale(rows, 0.7), t.parameter(s));
              return add(sum(mul(transpose(y), t.constant(w))), mean(x));
            }), 1e-5);
}

TEST(Softmax, UniformOnEqualLogits) {
  Tape tape(false);
  Var p = softmax_rows(tape.constant(Matrix::row({0, 0, 0})));
  for (double v : p.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableForLargeLogits) {
  Tape tape(false);
  Var x = tape.constant(Matrix::row({1000, 0}));
  Var p = softmax_rows(x);
  EXPECT_DOUBLE_EQ(p.value()[0], 1.0);
  EXPECT_EQ(p.value()[1], 0.0);
  Var lp = log_softmax_rows(x);
  EXPECT_DOUBLE_EQ(lp.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(lp.value()[1], -1000.0);
  EXPECT_DOUBLE_EQ(logsumexp_rows(x).scalar(), 1000.0);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> dim(1, 9);
    Matrix m = random_matrix(dim(rng), dim(rng), rng, -30, 30);
    Tape tape(false);
    const Matrix& p = softmax_rows(tape.constant(m)).value();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0;
      for (double v : p.row_span(r)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  Matrix a = random_matrix(3, 4, rng, -2, 2);
  Matrix w = random_matrix(3, 4, rng, -2, 2);
  Matrix w1 = random_matrix(3, 1, rng, -2, 2);
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) {
              return sum(mul(softmax_rows(t.parameter(a)), t.constant(w)));
            }), 1e-5);
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) {
              return sum(mul(log_softmax_rows(t.parameter(a)), t.constant(w)));
            }), 1e-5);
  EXPECT_LT(gradient_rel_error({&a}, [&](Tape& t) {
              return sum(mul(logsumexp_rows(t.parameter(a)), t.constant(w1)));
            }), 1e-5);
}

TEST(Backward, RejectsNonScalarRoot) {
  Tape tape;
  Matrix p(2, 2, 1.0);
  Var x = tape.parameter(p);
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, AccumulatesUntilZeroed) {
  Matrix p = Matrix::row({1.0, 2.0});
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.parameter(p), 3.0)));
  }
  EXPECT_DOUBLE_EQ(p.grad()[0], 6.0);
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad()[1], 0.0);
}

TEST(Backward, SharedSubexpressionGetsBothContributions) {
  Matrix p = Matrix::row({3.0});
  Tape tape;
  Var x = tape.parameter(p);
  tape.backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(p.grad()[0], 6.0);
}

TEST(Tape, NonFiniteValueIsAnError) {
  Tape tape;
  Matrix big = Matrix::row({1e308});
  Var x = tape.constant(big);
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Tape, ForwardIsBitReproducible) {
  auto run = [] {
    std::mt19937_64 rng(7);
    Matrix a = random_matrix(6, 6, rng);
    Tape tape(false);
    Var x = tape.constant(a);
    return softmax_rows(tanh(matmul(x, transpose(x)))).value();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace amnet
