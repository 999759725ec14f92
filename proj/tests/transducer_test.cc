#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amnet/error.h"
#include "amnet/ops.h"
#include "amnet/transducer.h"
#include "support/gradcheck.h"
#include "support/oracles.h"

namespace amnet {
namespace {

using testing::bruteforce_transducer_nll;
using testing::gradient_rel_error;
using testing::random_matrix;

std::vector<int> random_labels(std::size_t U, std::size_t K, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> label(1, static_cast<int>(K) - 1);
  std::vector<int> y(U);
  for (int& v : y) v = label(rng);
  return y;
}

TransducerModel small_model(std::size_t feat, std::size_t K, Rng& rng) {
  TransducerModel m;
  m.encoder = Encoder::dense(StackedLstm::random({feat, 5}, rng), Linear::random(5, K, rng));
  m.decoder = PredictionNetwork(K, 3, {4}, rng);
  return m;
}

TEST(Joint, EqualLogitsGiveUniform) {
  const std::vector<double> a(4, 0.7), b(4, -0.2);
  for (double v : joint_log_probs(a, b)) EXPECT_NEAR(v, -std::log(4.0), 1e-15);
}

TEST(Joint, IsSoftmaxOfSum) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a = random_matrix(1, 6, rng, -5, 5), b = random_matrix(1, 6, rng, -5, 5);
    const auto lp = joint_log_probs(a.data(), b.data());
    const auto ref = testing::naive_joint(a.data(), b.data());
    double s = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NEAR(lp[k], ref[k], 1e-12);
      s += std::exp(lp[k]);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Joint, WidthMismatchThrows) {
  EXPECT_THROW(joint_log_probs(std::vector<double>(3), std::vector<double>(4)), ContractError);
}

TEST(Loss, SingleFrameNoLabels) {
  Matrix enc = Matrix::row({0.3, -0.5, 1.0});
  Matrix dec = Matrix::row({0.1, 0.2, -0.4});
  const auto lp = testing::naive_joint(enc.data(), dec.data());
  EXPECT_NEAR(compute_lattice(enc, dec, {}).log_likelihood, lp[0], 1e-14);
}

TEST(Loss, TwoFramesOneLabelHandSum) {
  std::mt19937_64 rng(2);
  Matrix enc = random_matrix(2, 3, rng, -2, 2);
  Matrix dec = random_matrix(2, 3, rng, -2, 2);
  const std::vector<int> y{2};
  auto p = [&](std::size_t t, std::size_t u, int k) {
    return std::exp(testing::naive_joint(enc.row_span(t), dec.row_span(u))[k]);
  };
  // Frames 1-indexed in the usual notation: t=1 -> row 0.
  const double total = p(0, 0, 0) * p(1, 0, 2) * p(1, 1, 0) + p(0, 0, 2) * p(0, 1, 0) * p(1, 1, 0);
  Tape tape(false);
  Var nll = transducer_nll(tape.constant(enc), tape.constant(dec), y);
  EXPECT_NEAR(nll.scalar(), -std::log(total), 1e-12);
}

TEST(Loss, MatchesBruteForceOverSmallGrids) {
  std::mt19937_64 rng(3);
  for (std::size_t K = 2; K <= 4; ++K)
    for (std::size_t T = 1; T <= 4; ++T)
      for (std::size_t U = 0; U <= 3; ++U)
        for (int trial = 0; trial < 5; ++trial) {
          Matrix enc = random_matrix(T, K, rng, -3, 3);
          Matrix dec = random_matrix(U + 1, K, rng, -3, 3);
          const auto y = random_labels(U, K, rng);
          const double dp = -compute_lattice(enc, dec, y).log_likelihood;
          EXPECT_NEAR(dp, bruteforce_transducer_nll(enc, dec, y), 1e-9);
          EXPECT_GE(dp, 0.0);
        }
}

TEST(Loss, AlphaBetaAgreeOnLikelihood) {
  std::mt19937_64 rng(4);
  Matrix enc = random_matrix(5, 4, rng, -3, 3);
  Matrix dec = random_matrix(4, 4, rng, -3, 3);
  const std::vector<int> y{1, 3, 2};
  TransducerLattice lat = compute_lattice(enc, dec, y);
  EXPECT_EQ(lat.alpha(0, 0), 0.0);
  EXPECT_NEAR(lat.beta(0, 0), lat.log_likelihood, 1e-12);
}

TEST(Loss, FiniteForExtremeLogits) {
  Matrix enc(6, 3, {400, -400, 0, -400, 400, 0, 0, 0, 0, 400, 400, -400, -400, -400, 400, 0, 0, 0});
  Matrix dec(3, 3, {300, -300, 0, 0, 300, -300, -300, 0, 300});
  TransducerLattice lat = compute_lattice(enc, dec, std::vector<int>{1, 2});
  EXPECT_TRUE(std::isfinite(lat.log_likelihood));
  EXPECT_TRUE(lat.alpha.all_finite());
}

TEST(Loss, InvalidLabelsRejected) {
  Matrix enc(2, 3), dec(2, 3);
  EXPECT_THROW(compute_lattice(enc, dec, std::vector<int>{0}), ContractError);
  EXPECT_THROW(compute_lattice(enc, dec, std::vector<int>{3}), ContractError);
  EXPECT_THROW(compute_lattice(enc, Matrix(3, 3), std::vector<int>{1}), ContractError);
}

TEST(Loss, GradientWrtLogitsMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (auto [T, U] : {std::pair{1, 0}, std::pair{3, 2}, std::pair{4, 3}, std::pair{2, 4}}) {
    Matrix enc = random_matrix(T, 4, rng, -2, 2);
    Matrix dec = random_matrix(U + 1, 4, rng, -2, 2);
    const auto y = random_labels(U, 4, rng);
    EXPECT_LT(gradient_rel_error({&enc, &dec}, [&](Tape& t) {
                return transducer_nll(t.parameter(enc), t.parameter(dec), y);
              }), 1e-6);
  }
}

TEST(Loss, EndToEndModelGradient) {
  Rng rng(6);
  TransducerModel model = small_model(3, 4, rng);
  std::mt19937_64 data(7);
  Matrix x = random_matrix(4, 3, data, -2, 2);
  const std::vector<int> y{2, 1};
  TensorList tensors;
  model.collect(tensors);
  std::vector<Matrix*> params;
  for (auto& t : tensors) params.push_back(t.matrix);
  GumbelSampler sampler;
  EXPECT_LT(gradient_rel_error(params, [&](Tape& t) {
              return transducer_loss(t, model, x, y, sampler).nll;
            }), 1e-4);
}

TEST(Decoder, IdenticalPrefixesGiveIdenticalOutputs) {
  Rng rng(8);
  PredictionNetwork net(5, 3, {4, 4}, rng);
  DecoderCache cache(net);
  const std::vector<int> prefix{3, 1, 4};
  const auto cached = cache.logits(prefix);
  Tape tape(false);
  Var all = net.predict_all(tape, prefix);
  const auto direct = all.value().row_span(3);
  EXPECT_EQ(std::vector<double>(direct.begin(), direct.end()), cached);
  DecoderCache fresh(net);
  EXPECT_EQ(fresh.logits(prefix), cached);
  EXPECT_EQ(cache.size(), 4u);
}

TEST(Decoder, BlankDoesNotAdvance) {
  Rng rng(9);
  PredictionNetwork net(4, 3, {4}, rng);
  Tape tape(false);
  auto s = net.start(tape);
  EXPECT_THROW(net.advance(tape, s, kBlank), ContractError);
}

TEST(Encoder, DenseCostsAreConstantPerFrame) {
  Rng rng(10);
  TransducerModel model = small_model(3, 4, rng);
  Tape tape(false);
  Matrix x(6, 3, 0.5);
  EncodeResult r = model.encoder.encode_runtime(tape, x);
  ASSERT_EQ(r.costs.size(), 6u);
  for (Var q : r.costs) EXPECT_DOUBLE_EQ(q.scalar(), model.encoder.dense_frame_cost());
  EXPECT_EQ(r.logits.rows(), 6u);
  EXPECT_DOUBLE_EQ(tape.flops(), 6 * model.encoder.dense_frame_cost());
}

TEST(Encoder, AmortizedRuntimeCostsMatchTapeFlops) {
  Rng rng(11);
  std::vector<StackedLstm> b{StackedLstm::random({3, 6}, rng), StackedLstm::random({3, 6}, rng)};
  AmRnnLayer layer(std::move(b), Arbitrator(3, 6, 2, {{4}, false, true}, rng));
  Encoder enc = Encoder::amortized(std::move(layer), Linear::random(6, 4, rng));
  Tape tape(false);
  std::mt19937_64 data(12);
  EncodeResult r = enc.encode_runtime(tape, random_matrix(7, 3, data));
  double total = 0.0;
  for (std::size_t t = 0; t < r.costs.size(); ++t) {
    total += r.costs[t].scalar();
    EXPECT_DOUBLE_EQ(r.costs[t].scalar(), enc.branch_frame_cost(r.decisions.branches[t]));
  }
  EXPECT_TRUE(r.decisions.hard);
  EXPECT_DOUBLE_EQ(tape.flops(), total);
}

}  // namespace
}  // namespace amnet
