#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "amnet/checkpoint.h"
#include "amnet/error.h"
#include "amnet/model_io.h"
#include "amnet/ops.h"
#include "amnet/training.h"
#include "support/tempdir.h"
#include "support/tiny_config.h"

namespace amnet {
namespace {

std::vector<Matrix> snapshot(TensorList& tensors) {
  std::vector<Matrix> out;
  for (NamedTensor& t : tensors) out.push_back(*t.matrix);
  return out;
}

TEST(Schedule, WarmHoldDecay) {
  OptimizerConfig o;
  o.lr = 0.01;
  o.warmup_steps = 4;
  o.hold_steps = 3;
  o.final_lr_factor = 0.1;
  const std::size_t total = 20;
  for (std::size_t s = 0; s < 4; ++s) EXPECT_DOUBLE_EQ(learning_rate(o, s, total), 0.01 * (s + 1) / 4);
  for (std::size_t s = 4; s < 7; ++s) EXPECT_EQ(learning_rate(o, s, total), 0.01);
  for (std::size_t s = 7; s + 1 < total; ++s)
    EXPECT_GT(learning_rate(o, s, total), learning_rate(o, s + 1, total));
  EXPECT_NEAR(learning_rate(o, total - 1, total), 0.001, 1e-15);
  // Short runs truncate the warm-up and skip the decay.
  EXPECT_EQ(learning_rate(o, 2, 3), 0.01);
  EXPECT_THROW(learning_rate(o, 20, 20), ContractError);
}

TEST(Schedule, TemperatureEndpoints) {
  EXPECT_EQ(temperature(1.0, 0.5, 0, 11), 1.0);
  EXPECT_DOUBLE_EQ(temperature(1.0, 0.5, 5, 11), 0.75);
  EXPECT_EQ(temperature(1.0, 0.5, 10, 11), 0.5);
  EXPECT_EQ(temperature(1.0, 0.5, 0, 1), 0.5);
  EXPECT_EQ(temperature(1.0, 0.5, 25, 11), 0.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // The bias-corrected first step is lr * g / (|g| + eps'), i.e. lr * sign(g).
  OptimizerConfig o;
  o.clip_norm = 0.0;
  o.epsilon = 1e-12;
  Matrix w(1, 3, std::vector<double>{1.0, -2.0, 0.5});
  auto g = w.ensure_grad();
  g[0] = 3.0;
  g[1] = -0.2;
  g[2] = 0.0;
  Adam adam({{"w", &w, false}}, o);
  const double norm = adam.step(0.1);
  EXPECT_DOUBLE_EQ(norm, std::sqrt(9.0 + 0.04));
  EXPECT_NEAR(w[0], 0.9, 1e-10);
  EXPECT_NEAR(w[1], -1.9, 1e-10);
  EXPECT_EQ(w[2], 0.5);
  for (double v : w.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, ClipsGlobalNorm) {
  // With clipping the moments see g * clip / norm; the first step is still a
  // sign step, the second reveals the scale through the moment ratio.
  OptimizerConfig o;
  o.clip_norm = 1.0;
  Matrix a(1, 1, 0.0), b(1, 1, 0.0);
  a.ensure_grad()[0] = 30.0;
  b.ensure_grad()[0] = 40.0;
  Adam adam({{"a", &a, false}, {"b", &b, false}}, o);
  EXPECT_DOUBLE_EQ(adam.step(1.0, 0.1), 5.0);  // norm after scaling by 0.1
  EXPECT_NEAR(a[0], -1.0, 1e-6);
  EXPECT_NEAR(b[0], -1.0, 1e-6);
}

TEST(Adam, RejectsMasksAndNonFiniteGradients) {
  Matrix m(1, 1, 1.0);
  EXPECT_THROW(Adam({{"m", &m, true}}, OptimizerConfig{}), ContractError);
  m.ensure_grad()[0] = NAN;
  Adam adam({{"m", &m, false}}, OptimizerConfig{});
  EXPECT_THROW(adam.step(0.1), NumericError);
}

TEST(Entropy, Examples) {
  const std::vector<double> uniform(4, std::log(0.25));
  EXPECT_NEAR(shannon_entropy(uniform), std::log(4.0), 1e-15);
  const std::vector<double> certain{0.0, -INFINITY, -INFINITY};
  EXPECT_EQ(shannon_entropy(certain), 0.0);
  const std::vector<double> two{std::log(0.9), std::log(0.1)};
  EXPECT_NEAR(shannon_entropy(two), -(0.9 * std::log(0.9) + 0.1 * std::log(0.1)), 1e-15);
}

class TrainingTest : public ::testing::Test {
 protected:
  ExperimentConfig c = testing::tiny_config();
  DatasetSplits data = load_splits(c);
};

TEST_F(TrainingTest, EntropyTargetsFollowThreshold) {
  Rng rng(1);
  TransducerModel dense = build_baseline(c, rng);
  const auto all_slow = entropy_pretrain_targets(dense, data.dev, 0.0);
  const auto none = entropy_pretrain_targets(dense, data.dev, std::log(c.vocab()) + 1e-9);
  ASSERT_EQ(all_slow.size(), data.dev.size());
  for (std::size_t i = 0; i < data.dev.size(); ++i) {
    ASSERT_EQ(all_slow[i].size(), data.dev[i].features.rows());
    ASSERT_EQ(none[i].size(), data.dev[i].features.rows());
  }
  EXPECT_EQ(slow_target_ratio(all_slow), 1.0);
  EXPECT_EQ(slow_target_ratio(none), 0.0);
  // Raising the threshold can only turn slow frames fast.
  const auto mid = entropy_pretrain_targets(dense, data.dev, 1.5);
  const auto high = entropy_pretrain_targets(dense, data.dev, 1.7);
  for (std::size_t i = 0; i < mid.size(); ++i)
    for (std::size_t t = 0; t < mid[i].size(); ++t) EXPECT_GE(mid[i][t], high[i][t]);
}

TEST_F(TrainingTest, ArbitratorPretrainingLearnsTargets) {
  Rng rng(2);
  TransducerModel dense = build_baseline(c, rng);
  TransducerModel m = seed_from_pretrained(c, dense, rng);
  // Slow exactly on content-looking frames (large feature norm).
  std::vector<std::vector<int>> targets;
  for (const Utterance& u : data.train) {
    std::vector<int> row;
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      double e = 0.0;
      for (double v : u.features.row_span(t)) e += v * v;
      row.push_back(e > 1.0);
    }
    targets.push_back(row);
  }
  TensorList before;
  m.encoder.amrnn().branches()[0].collect("b0", before);
  const std::vector<Matrix> branch_before = snapshot(before);
  c.train.optimizer.lr = 0.03;
  c.train.optimizer.hold_steps = 300;
  const double acc = pretrain_arbitrator(c, m, data.train, targets, 400, 3);
  EXPECT_GT(acc, 0.9);
  // Only the arbitrator moves.
  EXPECT_EQ(snapshot(before), branch_before);
}

TEST_F(TrainingTest, PhaseBoundaryInvariants) {
  Rng rng(3);
  TransducerModel dense = build_baseline(c, rng);
  TransducerModel m = seed_from_pretrained(c, dense, rng);
  TensorList arb;
  m.encoder.amrnn().arbitrator().collect("arb", arb);
  const std::vector<Matrix> arb_before = snapshot(arb);

  Trainer t(c, m, data.train, 4);
  PhaseSpec p1;
  p1.name = "prune";
  p1.steps = c.train.prune_steps;
  p1.mode = SamplerMode::forced;
  p1.prune = true;
  t.run(p1);
  // Forced one-hot decisions: no sampling, no gradient into the arbitrator.
  for (const StepRecord& r : t.records()) {
    EXPECT_EQ(r.compute, 0.0);
    EXPECT_EQ(r.loss, r.nll);
  }
  EXPECT_EQ(snapshot(arb), arb_before);
  // The ramp has reached its final sparsity on every gate.
  for (std::size_t n : {kSlowBranch, kFastBranch}) {
    const double target = n == kSlowBranch ? c.branches.slow_target : c.branches.fast_target;
    for (LstmCell& cell : m.encoder.amrnn().branches()[n].layers())
      for (GateWeight& g : cell.gates())
        EXPECT_EQ(g.masked_weights().zeros(),
                  pruned_count(target, g.masked_weights().mask.size()));
  }
  EXPECT_LT(m.encoder.branch_frame_cost(kFastBranch), m.encoder.branch_frame_cost(kSlowBranch));

  // Masks stay fixed once pruning has ended.
  TensorList masks_all, masks;
  m.collect(masks_all);
  for (NamedTensor& x : masks_all)
    if (x.is_mask) masks.push_back(x);
  const std::vector<Matrix> mask_before = snapshot(masks);

  PhaseSpec p2;
  p2.name = "gumbel";
  p2.steps = 5;
  p2.mode = SamplerMode::soft;
  p2.compute = ComputeLoss::average;
  p2.lambda = 1e-5;
  p2.tau_start = 1.0;
  p2.tau_end = 0.5;
  t.run(p2);
  const auto& rec = t.records();
  ASSERT_EQ(rec.size(), p1.steps + p2.steps);
  EXPECT_EQ(rec[p1.steps].tau, 1.0);
  EXPECT_EQ(rec.back().tau, 0.5);
  for (std::size_t i = p1.steps; i < rec.size(); ++i) {
    EXPECT_GT(rec[i].compute, 0.0);
    EXPECT_NEAR(rec[i].loss, rec[i].nll + 1e-5 * rec[i].compute, 1e-9 * rec[i].loss);
  }
  EXPECT_EQ(snapshot(masks), mask_before);
  EXPECT_NE(snapshot(arb), arb_before);
}

TEST_F(TrainingTest, PruningPhaseNeedsSparseAmortizedModel) {
  Rng rng(4);
  TransducerModel dense = build_baseline(c, rng);
  Trainer t(c, dense, data.train, 5);
  PhaseSpec p;
  p.name = "bad";
  p.steps = 2;
  p.prune = true;
  EXPECT_THROW(t.run(p), ContractError);
  p.prune = false;
  p.compute = ComputeLoss::average;
  EXPECT_THROW(t.run(p), ContractError);
}

TEST_F(TrainingTest, StraightThroughUsesHardCosts) {
  c.train.train_cost = TrainCost::straight_through;
  Rng rng(5);
  TransducerModel dense = build_baseline(c, rng);
  TransducerModel m = seed_from_pretrained(c, dense, rng);
  // Make the branch costs differ before training with the cost loss.
  Trainer prune(c, m, data.train, 6);
  PhaseSpec p1;
  p1.name = "prune";
  p1.steps = c.train.prune_steps;
  p1.mode = SamplerMode::forced;
  p1.prune = true;
  prune.run(p1);

  Trainer t(c, m, data.train, 7);
  PhaseSpec p;
  p.name = "st";
  p.steps = 3;
  p.compute = ComputeLoss::average;
  p.lambda = 1e-5;
  t.run(p);
  const double lo = m.encoder.branch_frame_cost(kFastBranch);
  const double hi = m.encoder.branch_frame_cost(kSlowBranch);
  for (const StepRecord& r : t.records()) {
    EXPECT_GE(r.compute, lo - 1e-9);
    EXPECT_LE(r.compute, hi + 1e-9);
  }
}

TEST_F(TrainingTest, BaselineTrainingIsDeterministicAndLearns) {
  std::vector<StepRecord> ra, rb;
  TransducerModel a = train_baseline(c, data.train, &ra, nullptr);
  TransducerModel b = train_baseline(c, data.train, &rb, nullptr);
  TensorList ta, tb;
  a.collect(ta);
  b.collect(tb);
  EXPECT_EQ(snapshot(ta), snapshot(tb));
  ASSERT_EQ(ra.size(), c.train.baseline_steps);

  c.seed += 1;
  TransducerModel other = train_baseline(c, data.train, nullptr, nullptr);
  TensorList to;
  other.collect(to);
  EXPECT_NE(snapshot(to), snapshot(ta));

  c.seed -= 1;
  c.train.baseline_steps = 60;
  std::vector<StepRecord> longer;
  train_baseline(c, data.train, &longer, nullptr);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += longer[i].nll;
    last += longer[longer.size() - 1 - i].nll;
  }
  EXPECT_LT(last, first);
}

TEST_F(TrainingTest, SplitsAreDeterministicAndDisjointStreams) {
  const DatasetSplits again = load_splits(c);
  ASSERT_EQ(again.train.size(), c.data.train_utterances);
  ASSERT_EQ(again.test.size(), c.data.test_utterances);
  EXPECT_EQ(again.train[0].features, data.train[0].features);
  EXPECT_FALSE(data.train[0].features == data.test[0].features);
  EXPECT_EQ(data.train[0].features.cols(), c.feature_dim());
  EXPECT_NEAR(data.silence_ratio, 0.5, 0.1);
}

TEST_F(TrainingTest, ExperimentWritesOutputs) {
  testing::TempDir dir;
  c.output_dir = (dir.path() / "run").string();
  RunOptions opts;
  const ExperimentResult r = run_experiment(c, opts);
  const std::filesystem::path out = c.output_dir;
  for (const char* f : {"config.ini", "baseline.ckpt", "amortized.ckpt", "metrics.jsonl",
                        "trace_baseline.csv", "trace_amortized.csv", "steps.csv", "ref.txt",
                        "hyp_amortized.txt"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;

  std::ifstream in(out / "metrics.jsonl");
  std::vector<MetricsReport> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(from_json_line(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].encoder, "dense");
  EXPECT_EQ(lines[2].flops_per_frame, r.amortized.flops_per_frame);
  EXPECT_GT(r.lambda_avg, 0.0);
  EXPECT_GT(r.lambda_amr, 0.0);

  // The saved model reproduces the reported metrics.
  LoadedCheckpoint ck = load_checkpoint(out / "amortized.ckpt");
  const MetricsReport again = evaluate(ck.model, data.test, c.device, c.eval.beam_width, "again");
  EXPECT_EQ(again.token_error_rate, r.amortized.token_error_rate);
  EXPECT_EQ(again.flops_per_frame, r.amortized.flops_per_frame);
  EXPECT_EQ(again.latency_ms, r.amortized.latency_ms);

  // Re-running from the saved baseline skips baseline training but gives
  // the same amortized result.
  RunOptions reuse;
  reuse.write_outputs = false;
  reuse.baseline_checkpoint = out / "baseline.ckpt";
  const ExperimentResult r2 = run_experiment(c, reuse);
  EXPECT_EQ(r2.amortized.flops_per_frame, r.amortized.flops_per_frame);
  EXPECT_EQ(r2.amortized.token_error_rate, r.amortized.token_error_rate);
}

TEST_F(TrainingTest, FullRunIsDeterministic) {
  RunOptions opts;
  opts.write_outputs = false;
  const ExperimentResult a = run_experiment(c, opts);
  const ExperimentResult b = run_experiment(c, opts);
  for (auto [x, y] : {std::pair{&a.baseline, &b.baseline}, std::pair{&a.average, &b.average},
                      std::pair{&a.amortized, &b.amortized}})
    EXPECT_EQ(to_json_line(*x), to_json_line(*y));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].loss, b.records[i].loss);
}

// Trains the shipped toy baseline (a few seconds) and checks the share of
// frames marked slow on the dev set.
TEST(ToyEntropyTargets, SlowRatioWithinBand) {
  const ExperimentConfig toy = load_config(AMNET_TOY_CONFIG);
  const DatasetSplits data = load_splits(toy);
  TransducerModel baseline = train_baseline(toy, data.train, nullptr, nullptr);
  const double slow =
      slow_target_ratio(entropy_pretrain_targets(baseline, data.dev, toy.train.entropy_threshold));
  EXPECT_GE(slow, 0.2);
  EXPECT_LE(slow, 0.6);
}

TEST_F(TrainingTest, FactorizedExperimentRuns) {
  c.branches.method = CompressionMethod::factorized;
  c.branches.slow_target = 0.2;
  c.branches.fast_target = 0.6;
  RunOptions opts;
  opts.write_outputs = false;
  const ExperimentResult r = run_experiment(c, opts);
  EXPECT_EQ(r.amortized.branch_ratios.size(), 2u);
  EXPECT_LT(r.amortized.flops_per_frame, r.baseline.flops_per_frame * 1.2);
}

}  // namespace
}  // namespace amnet
