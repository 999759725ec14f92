#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "amnet/checkpoint.h"
#include "amnet/error.h"
#include "amnet/metrics.h"
#include "amnet/model_io.h"
#include "amnet/training.h"
#include "support/tempdir.h"
#include "support/tiny_config.h"

namespace amnet {
namespace {

void prune_branches(const ExperimentConfig& c, TransducerModel& m) {
  for (std::size_t n : {kSlowBranch, kFastBranch})
    for (LstmCell& cell : m.encoder.amrnn().branches()[n].layers())
      for (GateWeight& g : cell.gates())
        if (g.kind() == WeightKind::masked)
          apply_magnitude_pruning(g.masked_weights(),
                                  n == kSlowBranch ? c.branches.slow_target : c.branches.fast_target);
}

void expect_same_tensors(TransducerModel& a, TransducerModel& b) {
  TensorList ta, tb;
  a.collect(ta);
  b.collect(tb);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].name, tb[i].name);
    EXPECT_EQ(ta[i].is_mask, tb[i].is_mask);
    EXPECT_TRUE(*ta[i].matrix == *tb[i].matrix) << ta[i].name;
  }
}

void expect_same_metrics(const MetricsReport& a, const MetricsReport& b) {
  EXPECT_EQ(a.token_error_rate, b.token_error_rate);
  EXPECT_EQ(a.flops_per_frame, b.flops_per_frame);
  EXPECT_EQ(a.latency_ms, b.latency_ms);
  EXPECT_EQ(a.branch_ratios, b.branch_ratios);
  EXPECT_EQ(a.encoder_parameters, b.encoder_parameters);
}

class CheckpointTest : public ::testing::Test {
 protected:
  ExperimentConfig c = testing::tiny_config();
  testing::TempDir dir;
  DatasetSplits data = load_splits(c);
};

TEST_F(CheckpointTest, DenseRoundTrip) {
  Rng rng(1);
  TransducerModel m = build_baseline(c, rng);
  save_checkpoint(dir.path() / "d.ckpt", c, m);
  LoadedCheckpoint back = load_checkpoint(dir.path() / "d.ckpt");
  EXPECT_EQ(format_config(back.config), format_config(c));
  EXPECT_EQ(back.model.encoder.kind(), EncoderKind::dense);
  expect_same_tensors(m, back.model);
  expect_same_metrics(evaluate(m, data.test, c.device, 4, "a"),
                      evaluate(back.model, data.test, c.device, 4, "b"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "d.ckpt.manifest"));
}

TEST_F(CheckpointTest, PrunedAmortizedRoundTrip) {
  Rng rng(2);
  TransducerModel dense = build_baseline(c, rng);
  TransducerModel m = seed_from_pretrained(c, dense, rng);
  prune_branches(c, m);
  save_checkpoint(dir.path() / "a.ckpt", c, m);
  LoadedCheckpoint back = load_checkpoint(dir.path() / "a.ckpt");
  expect_same_tensors(m, back.model);
  for (std::size_t n : {kSlowBranch, kFastBranch})
    EXPECT_EQ(m.encoder.branch_frame_cost(n), back.model.encoder.branch_frame_cost(n));
  expect_same_metrics(evaluate(m, data.test, c.device, 4, "a"),
                      evaluate(back.model, data.test, c.device, 4, "b"));
}

TEST_F(CheckpointTest, FactorizedRoundTripKeepsSharing) {
  c.branches.method = CompressionMethod::factorized;
  c.branches.slow_target = 0.2;
  c.branches.fast_target = 0.6;
  Rng rng(3);
  TransducerModel dense = build_baseline(c, rng);
  TransducerModel m = seed_from_pretrained(c, dense, rng);
  save_checkpoint(dir.path() / "f.ckpt", c, m);
  LoadedCheckpoint back = load_checkpoint(dir.path() / "f.ckpt");
  expect_same_tensors(m, back.model);
  auto& slow = back.model.encoder.amrnn().branches()[kSlowBranch].layers()[0].gates()[0];
  auto& fast = back.model.encoder.amrnn().branches()[kFastBranch].layers()[0].gates()[0];
  EXPECT_EQ(slow.factors().get(), fast.factors().get());
  EXPECT_GT(slow.rank(), fast.rank());
  expect_same_metrics(evaluate(m, data.test, c.device, 4, "a"),
                      evaluate(back.model, data.test, c.device, 4, "b"));
}

TEST_F(CheckpointTest, RejectsDamage) {
  Rng rng(4);
  TransducerModel m = build_baseline(c, rng);
  const auto path = dir.path() / "x.ckpt";
  save_checkpoint(path, c, m);
  const auto size = std::filesystem::file_size(path);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    char b = 0;
    f.read(&b, 1);
    f.seekp(static_cast<std::streamoff>(size / 2));
    b ^= 0x10;
    f.write(&b, 1);
  }
  EXPECT_THROW(load_checkpoint(path), ContractError);

  save_checkpoint(path, c, m);
  std::filesystem::resize_file(path, size - 3);
  EXPECT_THROW(load_checkpoint(path), ContractError);

  std::ofstream(path, std::ios::binary) << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint(path), ContractError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt"), ContractError);
}

TEST_F(CheckpointTest, ManifestListsTensors) {
  Rng rng(5);
  TransducerModel m = build_baseline(c, rng);
  const std::string text = checkpoint_manifest(c, m);
  TensorList tensors;
  m.collect(tensors);
  for (const NamedTensor& t : tensors) EXPECT_NE(text.find(t.name), std::string::npos) << t.name;
}

}  // namespace
}  // namespace amnet
