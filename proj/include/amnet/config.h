#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amnet/amortized.h"
#include "amnet/data.h"
#include "amnet/latency.h"

namespace amnet {

enum class CompressionMethod { sparse, factorized };
enum class BranchInit { scratch, seed };
// How q_t enters the compute loss while training with soft decisions.
enum class TrainCost { expected, straight_through };

struct DataConfig {
  SyntheticTask task;
  std::size_t train_utterances = 400;
  std::size_t dev_utterances = 60;
  std::size_t test_utterances = 100;
  // Optional directories of .feat/.lab files; empty means synthetic.
  std::string train_dir, dev_dir, test_dir;
  std::size_t downsample = 3;
  std::size_t stack = 3;
  std::size_t stride = 2;
};

struct ModelConfig {
  std::size_t encoder_layers = 2;
  std::size_t encoder_hidden = 32;
  std::size_t decoder_embed = 8;
  std::vector<std::size_t> decoder_hidden{32};
};

// Two branches: index 0 is the slow branch, index 1 the fast one. Targets
// are sparsity ratios (sparse) or FLOP compression ratios (factorized).
struct BranchConfig {
  CompressionMethod method = CompressionMethod::sparse;
  double slow_target = 0.15;
  double fast_target = 0.80;
  BranchInit init = BranchInit::seed;
};

struct PruningConfig {
  std::size_t frequency = 25;  // delta m
  std::size_t steps = 12;      // nu
};

struct SamplerConfig {
  double tau_start = 1.0;
  double tau_end = 0.5;
  std::size_t anneal_steps = 0;  // 0: anneal across the whole Gumbel phase
};

// Adaptive-moment optimizer with a warm-hold-decay learning rate: linear
// warm-up to `lr`, constant for `hold_steps`, then exponential decay that
// reaches lr * final_lr_factor at the end of the run.
struct OptimizerConfig {
  double lr = 3e-3;
  std::size_t warmup_steps = 50;
  std::size_t hold_steps = 300;
  double final_lr_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
};

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t baseline_steps = 600;
  std::size_t prune_steps = 300;      // phase 1: forced 50/50 branches, pruning
  std::size_t pretrain_steps = 150;   // arbitrator entropy pre-training
  std::size_t gumbel_steps = 400;     // phase 2: Gumbel sampling with L_avg
  std::size_t finetune_steps = 200;   // phase 3: L_amr fine-tuning
  std::optional<double> lambda_avg;   // unset: calibrated
  double lambda_avg_scale = 1.0;
  std::optional<double> lambda_amr;   // unset: calibrated
  double lambda_amr_scale = 1.0;
  double entropy_threshold = 2.0;     // nats
  TrainCost train_cost = TrainCost::expected;
  double finetune_lr_factor = 0.3;
  OptimizerConfig optimizer;
};

struct EvalConfig {
  std::size_t beam_width = 16;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/experiment";
  DataConfig data;
  ModelConfig model;
  BranchConfig branches;
  ArbitratorOptions arbitrator{{3}, false, true};
  bool literal_previous_decision = false;
  SamplerConfig sampler;
  PruningConfig pruning;
  DeviceProfile device;
  TrainConfig train;
  EvalConfig eval;

  std::size_t vocab() const { return data.task.labels + 1; }
  std::size_t feature_dim() const { return data.stack * data.task.dim; }
  // Throws ContractError naming the offending key.
  void validate() const;
};

// Line-oriented `key = value` pairs grouped under [section] headers; `#` and
// `;` start comment lines. Unknown sections or keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const ExperimentConfig& c);

// Applies one "section.key=value" override.
void apply_override(ExperimentConfig& c, const std::string& assignment);

}  // namespace amnet
