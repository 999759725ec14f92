#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "amnet/config.h"
#include "amnet/data.h"
#include "amnet/metrics.h"
#include "amnet/transducer.h"

namespace amnet {

// ---------------------------------------------------------------------------
// Optimizer.

class Adam {
 public:
  Adam(TensorList params, const OptimizerConfig& options);
  // Applies one update from the accumulated gradients times `grad_scale`,
  // clipped to the configured global norm, then zeroes the gradients.
  // Returns the pre-clip gradient norm.
  double step(double lr, double grad_scale = 1.0);

 private:
  TensorList params_;
  OptimizerConfig options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Warm-hold-decay: linear warm-up, constant hold, exponential decay to
// lr * final_lr_factor at the last step.
double learning_rate(const OptimizerConfig& o, std::size_t step, std::size_t total_steps);

// Linear anneal from `start` at step 0 to `end` at step span - 1, then flat.
double temperature(double start, double end, std::size_t step, std::size_t span);

// ---------------------------------------------------------------------------
// Curriculum.

enum class ComputeLoss { none, average, amortized };

struct PhaseSpec {
  std::string name;
  std::size_t steps = 0;
  SamplerMode mode = SamplerMode::soft;
  ComputeLoss compute = ComputeLoss::none;
  double lambda = 0.0;
  double tau_start = 1.0;
  double tau_end = 1.0;
  std::size_t anneal_steps = 0;  // 0: the whole phase
  bool prune = false;
  double lr_scale = 1.0;
};

struct StepRecord {
  std::string phase;
  std::size_t step = 0;
  double lr = 0.0;
  double tau = 0.0;
  double loss = 0.0;     // batch mean
  double nll = 0.0;      // batch mean
  double compute = 0.0;  // batch mean of the compute loss (FLOPs or seconds)
  double fast_share = 0.0;  // mean decision weight on the fast branch
  double slow_sparsity = 0.0;
  double fast_sparsity = 0.0;
};

class Trainer {
 public:
  Trainer(const ExperimentConfig& config, TransducerModel& model, const Dataset& train,
          std::uint64_t seed);

  void run(const PhaseSpec& phase);
  const std::vector<StepRecord>& records() const { return records_; }
  void set_progress(std::ostream* out) { progress_ = out; }

  // Mean transducer loss and compute loss over `count` training utterances
  // under soft sampling at tau, without updating anything.
  std::pair<double, double> probe(ComputeLoss compute, double tau, std::size_t count);

 private:
  std::size_t next_index();
  void update_masks(std::size_t m);

  const ExperimentConfig& config_;
  TransducerModel& model_;
  const Dataset& train_;
  Rng rng_;
  GumbelSampler sampler_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<StepRecord> records_;
  std::ostream* progress_ = nullptr;
};

double shannon_entropy(std::span<const double> log_probs);

// Per-frame slow (1) / fast (0) targets: 1 iff the entropy of the baseline's
// output distribution exceeds `threshold` nats, taking the maximum over the
// decoder states visited at that frame by a greedy pass.
std::vector<std::vector<int>> entropy_pretrain_targets(TransducerModel& baseline,
                                                       const Dataset& data, double threshold);
double slow_target_ratio(const std::vector<std::vector<int>>& targets);

// Cross-entropy training of the arbitrator alone on the targets, with the
// previous target fed back as d_{t-1}. Returns the final frame accuracy.
double pretrain_arbitrator(const ExperimentConfig& config, TransducerModel& model,
                           const Dataset& data, const std::vector<std::vector<int>>& targets,
                           std::size_t steps, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Full experiment.

struct DatasetSplits {
  Dataset train, dev, test;  // stacked features
  double silence_ratio = -1.0;  // raw frames, synthetic data only
};
DatasetSplits load_splits(const ExperimentConfig& c);

struct ExperimentResult {
  MetricsReport baseline;
  MetricsReport average;    // after Gumbel training with L_avg
  MetricsReport amortized;  // after L_amr fine-tuning
  double lambda_avg = 0.0;
  double lambda_amr = 0.0;
  double entropy_slow_ratio = 0.0;  // dev set
  double arbitrator_accuracy = 0.0;
  double silence_ratio = -1.0;
  std::vector<StepRecord> records;
};

struct RunOptions {
  std::ostream* progress = nullptr;
  // Writes checkpoints, metrics.jsonl, traces and logs under output_dir.
  bool write_outputs = true;
  // Reuse a trained dense model instead of training one.
  std::filesystem::path baseline_checkpoint;
  // Start the amortized phases from this model instead of seeding.
  std::filesystem::path init_checkpoint;
  bool baseline_only = false;
};

TransducerModel train_baseline(const ExperimentConfig& c, const Dataset& train,
                               std::vector<StepRecord>* records, std::ostream* progress);

// Phases 1-3 starting from `model` (fresh or seeded). Fills the average and
// amortized reports and the calibrated lambdas.
void train_amortized(const ExperimentConfig& c, TransducerModel& model, TransducerModel& baseline,
                     const DatasetSplits& data, ExperimentResult& result, const RunOptions& opts);

ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& opts);

void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& records);

}  // namespace amnet
