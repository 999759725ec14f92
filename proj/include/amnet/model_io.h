#pragma once

#include <cstddef>

#include "amnet/config.h"
#include "amnet/transducer.h"

namespace amnet {

constexpr std::size_t kSlowBranch = 0;
constexpr std::size_t kFastBranch = 1;

// Dense RNN-T baseline: stacked LSTM encoder, projection, prediction network.
TransducerModel build_baseline(const ExperimentConfig& c, Rng& rng);

// Two-branch amortized model initialised from scratch (sparse method only).
TransducerModel build_amortized(const ExperimentConfig& c, Rng& rng);

// Extracts the dense encoder of `pretrained` into both branches. Sparse:
// weights copied, masks all ones. Factorized: one truncated-SVD factor pair
// per gate at the slow rank, the fast branch using its leading columns.
// Projection and prediction network are copied; the arbitrator is fresh.
TransducerModel seed_from_pretrained(const ExperimentConfig& c, TransducerModel& pretrained,
                                     Rng& rng);

// Gate ranks of the factorized branches for encoder layer `layer`.
std::size_t factor_rank(const ExperimentConfig& c, std::size_t layer, std::size_t branch);

// Model of the given kind with the configured layout and arbitrary values,
// ready to receive tensors from a checkpoint.
TransducerModel build_layout(const ExperimentConfig& c, EncoderKind kind);

// Deep copy (shared factor storage is duplicated, not aliased).
TransducerModel clone_model(const ExperimentConfig& c, TransducerModel& model);

// Copies every tensor of `src` into the same-named tensor of `dst`. Both
// models must have identical layouts.
void copy_tensors(TransducerModel& src, TransducerModel& dst);

// Parameter counts used for overhead reporting.
struct ParameterCounts {
  std::size_t encoder = 0;     // trainable encoder parameters incl. arbitrator
  std::size_t arbitrator = 0;
  std::size_t decoder = 0;
  // Arbitrator share of the encoder excluding the arbitrator itself.
  double arbitrator_share() const;
};
ParameterCounts parameter_counts(const TransducerModel& model);

}  // namespace amnet
