#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "amnet/lstm.h"
#include "amnet/tape.h"

namespace amnet {

// ---------------------------------------------------------------------------
// Gumbel-Softmax sampling.

enum class SamplerMode {
  soft,     // Gumbel-Softmax relaxation (training)
  one_hot,  // argmax of the arbitration logits (run time)
  forced,   // random one-hot branch, independent of the arbitrator
};

struct GumbelSampler {
  double tau = 1.0;
  SamplerMode mode = SamplerMode::soft;
  // Probability of forcing branch 0 in forced mode; the rest is uniform
  // over the remaining branches.
  double forced_first_probability = 0.5;
  Rng rng{0};

  // n i.i.d. Gumbel(0, 1) draws, g = -log(-log(u)) with u clamped to
  // [1e-12, 1 - 1e-12].
  std::vector<double> draw_noise(std::size_t n);
  std::size_t draw_forced_branch(std::size_t n);
};

// d_n = exp((log pi_n + g_n) / tau) / sum_j exp((log pi_j + g_j) / tau) with
// pi = softmax(logits).
std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau,
                                          std::span<const double> noise);
Var gumbel_softmax_sample(Var logits, double tau, std::span<const double> noise);

std::size_t argmax(std::span<const double> v);
Matrix one_hot(std::size_t index, std::size_t n);

// ---------------------------------------------------------------------------
// Arbitrator.

struct ArbitratorOptions {
  std::vector<std::size_t> hidden{128, 128};
  bool use_prev_state = false;    // feed h_{t-1} of the amortized layer
  bool use_prev_decision = true;  // feed d_{t-1}
};

class Arbitrator {
 public:
  Arbitrator() = default;
  Arbitrator(std::size_t feature_dim, std::size_t state_dim, std::size_t branches,
             const ArbitratorOptions& options, Rng& rng);

  // Zero-weight arbitrator (uniform logits) with the same layout.
  void zero_weights();

  std::size_t branches() const { return projection_.weight.cols(); }
  std::size_t input_dim() const { return lstm_.input_dim(); }
  const ArbitratorOptions& options() const { return options_; }

  std::vector<LstmVars> zero_state(Tape& tape) const { return lstm_.zero_state(tape); }
  // Logits k_t. Optional inputs must be supplied exactly when enabled.
  Var arbitrate(Tape& tape, Var x, std::optional<Var> h_prev, std::optional<Var> d_prev,
                std::vector<LstmVars>& state);

  double flops() const { return lstm_.step_flops() + projection_.flops(); }
  std::size_t parameter_count() const {
    return lstm_.parameter_count() + projection_.parameter_count();
  }
  void collect(const std::string& prefix, TensorList& out);

  StackedLstm& lstm() { return lstm_; }
  Linear& projection() { return projection_; }

 private:
  ArbitratorOptions options_;
  StackedLstm lstm_;
  Linear projection_;
};

// Analytic parameter count of an arbitrator, without allocating it.
std::size_t arbitrator_parameter_count(std::size_t feature_dim, std::size_t state_dim,
                                       std::size_t branches, const ArbitratorOptions& options);

// ---------------------------------------------------------------------------
// State combiner.

// {h, c} = sum_n d(n) {h_n, c_n}.
LstmState combine_states(std::span<const double> d, std::span<const LstmState> branch_states);
LstmVars combine_states(Var d, const std::vector<LstmVars>& branch_states);

// ---------------------------------------------------------------------------
// Amortized recurrent layer.

struct AmRnnState {
  std::vector<LstmVars> layers;  // one per stacked layer, shared by all branches
  std::vector<LstmVars> arbitrator;
  Var prev_decision;  // d_{t-1}, zeros before the first frame
  Var pending_decision;  // decision applied to the next frame in literal mode
};

struct AmRnnStepResult {
  Var output;  // top-layer h_t
  Var logits;  // k_t
  Var decision;  // d_t used by the combiner (1 x N)
  Var cost;  // q_t in FLOPs (1 x 1)
  std::size_t branch = 0;  // argmax of the decision
};

class AmRnnLayer {
 public:
  AmRnnLayer() = default;
  // All branches must share input and per-layer state widths.
  AmRnnLayer(std::vector<StackedLstm> branches, Arbitrator arbitrator);

  std::size_t branch_count() const { return branches_.size(); }
  std::size_t input_dim() const { return branches_.front().input_dim(); }
  std::size_t output_dim() const { return branches_.front().output_dim(); }
  std::vector<StackedLstm>& branches() { return branches_; }
  const std::vector<StackedLstm>& branches() const { return branches_; }
  Arbitrator& arbitrator() { return arbitrator_; }
  const Arbitrator& arbitrator() const { return arbitrator_; }

  // Combine with d_{t-1} instead of d_t.
  void set_literal_previous_decision(bool on) { literal_previous_decision_ = on; }
  bool literal_previous_decision() const { return literal_previous_decision_; }

  AmRnnState initial_state(Tape& tape) const;

  // Training step: every branch runs and the states are mixed by the
  // sampler's decision.
  AmRnnStepResult step_train(Tape& tape, Var x, AmRnnState& state, GumbelSampler& sampler);
  // Same, with the combining decision supplied by the caller.
  AmRnnStepResult step_with_decision(Tape& tape, Var x, AmRnnState& state, Var logits, Var d);
  // Run-time step: only the argmax branch runs.
  AmRnnStepResult step_runtime(Tape& tape, Var x, AmRnnState& state);

  Var arbitrate(Tape& tape, Var x, AmRnnState& state);

  double branch_cost(std::size_t n) const { return branches_.at(n).step_flops(); }
  double arbitrator_cost() const { return arbitrator_.flops(); }
  // q = sum_n d(n) cost(B_n) + cost(arbitrator).
  double frame_cost(std::span<const double> d) const;
  Var frame_cost(Tape& tape, Var d) const;

  std::size_t parameter_count() const;
  void collect(const std::string& prefix, TensorList& out);

 private:
  std::vector<StackedLstm> branches_;
  Arbitrator arbitrator_;
  bool literal_previous_decision_ = false;
};

// Per-frame arbitration record for one utterance.
struct DecisionSequence {
  std::vector<std::vector<double>> decisions;  // d_t (one-hot when hard)
  std::vector<std::vector<double>> logits;     // k_t
  std::vector<std::size_t> branches;           // argmax d_t
  std::vector<double> costs;                   // q_t in FLOPs
  bool hard = false;

  std::size_t size() const { return costs.size(); }
  // Fraction of frames per branch; sums to 1 for a non-empty sequence.
  std::vector<double> branch_ratios(std::size_t branch_count) const;
};

}  // namespace amnet
