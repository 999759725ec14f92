#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "amnet/compression.h"
#include "amnet/matrix.h"
#include "amnet/tape.h"

namespace amnet {

using Rng = std::mt19937_64;

// Named view of a stored tensor, used by optimizers and checkpoints.
struct NamedTensor {
  std::string name;
  Matrix* matrix = nullptr;
  bool is_mask = false;
};
using TensorList = std::vector<NamedTensor>;

// Appends `t` unless the same storage is already listed (shared factors).
void append_unique(TensorList& list, NamedTensor t);

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng);

enum class WeightKind { dense, masked, factored };

// Linear map u -> u * W for one LSTM gate, W of shape (input+hidden) x hidden,
// stored densely, with a pruning mask, or as a truncated shared factor pair.
class GateWeight {
 public:
  GateWeight() = default;
  static GateWeight dense(Matrix w);
  static GateWeight masked(Matrix w);
  static GateWeight factored(std::shared_ptr<FactorPair> factors, std::size_t rank);

  WeightKind kind() const { return kind_; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t rank() const { return rank_; }

  Var apply(Var u);
  // FLOPs of one row-vector product.
  double flops() const;
  // The matrix this gate actually multiplies by.
  Matrix effective() const;
  // Trainable scalar count owned by this gate (shared factors count fully).
  std::size_t parameter_count() const;

  Matrix& dense_weights() { return dense_; }
  MaskedMatrix& masked_weights() { return masked_; }
  const MaskedMatrix& masked_weights() const { return masked_; }
  const std::shared_ptr<FactorPair>& factors() const { return factors_; }

  void collect(const std::string& prefix, TensorList& out);

 private:
  WeightKind kind_ = WeightKind::dense;
  Matrix dense_;
  MaskedMatrix masked_;
  std::shared_ptr<FactorPair> factors_;
  std::size_t rank_ = 0;
};

struct LstmState {
  Matrix h;
  Matrix c;
};

// Recorded counterpart of LstmState.
struct LstmVars {
  Var h;
  Var c;
};

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };

class LstmCell {
 public:
  LstmCell() = default;
  // Zero weights and biases except the forget bias, which is 1.
  LstmCell(std::size_t input_dim, std::size_t hidden_dim);
  static LstmCell random(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  std::array<GateWeight, 4>& gates() { return gates_; }
  const std::array<GateWeight, 4>& gates() const { return gates_; }
  std::array<Matrix, 4>& biases() { return biases_; }

  LstmState zero_state() const;
  LstmVars zero_state(Tape& tape) const;

  LstmVars step(Tape& tape, Var x, const LstmVars& prev);
  double step_flops() const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, TensorList& out);

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::array<GateWeight, 4> gates_;
  std::array<Matrix, 4> biases_;
};

// Convenience wrapper running one step without recording gradients.
LstmState lstm_step(LstmCell& cell, const Matrix& x, const LstmState& prev);

// Analytic FLOPs of a dense LSTM step.
double dense_lstm_step_flops(std::size_t input_dim, std::size_t hidden_dim);

class StackedLstm {
 public:
  StackedLstm() = default;
  // Layer i has input width dims[i] and output width dims[i + 1].
  static StackedLstm random(const std::vector<std::size_t>& dims, Rng& rng);

  std::size_t depth() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().input_dim(); }
  std::size_t output_dim() const { return layers_.back().hidden_dim(); }
  std::vector<LstmCell>& layers() { return layers_; }
  const std::vector<LstmCell>& layers() const { return layers_; }
  void add_layer(LstmCell cell);

  std::vector<LstmVars> zero_state(Tape& tape) const;
  // Advances every layer by one frame; returns the top-layer output.
  Var step(Tape& tape, Var x, std::vector<LstmVars>& states);
  double step_flops() const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, TensorList& out);

 private:
  std::vector<LstmCell> layers_;
};

// Top-layer outputs for every frame of a sequence.
std::vector<Var> stacked_forward(Tape& tape, StackedLstm& stack, const std::vector<Var>& x_seq);

// Affine output layer y = x W + b.
struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  static Linear random(std::size_t in, std::size_t out, Rng& rng);
  Var apply(Tape& tape, Var x);
  double flops() const { return 2.0 * weight.rows() * weight.cols() + weight.cols(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  void collect(const std::string& prefix, TensorList& out);
};

}  // namespace amnet
