#include "amnet/lstm.h"

#include <algorithm>
#include <cmath>

#include "amnet/error.h"
#include "amnet/ops.h"

namespace amnet {
namespace {

const char* kGateNames[4] = {"i", "f", "g", "o"};

}  // namespace

void append_unique(TensorList& list, NamedTensor t) {
  for (const NamedTensor& e : list)
    if (e.matrix == t.matrix) return;
  list.push_back(std::move(t));
}

void init_uniform(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : m.data()) v = dist(rng);
}

GateWeight GateWeight::dense(Matrix w) {
  GateWeight g;
  g.kind_ = WeightKind::dense;
  g.dense_ = std::move(w);
  return g;
}

GateWeight GateWeight::masked(Matrix w) {
  GateWeight g;
  g.kind_ = WeightKind::masked;
  g.masked_ = MaskedMatrix(std::move(w));
  return g;
}

GateWeight GateWeight::factored(std::shared_ptr<FactorPair> factors, std::size_t rank) {
  AMNET_REQUIRE(factors != nullptr, "GateWeight::factored: null factors");
  AMNET_REQUIRE(rank >= 1 && rank <= factors->rank(), "GateWeight::factored: invalid rank");
  GateWeight g;
  g.kind_ = WeightKind::factored;
  g.factors_ = std::move(factors);
  g.rank_ = rank;
  return g;
}

std::size_t GateWeight::rows() const {
  switch (kind_) {
    case WeightKind::dense: return dense_.rows();
    case WeightKind::masked: return masked_.weights.rows();
    case WeightKind::factored: return factors_->out_dim();
  }
  return 0;
}

std::size_t GateWeight::cols() const {
  switch (kind_) {
    case WeightKind::dense: return dense_.cols();
    case WeightKind::masked: return masked_.weights.cols();
    case WeightKind::factored: return factors_->in_dim();
  }
  return 0;
}

Var GateWeight::apply(Var u) {
  switch (kind_) {
    case WeightKind::dense: return matmul(u, u.tape()->parameter(dense_));
    case WeightKind::masked: return masked_matmul(u, masked_);
    case WeightKind::factored: return truncated_row_product(u, *factors_, rank_);
  }
  throw ContractError("GateWeight::apply: unknown kind");
}

double GateWeight::flops() const {
  switch (kind_) {
    case WeightKind::dense: return dense_flops(rows(), cols());
    case WeightKind::masked: return 2.0 * static_cast<double>(masked_.nonzeros());
    case WeightKind::factored: return truncated_flops(rows(), cols(), rank_);
  }
  return 0.0;
}

Matrix GateWeight::effective() const {
  switch (kind_) {
    case WeightKind::dense: {
      Matrix m = dense_;
      m.clear_grad();
      return m;
    }
    case WeightKind::masked: return masked_.effective();
    case WeightKind::factored: return factors_->reconstruct(rank_);
  }
  return {};
}

std::size_t GateWeight::parameter_count() const {
  switch (kind_) {
    case WeightKind::dense: return dense_.size();
    case WeightKind::masked: return masked_.weights.size();
    case WeightKind::factored: return factors_->p1.size() + factors_->p2.size();
  }
  return 0;
}

void GateWeight::collect(const std::string& prefix, TensorList& out) {
  switch (kind_) {
    case WeightKind::dense: append_unique(out, {prefix + ".w", &dense_, false}); break;
    case WeightKind::masked:
      append_unique(out, {prefix + ".w", &masked_.weights, false});
      append_unique(out, {prefix + ".mask", &masked_.mask, true});
      break;
    case WeightKind::factored:
      append_unique(out, {prefix + ".p1", &factors_->p1, false});
      append_unique(out, {prefix + ".p2", &factors_->p2, false});
      break;
  }
}

LstmCell::LstmCell(std::size_t input_dim, std::size_t hidden_dim)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  AMNET_REQUIRE(input_dim > 0 && hidden_dim > 0, "LstmCell: dimensions must be positive");
  for (std::size_t g = 0; g < 4; ++g) {
    gates_[g] = GateWeight::dense(Matrix(input_dim + hidden_dim, hidden_dim));
    biases_[g] = Matrix(1, hidden_dim, g == kForgetGate ? 1.0 : 0.0);
  }
}

LstmCell LstmCell::random(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmCell cell(input_dim, hidden_dim);
  for (GateWeight& g : cell.gates_) init_uniform(g.dense_weights(), input_dim + hidden_dim, rng);
  return cell;
}

LstmState LstmCell::zero_state() const {
  return {Matrix(1, hidden_dim_), Matrix(1, hidden_dim_)};
}

LstmVars LstmCell::zero_state(Tape& tape) const {
  return {tape.constant(Matrix(1, hidden_dim_)), tape.constant(Matrix(1, hidden_dim_))};
}

LstmVars LstmCell::step(Tape& tape, Var x, const LstmVars& prev) {
  AMNET_REQUIRE(x.rows() == 1 && x.cols() == input_dim_,
                "lstm_step: input is " + x.value().shape_string() + ", expected 1x" +
                    std::to_string(input_dim_));
  AMNET_REQUIRE(prev.h.cols() == hidden_dim_ && prev.c.cols() == hidden_dim_,
                "lstm_step: state width mismatch");
  Var u = concat_cols({x, prev.h});
  std::array<Var, 4> act;
  for (std::size_t g = 0; g < 4; ++g) {
    Var z = add(gates_[g].apply(u), tape.parameter(biases_[g]));
    act[g] = g == kCellGate ? tanh(z) : sigmoid(z);
  }
  Var c = add(mul(act[kForgetGate], prev.c), mul(act[kInputGate], act[kCellGate]));
  Var h = mul(act[kOutputGate], tanh(c));
  return {h, c};
}

double LstmCell::step_flops() const {
  double f = 0.0;
  for (const GateWeight& g : gates_) f += g.flops() + 2.0 * hidden_dim_;
  return f + 5.0 * hidden_dim_;
}

std::size_t LstmCell::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t g = 0; g < 4; ++g) n += gates_[g].parameter_count() + biases_[g].size();
  return n;
}

void LstmCell::collect(const std::string& prefix, TensorList& out) {
  for (std::size_t g = 0; g < 4; ++g) {
    gates_[g].collect(prefix + "." + kGateNames[g], out);
    append_unique(out, {prefix + "." + kGateNames[g] + ".b", &biases_[g], false});
  }
}

LstmState lstm_step(LstmCell& cell, const Matrix& x, const LstmState& prev) {
  Tape tape(false);
  LstmVars out = cell.step(tape, tape.constant(x), {tape.constant(prev.h), tape.constant(prev.c)});
  return {out.h.value(), out.c.value()};
}

double dense_lstm_step_flops(std::size_t input_dim, std::size_t hidden_dim) {
  const double h = static_cast<double>(hidden_dim);
  return 4.0 * (dense_flops(input_dim + hidden_dim, hidden_dim) + 2.0 * h) + 5.0 * h;
}

StackedLstm StackedLstm::random(const std::vector<std::size_t>& dims, Rng& rng) {
  AMNET_REQUIRE(dims.size() >= 2, "StackedLstm: need at least input and one layer width");
  StackedLstm s;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    s.layers_.push_back(LstmCell::random(dims[i], dims[i + 1], rng));
  return s;
}

void StackedLstm::add_layer(LstmCell cell) {
  AMNET_REQUIRE(layers_.empty() || layers_.back().hidden_dim() == cell.input_dim(),
                "StackedLstm: layer input width does not match previous output width");
  layers_.push_back(std::move(cell));
}

std::vector<LstmVars> StackedLstm::zero_state(Tape& tape) const {
  std::vector<LstmVars> s;
  s.reserve(layers_.size());
  for (const LstmCell& c : layers_) s.push_back(c.zero_state(tape));
  return s;
}

Var StackedLstm::step(Tape& tape, Var x, std::vector<LstmVars>& states) {
  AMNET_REQUIRE(states.size() == layers_.size(), "StackedLstm::step: state depth mismatch");
  Var in = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    states[l] = layers_[l].step(tape, in, states[l]);
    in = states[l].h;
  }
  return in;
}

double StackedLstm::step_flops() const {
  double f = 0.0;
  for (const LstmCell& c : layers_) f += c.step_flops();
  return f;
}

std::size_t StackedLstm::parameter_count() const {
  std::size_t n = 0;
  for (const LstmCell& c : layers_) n += c.parameter_count();
  return n;
}

void StackedLstm::collect(const std::string& prefix, TensorList& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layers_[l].collect(prefix + ".l" + std::to_string(l), out);
}

std::vector<Var> stacked_forward(Tape& tape, StackedLstm& stack, const std::vector<Var>& x_seq) {
  AMNET_REQUIRE(!x_seq.empty(), "stacked_forward: empty sequence");
  std::vector<LstmVars> states = stack.zero_state(tape);
  std::vector<Var> out;
  out.reserve(x_seq.size());
  for (Var x : x_seq) out.push_back(stack.step(tape, x, states));
  return out;
}

Linear Linear::random(std::size_t in, std::size_t out, Rng& rng) {
  Linear l{Matrix(in, out), Matrix(1, out)};
  init_uniform(l.weight, in, rng);
  return l;
}

Var Linear::apply(Tape& tape, Var x) {
  return add(matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

void Linear::collect(const std::string& prefix, TensorList& out) {
  append_unique(out, {prefix + ".w", &weight, false});
  append_unique(out, {prefix + ".b", &bias, false});
}

}  // namespace amnet
