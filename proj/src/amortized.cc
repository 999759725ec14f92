#include "amnet/amortized.h"

#include <algorithm>
#include <cmath>

#include "amnet/error.h"
#include "amnet/ops.h"

namespace amnet {

std::vector<double> GumbelSampler::draw_noise(std::size_t n) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> g(n);
  for (double& v : g) {
    const double u = std::clamp(uniform(rng), 1e-12, 1.0 - 1e-12);
    v = -std::log(-std::log(u));
  }
  return g;
}

std::size_t GumbelSampler::draw_forced_branch(std::size_t n) {
  AMNET_REQUIRE(n >= 2, "draw_forced_branch: need at least two branches");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  if (u < forced_first_probability) return 0;
  const double rest = (u - forced_first_probability) / (1.0 - forced_first_probability);
  return std::min<std::size_t>(n - 1, 1 + static_cast<std::size_t>(rest * (n - 1)));
}

std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau,
                                          std::span<const double> noise) {
  AMNET_REQUIRE(tau > 0.0, "gumbel_softmax_sample: tau must be positive");
  AMNET_REQUIRE(noise.size() == logits.size(), "gumbel_softmax_sample: noise length mismatch");
  const double lse = logsumexp(logits);
  std::vector<double> z(logits.size());
  for (std::size_t n = 0; n < z.size(); ++n) z[n] = ((logits[n] - lse) + noise[n]) * (1.0 / tau);
  softmax_inplace(z);
  return z;
}

Var gumbel_softmax_sample(Var logits, double tau, std::span<const double> noise) {
  AMNET_REQUIRE(tau > 0.0, "gumbel_softmax_sample: tau must be positive");
  AMNET_REQUIRE(logits.rows() == 1 && noise.size() == logits.cols(),
                "gumbel_softmax_sample: noise length mismatch");
  Tape& tape = *logits.tape();
  Var log_pi = log_softmax_rows(logits);
  Var perturbed = add(log_pi, tape.constant(Matrix::row(noise)));
  return softmax_rows(scale(perturbed, 1.0 / tau));
}

std::size_t argmax(std::span<const double> v) {
  AMNET_REQUIRE(!v.empty(), "argmax: empty input");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Matrix one_hot(std::size_t index, std::size_t n) {
  AMNET_REQUIRE(index < n, "one_hot: index out of range");
  Matrix m(1, n);
  m[index] = 1.0;
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t arbitrator_input_dim(std::size_t feature_dim, std::size_t state_dim,
                                 std::size_t branches, const ArbitratorOptions& o) {
  return feature_dim + (o.use_prev_state ? state_dim : 0) + (o.use_prev_decision ? branches : 0);
}

}  // namespace

Arbitrator::Arbitrator(std::size_t feature_dim, std::size_t state_dim, std::size_t branches,
                       const ArbitratorOptions& options, Rng& rng)
    : options_(options) {
  AMNET_REQUIRE(branches >= 2, "Arbitrator: need at least two branches");
  AMNET_REQUIRE(!options.hidden.empty(), "Arbitrator: need at least one recurrent layer");
  std::vector<std::size_t> dims{arbitrator_input_dim(feature_dim, state_dim, branches, options)};
  dims.insert(dims.end(), options.hidden.begin(), options.hidden.end());
  lstm_ = StackedLstm::random(dims, rng);
  projection_ = Linear::random(options.hidden.back(), branches, rng);
}

void Arbitrator::zero_weights() {
  TensorList tensors;
  collect("arb", tensors);
  for (NamedTensor& t : tensors) t.matrix->fill(0.0);
}

Var Arbitrator::arbitrate(Tape& tape, Var x, std::optional<Var> h_prev, std::optional<Var> d_prev,
                          std::vector<LstmVars>& state) {
  AMNET_REQUIRE(h_prev.has_value() == options_.use_prev_state,
                "arbitrate: previous state input does not match configuration");
  AMNET_REQUIRE(d_prev.has_value() == options_.use_prev_decision,
                "arbitrate: previous decision input does not match configuration");
  std::vector<Var> parts{x};
  if (h_prev) parts.push_back(*h_prev);
  if (d_prev) parts.push_back(*d_prev);
  Var in = parts.size() == 1 ? x : concat_cols(parts);
  AMNET_REQUIRE(in.cols() == lstm_.input_dim(),
                "arbitrate: input width " + std::to_string(in.cols()) + ", expected " +
                    std::to_string(lstm_.input_dim()));
  Var top = lstm_.step(tape, in, state);
  return projection_.apply(tape, top);
}

void Arbitrator::collect(const std::string& prefix, TensorList& out) {
  lstm_.collect(prefix + ".lstm", out);
  projection_.collect(prefix + ".proj", out);
}

std::size_t arbitrator_parameter_count(std::size_t feature_dim, std::size_t state_dim,
                                       std::size_t branches, const ArbitratorOptions& options) {
  std::size_t in = arbitrator_input_dim(feature_dim, state_dim, branches, options);
  std::size_t n = 0;
  for (std::size_t h : options.hidden) {
    n += 4 * ((in + h) * h + h);
    in = h;
  }
  return n + in * branches + branches;
}

// ---------------------------------------------------------------------------

LstmState combine_states(std::span<const double> d, std::span<const LstmState> branch_states) {
  AMNET_REQUIRE(!branch_states.empty() && d.size() == branch_states.size(),
                "combine_states: decision length does not match branch count");
  const std::size_t width = branch_states.front().h.cols();
  LstmState out{Matrix(1, width), Matrix(1, width)};
  for (std::size_t n = 0; n < d.size(); ++n) {
    const LstmState& s = branch_states[n];
    AMNET_REQUIRE(s.h.cols() == width && s.c.cols() == width,
                  "combine_states: branch state widths differ");
    for (std::size_t k = 0; k < width; ++k) {
      out.h[k] += d[n] * s.h[k];
      out.c[k] += d[n] * s.c[k];
    }
  }
  return out;
}

LstmVars combine_states(Var d, const std::vector<LstmVars>& branch_states) {
  AMNET_REQUIRE(d.rows() == 1 && d.cols() == branch_states.size(),
                "combine_states: decision length does not match branch count");
  const std::size_t width = branch_states.front().h.cols();
  std::vector<Var> weights;
  weights.reserve(d.cols());
  for (std::size_t n = 0; n < d.cols(); ++n) {
    AMNET_REQUIRE(branch_states[n].h.cols() == width && branch_states[n].c.cols() == width,
                  "combine_states: branch state widths differ");
    weights.push_back(element(d, 0, n));
  }
  Var h = scale_by(branch_states[0].h, weights[0]);
  Var c = scale_by(branch_states[0].c, weights[0]);
  for (std::size_t n = 1; n < branch_states.size(); ++n) {
    h = add(h, scale_by(branch_states[n].h, weights[n]));
    c = add(c, scale_by(branch_states[n].c, weights[n]));
  }
  return {h, c};
}

// ---------------------------------------------------------------------------

AmRnnLayer::AmRnnLayer(std::vector<StackedLstm> branches, Arbitrator arbitrator)
    : branches_(std::move(branches)), arbitrator_(std::move(arbitrator)) {
  AMNET_REQUIRE(branches_.size() >= 2, "AmRnnLayer: need at least two branches");
  AMNET_REQUIRE(arbitrator_.branches() == branches_.size(),
                "AmRnnLayer: arbitrator output count does not match branch count");
  const StackedLstm& ref = branches_.front();
  for (const StackedLstm& b : branches_) {
    AMNET_REQUIRE(b.depth() == ref.depth(), "AmRnnLayer: branches differ in depth");
    for (std::size_t l = 0; l < ref.depth(); ++l) {
      AMNET_REQUIRE(b.layers()[l].input_dim() == ref.layers()[l].input_dim() &&
                        b.layers()[l].hidden_dim() == ref.layers()[l].hidden_dim(),
                    "AmRnnLayer: branches must share state sizes");
    }
  }
}

AmRnnState AmRnnLayer::initial_state(Tape& tape) const {
  AmRnnState s;
  s.layers = branches_.front().zero_state(tape);
  s.arbitrator = arbitrator_.zero_state(tape);
  s.prev_decision = tape.constant(Matrix(1, branches_.size()));
  s.pending_decision =
      tape.constant(Matrix(1, branches_.size(), 1.0 / static_cast<double>(branches_.size())));
  return s;
}

Var AmRnnLayer::arbitrate(Tape& tape, Var x, AmRnnState& state) {
  const ArbitratorOptions& o = arbitrator_.options();
  std::optional<Var> h_prev;
  std::optional<Var> d_prev;
  if (o.use_prev_state) h_prev = state.layers.back().h;
  if (o.use_prev_decision) d_prev = state.prev_decision;
  return arbitrator_.arbitrate(tape, x, h_prev, d_prev, state.arbitrator);
}

AmRnnStepResult AmRnnLayer::step_train(Tape& tape, Var x, AmRnnState& state,
                                       GumbelSampler& sampler) {
  Var logits = arbitrate(tape, x, state);
  Var d;
  switch (sampler.mode) {
    case SamplerMode::soft:
      d = gumbel_softmax_sample(logits, sampler.tau, sampler.draw_noise(branches_.size()));
      break;
    case SamplerMode::one_hot:
      d = tape.constant(one_hot(argmax(logits.value().data()), branches_.size()));
      break;
    case SamplerMode::forced:
      d = tape.constant(one_hot(sampler.draw_forced_branch(branches_.size()), branches_.size()));
      break;
  }
  return step_with_decision(tape, x, state, logits, d);
}

AmRnnStepResult AmRnnLayer::step_with_decision(Tape& tape, Var x, AmRnnState& state, Var logits,
                                               Var d) {
  AMNET_REQUIRE(d.rows() == 1 && d.cols() == branches_.size(),
                "step_with_decision: decision must be 1 x branch_count");
  Var gate = literal_previous_decision_ ? state.pending_decision : d;

  std::vector<std::vector<LstmVars>> per_branch(branches_.size());
  for (std::size_t n = 0; n < branches_.size(); ++n) {
    per_branch[n] = state.layers;
    branches_[n].step(tape, x, per_branch[n]);
  }
  std::vector<LstmVars> combined(state.layers.size());
  std::vector<LstmVars> layer_states(branches_.size());
  for (std::size_t l = 0; l < combined.size(); ++l) {
    for (std::size_t n = 0; n < branches_.size(); ++n) layer_states[n] = per_branch[n][l];
    combined[l] = combine_states(gate, layer_states);
  }

  AmRnnStepResult r;
  r.cost = frame_cost(tape, gate);
  r.branch = argmax(gate.value().data());
  r.decision = gate;
  r.logits = logits;
  state.layers = std::move(combined);
  state.prev_decision = d;
  if (literal_previous_decision_) state.pending_decision = d;
  r.output = state.layers.back().h;
  return r;
}

AmRnnStepResult AmRnnLayer::step_runtime(Tape& tape, Var x, AmRnnState& state) {
  Var logits = arbitrate(tape, x, state);
  const std::size_t k = argmax(logits.value().data());
  Var d = tape.constant(one_hot(k, branches_.size()));
  Var gate = literal_previous_decision_ ? state.pending_decision : d;
  const std::size_t chosen = argmax(gate.value().data());

  branches_[chosen].step(tape, x, state.layers);

  AmRnnStepResult r;
  r.cost = tape.constant(Matrix(1, 1, frame_cost(gate.value().data())));
  r.branch = chosen;
  r.decision = gate;
  r.logits = logits;
  state.prev_decision = d;
  if (literal_previous_decision_) state.pending_decision = d;
  r.output = state.layers.back().h;
  return r;
}

double AmRnnLayer::frame_cost(std::span<const double> d) const {
  AMNET_REQUIRE(d.size() == branches_.size(), "frame_cost: decision length mismatch");
  double q = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) q += d[n] * branch_cost(n);
  return q + arbitrator_cost();
}

Var AmRnnLayer::frame_cost(Tape& tape, Var d) const {
  std::vector<double> costs(branches_.size());
  for (std::size_t n = 0; n < costs.size(); ++n) costs[n] = branch_cost(n);
  // Cost accounting only; not part of the modelled compute.
  return tape.record(Matrix(1, 1, frame_cost(d.value().data())), {d},
                     [costs](const Matrix& g, std::span<Matrix* const> gi) {
                       for (std::size_t n = 0; n < costs.size(); ++n) (*gi[0])[n] += g[0] * costs[n];
                     });
}

std::size_t AmRnnLayer::parameter_count() const {
  // Shared factor storage is counted once.
  TensorList tensors;
  const_cast<AmRnnLayer*>(this)->collect("amrnn", tensors);
  std::size_t n = 0;
  for (const NamedTensor& t : tensors)
    if (!t.is_mask) n += t.matrix->size();
  return n;
}

void AmRnnLayer::collect(const std::string& prefix, TensorList& out) {
  for (std::size_t n = 0; n < branches_.size(); ++n)
    branches_[n].collect(prefix + ".branch" + std::to_string(n), out);
  arbitrator_.collect(prefix + ".arb", out);
}

std::vector<double> DecisionSequence::branch_ratios(std::size_t branch_count) const {
  std::vector<double> ratios(branch_count, 0.0);
  if (branches.empty()) return ratios;
  for (std::size_t b : branches) ratios.at(b) += 1.0;
  for (double& r : ratios) r /= static_cast<double>(branches.size());
  return ratios;
}

}  // namespace amnet
