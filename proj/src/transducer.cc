#include "amnet/transducer.h"

#include <cmath>
#include <limits>

#include "amnet/error.h"
#include "amnet/ops.h"

namespace amnet {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// q + offset, recorded without FLOPs (cost bookkeeping, not model compute).
Var add_cost_offset(Var q, double offset) {
  return q.tape()->record(Matrix(1, 1, q.scalar() + offset), {q},
                          [](const Matrix& g, std::span<Matrix* const> gi) { (*gi[0])[0] += g[0]; });
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

Encoder Encoder::dense(StackedLstm stack, Linear projection) {
  AMNET_REQUIRE(stack.output_dim() == projection.weight.rows(),
                "Encoder: projection input width does not match the LSTM stack");
  Encoder e;
  e.kind_ = EncoderKind::dense;
  e.dense_ = std::move(stack);
  e.projection_ = std::move(projection);
  return e;
}

Encoder Encoder::amortized(AmRnnLayer layer, Linear projection) {
  AMNET_REQUIRE(layer.output_dim() == projection.weight.rows(),
                "Encoder: projection input width does not match the amortized layer");
  Encoder e;
  e.kind_ = EncoderKind::amortized;
  e.amrnn_ = std::move(layer);
  e.projection_ = std::move(projection);
  return e;
}

std::size_t Encoder::input_dim() const {
  return kind_ == EncoderKind::dense ? dense_.input_dim() : amrnn_.input_dim();
}

EncodeResult Encoder::encode_train(Tape& tape, const Matrix& features, GumbelSampler& sampler) {
  return encode(tape, features, &sampler);
}

EncodeResult Encoder::encode_runtime(Tape& tape, const Matrix& features) {
  return encode(tape, features, nullptr);
}

EncodeResult Encoder::encode(Tape& tape, const Matrix& features, GumbelSampler* sampler) {
  AMNET_REQUIRE(features.rows() >= 1, "encode: empty feature sequence");
  AMNET_REQUIRE(features.cols() == input_dim(),
                "encode: feature width " + std::to_string(features.cols()) + ", expected " +
                    std::to_string(input_dim()));
  EncodeResult result;
  std::vector<Var> outputs;
  outputs.reserve(features.rows());
  const double proj = projection_cost();

  if (kind_ == EncoderKind::dense) {
    std::vector<LstmVars> state = dense_.zero_state(tape);
    const double q = dense_frame_cost();
    for (std::size_t t = 0; t < features.rows(); ++t) {
      outputs.push_back(dense_.step(tape, tape.constant(Matrix::row(features.row_span(t))), state));
      result.costs.push_back(tape.constant(Matrix(1, 1, q)));
    }
  } else {
    AmRnnState state = amrnn_.initial_state(tape);
    DecisionSequence& ds = result.decisions;
    ds.hard = sampler == nullptr;
    for (std::size_t t = 0; t < features.rows(); ++t) {
      Var x = tape.constant(Matrix::row(features.row_span(t)));
      AmRnnStepResult r = sampler ? amrnn_.step_train(tape, x, state, *sampler)
                                  : amrnn_.step_runtime(tape, x, state);
      outputs.push_back(r.output);
      Var q = add_cost_offset(r.cost, proj);
      result.costs.push_back(q);
      const auto d = r.decision.value().data();
      const auto k = r.logits.value().data();
      ds.decisions.emplace_back(d.begin(), d.end());
      ds.logits.emplace_back(k.begin(), k.end());
      ds.branches.push_back(r.branch);
      ds.costs.push_back(q.scalar());
    }
  }
  result.logits = projection_.apply(tape, stack_rows(outputs));
  return result;
}

double Encoder::dense_frame_cost() const {
  AMNET_REQUIRE(kind_ == EncoderKind::dense, "dense_frame_cost: encoder is amortized");
  return dense_.step_flops() + projection_cost();
}

double Encoder::branch_frame_cost(std::size_t n) const {
  AMNET_REQUIRE(kind_ == EncoderKind::amortized, "branch_frame_cost: encoder is dense");
  return amrnn_.branch_cost(n) + amrnn_.arbitrator_cost() + projection_cost();
}

std::size_t Encoder::parameter_count() const {
  TensorList tensors;
  const_cast<Encoder*>(this)->collect("enc", tensors);
  std::size_t n = 0;
  for (const NamedTensor& t : tensors)
    if (!t.is_mask) n += t.matrix->size();
  return n;
}

void Encoder::collect(const std::string& prefix, TensorList& out) {
  if (kind_ == EncoderKind::dense)
    dense_.collect(prefix + ".lstm", out);
  else
    amrnn_.collect(prefix + ".amrnn", out);
  projection_.collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------
// Prediction network

PredictionNetwork::PredictionNetwork(std::size_t vocab, std::size_t embed_dim,
                                     std::vector<std::size_t> hidden, Rng& rng)
    : embedding_(vocab, embed_dim) {
  AMNET_REQUIRE(vocab >= 2, "PredictionNetwork: vocabulary must include blank and one label");
  AMNET_REQUIRE(!hidden.empty(), "PredictionNetwork: need at least one LSTM layer");
  init_uniform(embedding_, 1, rng);
  std::vector<std::size_t> dims{embed_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  lstm_ = StackedLstm::random(dims, rng);
  projection_ = Linear::random(hidden.back(), vocab, rng);
}

Var PredictionNetwork::embed(Tape& tape, int label) {
  AMNET_REQUIRE(label >= 0 && static_cast<std::size_t>(label) < vocab(),
                "PredictionNetwork: label " + std::to_string(label) + " outside vocabulary");
  return row_of(tape.parameter(embedding_), static_cast<std::size_t>(label));
}

PredictionNetwork::State PredictionNetwork::start(Tape& tape) {
  State s;
  s.lstm = lstm_.zero_state(tape);
  Var h = lstm_.step(tape, embed(tape, kBlank), s.lstm);
  s.output = projection_.apply(tape, h);
  return s;
}

PredictionNetwork::State PredictionNetwork::advance(Tape& tape, const State& prev, int label) {
  AMNET_REQUIRE(label != kBlank, "PredictionNetwork: blank does not advance the decoder");
  State s{prev.lstm, Var()};
  Var h = lstm_.step(tape, embed(tape, label), s.lstm);
  s.output = projection_.apply(tape, h);
  return s;
}

Var PredictionNetwork::predict_all(Tape& tape, std::span<const int> labels) {
  std::vector<Var> rows;
  rows.reserve(labels.size() + 1);
  State s = start(tape);
  rows.push_back(s.output);
  for (int y : labels) {
    s = advance(tape, s, y);
    rows.push_back(s.output);
  }
  return stack_rows(rows);
}

std::size_t PredictionNetwork::parameter_count() const {
  return embedding_.size() + lstm_.parameter_count() + projection_.parameter_count();
}

void PredictionNetwork::collect(const std::string& prefix, TensorList& out) {
  append_unique(out, {prefix + ".embed", &embedding_, false});
  lstm_.collect(prefix + ".lstm", out);
  projection_.collect(prefix + ".proj", out);
}

const std::vector<double>& DecoderCache::logits(const std::vector<int>& prefix) {
  return entry(prefix).logits;
}

const DecoderCache::Entry& DecoderCache::entry(const std::vector<int>& prefix) {
  auto it = entries_.find(prefix);
  if (it != entries_.end()) return it->second;

  Tape tape(false);
  PredictionNetwork::State s;
  if (prefix.empty()) {
    s = net_->start(tape);
  } else {
    const std::vector<int> parent_key(prefix.begin(), prefix.end() - 1);
    const Entry& parent = entry(parent_key);
    PredictionNetwork::State p;
    for (const LstmState& ls : parent.lstm)
      p.lstm.push_back({tape.constant(ls.h), tape.constant(ls.c)});
    s = net_->advance(tape, p, prefix.back());
  }
  Entry e;
  for (const LstmVars& lv : s.lstm) e.lstm.push_back({lv.h.value(), lv.c.value()});
  const auto out = s.output.value().data();
  e.logits.assign(out.begin(), out.end());
  return entries_.emplace(prefix, std::move(e)).first->second;
}

void TransducerModel::collect(TensorList& out) {
  encoder.collect("enc", out);
  decoder.collect("dec", out);
}

// ---------------------------------------------------------------------------
// Joint and loss

std::vector<double> joint_log_probs(std::span<const double> enc_t, std::span<const double> dec_u) {
  AMNET_REQUIRE(enc_t.size() == dec_u.size(), "joint: encoder and decoder widths differ");
  std::vector<double> z(enc_t.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = enc_t[k] + dec_u[k];
  const double lse = logsumexp(z);
  for (double& v : z) v -= lse;
  return z;
}

TransducerLattice compute_lattice(const Matrix& enc, const Matrix& dec,
                                  std::span<const int> labels) {
  const std::size_t T = enc.rows();
  const std::size_t U = labels.size();
  const std::size_t K = enc.cols();
  AMNET_REQUIRE(T >= 1, "transducer loss: need at least one frame");
  AMNET_REQUIRE(dec.rows() == U + 1, "transducer loss: decoder rows must equal U + 1");
  AMNET_REQUIRE(dec.cols() == K, "transducer loss: encoder and decoder widths differ");
  for (int y : labels)
    AMNET_REQUIRE(y > 0 && static_cast<std::size_t>(y) < K,
                  "transducer loss: invalid label id " + std::to_string(y));

  TransducerLattice lat;
  lat.frames = T;
  lat.labels = U;
  lat.blank = Matrix(T, U + 1);
  lat.emit = Matrix(T, U);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      const std::vector<double> lp = joint_log_probs(enc.row_span(t), dec.row_span(u));
      lat.blank(t, u) = lp[kBlank];
      if (u < U) lat.emit(t, u) = lp[static_cast<std::size_t>(labels[u])];
    }

  lat.alpha = Matrix(T, U + 1, kNegInf);
  lat.alpha(0, 0) = 0.0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = lat.alpha(t - 1, u) + lat.blank(t - 1, u);
      if (u > 0) a = log_add_exp(a, lat.alpha(t, u - 1) + lat.emit(t, u - 1));
      lat.alpha(t, u) = a;
    }
  lat.log_likelihood = lat.alpha(T - 1, U) + lat.blank(T - 1, U);

  lat.beta = Matrix(T, U + 1, kNegInf);
  for (std::size_t t = T; t-- > 0;)
    for (std::size_t u = U + 1; u-- > 0;) {
      if (t == T - 1 && u == U) {
        lat.beta(t, u) = lat.blank(t, u);
        continue;
      }
      double b = kNegInf;
      if (t + 1 < T) b = lat.beta(t + 1, u) + lat.blank(t, u);
      if (u < U) b = log_add_exp(b, lat.beta(t, u + 1) + lat.emit(t, u));
      lat.beta(t, u) = b;
    }
  if (!std::isfinite(lat.log_likelihood))
    throw NumericError("transducer loss: non-finite log-likelihood");
  return lat;
}

Var transducer_nll(Var enc_logits, Var dec_logits, std::span<const int> labels) {
  TransducerLattice lat = compute_lattice(enc_logits.value(), dec_logits.value(), labels);
  const double ll = lat.log_likelihood;
  std::vector<int> y(labels.begin(), labels.end());
  const double T = static_cast<double>(lat.frames), U = static_cast<double>(lat.labels);
  const double K = static_cast<double>(enc_logits.cols());
  // Forward plus backward sweeps over the grid, softmax per node.
  const double flops = T * (U + 1) * (4.0 * K + 8.0);
  return enc_logits.tape()->record(
      Matrix(1, 1, -ll), {enc_logits, dec_logits},
      [enc_logits, dec_logits, y, lat = std::move(lat)](const Matrix& g,
                                                       std::span<Matrix* const> gi) {
        const Matrix& enc = enc_logits.value();
        const Matrix& dec = dec_logits.value();
        const std::size_t T = lat.frames, U = lat.labels, K = enc.cols();
        const double ll = lat.log_likelihood;
        std::vector<double> gz(K);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t u = 0; u <= U; ++u) {
            const double a = lat.alpha(t, u);
            // d(-ll)/d log P(blank | t, u) and d(-ll)/d log P(y_{u+1} | t, u).
            const double next_blank =
                (t + 1 < T) ? lat.beta(t + 1, u) : (u == U ? 0.0 : kNegInf);
            const double g_blank = -std::exp(a + lat.blank(t, u) + next_blank - ll);
            const double g_emit =
                u < U ? -std::exp(a + lat.emit(t, u) + lat.beta(t, u + 1) - ll) : 0.0;
            if (g_blank == 0.0 && g_emit == 0.0) continue;
            const std::vector<double> lp = joint_log_probs(enc.row_span(t), dec.row_span(u));
            const double total = g_blank + g_emit;
            for (std::size_t k = 0; k < K; ++k) gz[k] = -std::exp(lp[k]) * total;
            gz[kBlank] += g_blank;
            if (u < U) gz[static_cast<std::size_t>(y[u])] += g_emit;
            for (std::size_t k = 0; k < K; ++k) {
              if (gi[0]) (*gi[0])(t, k) += g[0] * gz[k];
              if (gi[1]) (*gi[1])(u, k) += g[0] * gz[k];
            }
          }
      },
      flops);
}

TransducerLoss transducer_loss(Tape& tape, TransducerModel& model, const Matrix& features,
                               std::span<const int> labels, GumbelSampler& sampler) {
  TransducerLoss out;
  out.encoded = model.encoder.encode_train(tape, features, sampler);
  Var dec = model.decoder.predict_all(tape, labels);
  out.nll = transducer_nll(out.encoded.logits, dec, labels);
  return out;
}

}  // namespace amnet
