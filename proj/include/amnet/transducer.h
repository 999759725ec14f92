#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "amnet/amortized.h"
#include "amnet/lstm.h"
#include "amnet/tape.h"

namespace amnet {

constexpr int kBlank = 0;

// ---------------------------------------------------------------------------
// Encoder F: a dense LSTM stack or an amortized layer, followed by a linear
// projection to the output vocabulary (blank included).

enum class EncoderKind { dense, amortized };

struct EncodeResult {
  Var logits;                  // T x K
  std::vector<Var> costs;      // per-frame encoder FLOPs, 1 x 1 each
  DecisionSequence decisions;  // empty for a dense encoder
};

class Encoder {
 public:
  Encoder() = default;
  static Encoder dense(StackedLstm stack, Linear projection);
  static Encoder amortized(AmRnnLayer layer, Linear projection);

  EncoderKind kind() const { return kind_; }
  std::size_t input_dim() const;
  std::size_t output_dim() const { return projection_.weight.cols(); }

  StackedLstm& dense_stack() { return dense_; }
  const StackedLstm& dense_stack() const { return dense_; }
  AmRnnLayer& amrnn() { return amrnn_; }
  const AmRnnLayer& amrnn() const { return amrnn_; }
  Linear& projection() { return projection_; }

  // Training-mode encode. The sampler governs amortized decisions.
  EncodeResult encode_train(Tape& tape, const Matrix& features, GumbelSampler& sampler);
  // Run-time encode with hard branch switching.
  EncodeResult encode_runtime(Tape& tape, const Matrix& features);

  // Per-frame cost of the dense encoder, or of a frame routed to branch n.
  double dense_frame_cost() const;
  double branch_frame_cost(std::size_t n) const;
  double projection_cost() const { return projection_.flops(); }

  // Trainable parameters (masks excluded, shared factors counted once).
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, TensorList& out);

 private:
  EncodeResult encode(Tape& tape, const Matrix& features, GumbelSampler* sampler);

  EncoderKind kind_ = EncoderKind::dense;
  StackedLstm dense_;
  AmRnnLayer amrnn_;
  Linear projection_;
};

// ---------------------------------------------------------------------------
// Prediction network G over previous non-blank labels. Label 0 (blank)
// doubles as the start symbol.

class PredictionNetwork {
 public:
  PredictionNetwork() = default;
  PredictionNetwork(std::size_t vocab, std::size_t embed_dim, std::vector<std::size_t> hidden,
                    Rng& rng);

  struct State {
    std::vector<LstmVars> lstm;
    Var output;  // 1 x K logits for the current prefix
  };

  std::size_t vocab() const { return embedding_.rows(); }
  State start(Tape& tape);
  // Advances on a non-blank label.
  State advance(Tape& tape, const State& prev, int label);
  // Logits for every prefix y[0:u], u = 0..U, stacked as (U+1) x K.
  Var predict_all(Tape& tape, std::span<const int> labels);

  std::size_t parameter_count() const;
  void collect(const std::string& prefix, TensorList& out);

  Matrix& embedding() { return embedding_; }

 private:
  Var embed(Tape& tape, int label);

  Matrix embedding_;  // K x E
  StackedLstm lstm_;
  Linear projection_;
};

// Memoized decoder outputs keyed by label prefix. Identical prefixes yield
// identical outputs, so the cache is exact.
class DecoderCache {
 public:
  explicit DecoderCache(PredictionNetwork& net) : net_(&net) {}
  const std::vector<double>& logits(const std::vector<int>& prefix);
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<LstmState> lstm;
    std::vector<double> logits;
  };
  const Entry& entry(const std::vector<int>& prefix);

  PredictionNetwork* net_;
  std::map<std::vector<int>, Entry> entries_;
};

struct TransducerModel {
  Encoder encoder;
  PredictionNetwork decoder;

  std::size_t vocab() const { return decoder.vocab(); }
  void collect(TensorList& out);
};

// ---------------------------------------------------------------------------
// Joint and loss.

// log softmax(enc_t + dec_u) over the K output symbols.
std::vector<double> joint_log_probs(std::span<const double> enc_t, std::span<const double> dec_u);

struct TransducerLattice {
  std::size_t frames = 0;  // T
  std::size_t labels = 0;  // U
  Matrix blank;            // T x (U+1): log P(blank | t, u)
  Matrix emit;             // T x U: log P(y_{u+1} | t, u)
  Matrix alpha;            // T x (U+1) forward log variables, alpha(0,0) = 0
  Matrix beta;             // T x (U+1) backward log variables
  double log_likelihood = 0.0;  // alpha(T-1, U) + blank(T-1, U)
};

// Forward-backward over the T x (U+1) grid in log space.
TransducerLattice compute_lattice(const Matrix& enc_logits, const Matrix& dec_logits,
                                  std::span<const int> labels);

// -log P(y | x) with its gradient with respect to both logit tables.
Var transducer_nll(Var enc_logits, Var dec_logits, std::span<const int> labels);

struct TransducerLoss {
  Var nll;
  EncodeResult encoded;
};
TransducerLoss transducer_loss(Tape& tape, TransducerModel& model, const Matrix& features,
                               std::span<const int> labels, GumbelSampler& sampler);

// ---------------------------------------------------------------------------
// Decoding.

struct Hypothesis {
  std::vector<int> labels;
  double log_prob = 0.0;
};

constexpr std::size_t kMaxEmissionsPerFrame = 10;

Hypothesis greedy_decode(const Matrix& enc_logits, DecoderCache& cache,
                         std::size_t max_emissions = kMaxEmissionsPerFrame);
// Time-synchronous beam search. Hypotheses with equal label sequences are
// merged by log-sum-exp; width 1 reproduces greedy_decode exactly.
Hypothesis beam_search(const Matrix& enc_logits, DecoderCache& cache, std::size_t width = 16,
                       std::size_t max_emissions = kMaxEmissionsPerFrame);

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
// Total edit distance over total reference length.
double token_error_rate(const std::vector<std::vector<int>>& hyps,
                        const std::vector<std::vector<int>>& refs);

}  // namespace amnet
