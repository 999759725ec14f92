#include "amnet/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "amnet/checkpoint.h"
#include "amnet/error.h"
#include "amnet/latency.h"
#include "amnet/model_io.h"
#include "amnet/ops.h"

namespace amnet {

namespace {

// Splits and stages draw from disjoint streams of one experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kTrainData = 1,
  kDevData,
  kTestData,
  kBaselineInit,
  kBaselineTrain,
  kAmortizedInit,
  kPruneTrain,
  kPretrain,
  kGumbelTrain,
  kFinetune,
};

// Hard costs forward, gradient of the soft costs backward.
Var straight_through(Var soft, const std::vector<double>& hard) {
  AMNET_REQUIRE(soft.rows() == 1 && soft.cols() == hard.size(),
                "straight_through: cost length mismatch");
  return soft.tape()->record(Matrix(1, hard.size(), hard), {soft},
                             [](const Matrix& g, std::span<Matrix* const> gi) {
                               auto d = gi[0]->data();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                             });
}

double branch_sparsity(TransducerModel& model, std::size_t branch) {
  if (model.encoder.kind() != EncoderKind::amortized) return 0.0;
  std::size_t zeros = 0, total = 0;
  for (LstmCell& cell : model.encoder.amrnn().branches().at(branch).layers()) {
    for (GateWeight& g : cell.gates()) {
      if (g.kind() != WeightKind::masked) continue;
      zeros += g.masked_weights().zeros();
      total += g.masked_weights().mask.size();
    }
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

TensorList trainable(TransducerModel& model) {
  TensorList all, out;
  model.collect(all);
  for (NamedTensor& t : all)
    if (!t.is_mask) out.push_back(t);
  return out;
}

double mean_frames(const Dataset& data) {
  double n = 0.0;
  for (const Utterance& u : data) n += static_cast<double>(u.features.rows());
  return n / static_cast<double>(data.size());
}

}  // namespace

// ---------------------------------------------------------------------------

Adam::Adam(TensorList params, const OptimizerConfig& options)
    : params_(std::move(params)), options_(options) {
  for (const NamedTensor& t : params_) {
    AMNET_REQUIRE(!t.is_mask, "Adam: masks are not trainable (" + t.name + ")");
    m_.emplace_back(t.matrix->size(), 0.0);
    v_.emplace_back(t.matrix->size(), 0.0);
  }
}

double Adam::step(double lr, double grad_scale) {
  double sq = 0.0;
  for (const NamedTensor& t : params_)
    if (t.matrix->has_grad())
      for (double g : t.matrix->grad()) sq += (g * grad_scale) * (g * grad_scale);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("Adam: non-finite gradient norm");
  const double clip =
      options_.clip_norm > 0.0 && norm > options_.clip_norm ? options_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = *params_[i].matrix;
    const bool has = p.has_grad();
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = has ? p.grad()[j] * grad_scale * clip : 0.0;
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
      w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + options_.epsilon);
    }
    if (has) p.zero_grad();
  }
  return norm;
}

double learning_rate(const OptimizerConfig& o, std::size_t step, std::size_t total_steps) {
  AMNET_REQUIRE(step < total_steps, "learning_rate: step past the end of the run");
  const std::size_t warm = std::min(o.warmup_steps, total_steps);
  if (step < warm) return o.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const std::size_t hold_end = std::min(warm + o.hold_steps, total_steps);
  if (step < hold_end) return o.lr;
  const std::size_t span = total_steps - hold_end;
  const double frac = static_cast<double>(step - hold_end + 1) / static_cast<double>(span);
  return o.lr * std::pow(o.final_lr_factor, frac);
}

double temperature(double start, double end, std::size_t step, std::size_t span) {
  if (span <= 1) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(span - 1);
  return start + (end - start) * std::min(frac, 1.0);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const ExperimentConfig& config, TransducerModel& model, const Dataset& train,
                 std::uint64_t seed)
    : config_(config), model_(model), train_(train), rng_(seed) {
  AMNET_REQUIRE(!train_.empty(), "Trainer: empty training set");
  sampler_.rng.seed(derive_seed(seed, 99));
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::size_t Trainer::next_index() {
  if (cursor_ == order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  return order_[cursor_++];
}

void Trainer::update_masks(std::size_t m) {
  const double targets[2] = {config_.branches.slow_target, config_.branches.fast_target};
  for (std::size_t n : {kSlowBranch, kFastBranch}) {
    SparsityTracker tracker{targets[n], config_.pruning.steps, config_.pruning.frequency};
    if (!tracker.is_update_step(m)) continue;
    const double s = sparsity_schedule(tracker, m);
    for (LstmCell& cell : model_.encoder.amrnn().branches().at(n).layers())
      for (GateWeight& g : cell.gates())
        if (g.kind() == WeightKind::masked) apply_magnitude_pruning(g.masked_weights(), s);
  }
}

void Trainer::run(const PhaseSpec& phase) {
  const bool amortized = model_.encoder.kind() == EncoderKind::amortized;
  AMNET_REQUIRE(phase.steps > 0, "Trainer: phase " + phase.name + " has no steps");
  AMNET_REQUIRE(amortized || phase.compute == ComputeLoss::none,
                "Trainer: compute losses need an amortized encoder");
  AMNET_REQUIRE(!phase.prune || (amortized && config_.branches.method == CompressionMethod::sparse),
                "Trainer: pruning needs sparse branches");

  TensorList params = trainable(model_);
  for (NamedTensor& t : params) t.matrix->clear_grad();
  Adam adam(params, config_.train.optimizer);
  sampler_.mode = phase.mode;
  sampler_.forced_first_probability = 0.5;
  const std::size_t batch = config_.train.batch_size;
  const bool st = config_.train.train_cost == TrainCost::straight_through &&
                  phase.mode == SamplerMode::soft;

  for (std::size_t m = 0; m < phase.steps; ++m) {
    if (phase.prune) update_masks(m);
    sampler_.tau = temperature(phase.tau_start, phase.tau_end, m,
                               phase.anneal_steps ? phase.anneal_steps : phase.steps);

    StepRecord rec;
    rec.phase = phase.name;
    rec.step = m;
    rec.tau = sampler_.tau;
    rec.lr = phase.lr_scale * learning_rate(config_.train.optimizer, m, phase.steps);
    double fast_weight = 0.0, frames = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Utterance& u = train_[next_index()];
      Tape tape;
      TransducerLoss tl = transducer_loss(tape, model_, u.features, u.labels, sampler_);
      Var loss = tl.nll;
      if (phase.compute != ComputeLoss::none) {
        Var q = concat_cols(tl.encoded.costs);
        if (st) {
          std::vector<double> hard;
          for (std::size_t n : tl.encoded.decisions.branches)
            hard.push_back(model_.encoder.branch_frame_cost(n));
          q = straight_through(q, hard);
        }
        Var c = phase.compute == ComputeLoss::average ? average_cost(q)
                                                      : amortized_latency(q, config_.device);
        rec.compute += c.scalar();
        loss = combined_training_loss(tl.nll, c, phase.lambda);
      }
      rec.nll += tl.nll.scalar();
      rec.loss += loss.scalar();
      if (!std::isfinite(loss.scalar()))
        throw NumericError("Trainer: non-finite loss in phase " + phase.name + " at step " +
                           std::to_string(m));
      for (const auto& d : tl.encoded.decisions.decisions) {
        fast_weight += d.at(kFastBranch);
        frames += 1.0;
      }
      tape.backward(loss);
    }
    adam.step(rec.lr, 1.0 / static_cast<double>(batch));

    const double inv = 1.0 / static_cast<double>(batch);
    rec.loss *= inv;
    rec.nll *= inv;
    rec.compute *= inv;
    rec.fast_share = frames > 0.0 ? fast_weight / frames : 0.0;
    rec.slow_sparsity = branch_sparsity(model_, kSlowBranch);
    rec.fast_sparsity = branch_sparsity(model_, kFastBranch);
    if (progress_ && (m % 50 == 0 || m + 1 == phase.steps)) {
      *progress_ << std::fixed << std::setprecision(4) << "[" << phase.name << " " << m + 1 << "/"
                 << phase.steps << "] loss " << rec.loss << " nll " << rec.nll;
      if (amortized) *progress_ << " fast " << rec.fast_share << " tau " << rec.tau;
      *progress_ << std::defaultfloat << '\n';
    }
    records_.push_back(std::move(rec));
  }
  // The ramp may end exactly on the phase boundary.
  if (phase.prune) update_masks(phase.steps);
}

std::pair<double, double> Trainer::probe(ComputeLoss compute, double tau, std::size_t count) {
  const SamplerMode saved_mode = sampler_.mode;
  const double saved_tau = sampler_.tau;
  sampler_.mode = SamplerMode::soft;
  sampler_.tau = tau;
  count = std::min(count, train_.size());
  AMNET_REQUIRE(count > 0, "probe: no utterances");
  double nll = 0.0, cost = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const Utterance& u = train_[i];
    Tape tape(false);
    TransducerLoss tl = transducer_loss(tape, model_, u.features, u.labels, sampler_);
    nll += tl.nll.scalar();
    if (compute != ComputeLoss::none) {
      std::vector<double> q;
      for (const Var& v : tl.encoded.costs) q.push_back(v.scalar());
      cost += compute == ComputeLoss::average ? avg_cost_loss(q)
                                              : amortized_latency_loss(q, config_.device);
    }
  }
  sampler_.mode = saved_mode;
  sampler_.tau = saved_tau;
  return {nll / static_cast<double>(count), cost / static_cast<double>(count)};
}

// ---------------------------------------------------------------------------

double shannon_entropy(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs)
    if (lp > -std::numeric_limits<double>::infinity()) h -= std::exp(lp) * lp;
  return h;
}

std::vector<std::vector<int>> entropy_pretrain_targets(TransducerModel& baseline,
                                                       const Dataset& data, double threshold) {
  DecoderCache cache(baseline.decoder);
  std::vector<std::vector<int>> targets;
  targets.reserve(data.size());
  for (const Utterance& u : data) {
    Tape tape(false);
    const Matrix enc = baseline.encoder.encode_runtime(tape, u.features).logits.value();
    std::vector<int> prefix;
    std::vector<int> frame_targets(enc.rows(), 0);
    for (std::size_t t = 0; t < enc.rows(); ++t) {
      double peak = 0.0;
      std::size_t emitted = 0;
      while (true) {
        const std::vector<double> lp = joint_log_probs(enc.row_span(t), cache.logits(prefix));
        peak = std::max(peak, shannon_entropy(lp));
        const std::size_t k = argmax(lp);
        if (static_cast<int>(k) == kBlank) break;
        prefix.push_back(static_cast<int>(k));
        if (++emitted == kMaxEmissionsPerFrame) break;
      }
      frame_targets[t] = peak > threshold ? 1 : 0;
    }
    targets.push_back(std::move(frame_targets));
  }
  return targets;
}

double slow_target_ratio(const std::vector<std::vector<int>>& targets) {
  double slow = 0.0, total = 0.0;
  for (const auto& u : targets)
    for (int v : u) {
      slow += v;
      total += 1.0;
    }
  return total > 0.0 ? slow / total : 0.0;
}

double pretrain_arbitrator(const ExperimentConfig& config, TransducerModel& model,
                           const Dataset& data, const std::vector<std::vector<int>>& targets,
                           std::size_t steps, std::uint64_t seed) {
  AMNET_REQUIRE(model.encoder.kind() == EncoderKind::amortized,
                "pretrain_arbitrator: encoder is dense");
  AMNET_REQUIRE(targets.size() == data.size(), "pretrain_arbitrator: one target row per utterance");
  Arbitrator& arb = model.encoder.amrnn().arbitrator();
  const std::size_t branches = arb.branches();
  const std::size_t state_dim = model.encoder.amrnn().output_dim();
  const auto cls = [](int target) { return target ? kSlowBranch : kFastBranch; };

  // Returns the summed log-likelihood and the number of correct frames.
  const auto run = [&](Tape& tape, std::size_t i, Var* loss) {
    const Utterance& u = data[i];
    AMNET_REQUIRE(targets[i].size() == u.features.rows(),
                  "pretrain_arbitrator: target length mismatch for " + u.id);
    std::vector<LstmVars> state = arb.zero_state(tape);
    Var d_prev = tape.constant(Matrix(1, branches));
    const Var h_zero = tape.constant(Matrix(1, state_dim));
    std::vector<Var> terms;
    std::size_t correct = 0;
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      Var x = tape.constant(Matrix::row(u.features.row_span(t)));
      std::optional<Var> h, d;
      if (arb.options().use_prev_state) h = h_zero;
      if (arb.options().use_prev_decision) d = d_prev;
      Var k = arb.arbitrate(tape, x, h, d, state);
      const std::size_t c = cls(targets[i][t]);
      if (argmax(k.value().data()) == c) ++correct;
      if (loss) terms.push_back(element(log_softmax_rows(k), 0, c));
      d_prev = tape.constant(one_hot(c, branches));
    }
    if (loss) *loss = scale(sum(concat_cols(terms)), -1.0 / static_cast<double>(terms.size()));
    return correct;
  };

  TensorList params;
  arb.collect("arb", params);
  Adam adam(params, config.train.optimizer);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t m = 0; m < steps; ++m) {
    for (std::size_t b = 0; b < config.train.batch_size; ++b) {
      Tape tape;
      Var loss;
      run(tape, pick(rng), &loss);
      tape.backward(loss);
    }
    adam.step(learning_rate(config.train.optimizer, m, steps),
              1.0 / static_cast<double>(config.train.batch_size));
  }

  std::size_t correct = 0, frames = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape tape(false);
    correct += run(tape, i, nullptr);
    frames += data[i].features.rows();
  }
  return static_cast<double>(correct) / static_cast<double>(frames);
}

// ---------------------------------------------------------------------------

DatasetSplits load_splits(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  DatasetSplits s;
  Dataset train, dev, test;
  if (d.train_dir.empty()) {
    train = generate_synthetic(d.task, d.train_utterances, derive_seed(c.seed, kTrainData), "train");
    dev = generate_synthetic(d.task, d.dev_utterances, derive_seed(c.seed, kDevData), "dev");
    test = generate_synthetic(d.task, d.test_utterances, derive_seed(c.seed, kTestData), "test");
    s.silence_ratio = silence_ratio(train);
  } else {
    train = read_dataset(d.train_dir);
    dev = read_dataset(d.dev_dir);
    test = read_dataset(d.test_dir);
  }
  for (const Dataset* ds : {&train, &dev, &test}) {
    AMNET_REQUIRE(!ds->empty(), "load_splits: empty split");
    for (const Utterance& u : *ds) {
      AMNET_REQUIRE(u.features.cols() == d.task.dim,
                    "load_splits: " + u.id + " has feature width " +
                        std::to_string(u.features.cols()) + ", expected " +
                        std::to_string(d.task.dim));
      for (int y : u.labels)
        AMNET_REQUIRE(y >= 1 && static_cast<std::size_t>(y) <= d.task.labels,
                      "load_splits: " + u.id + " has a label outside the vocabulary");
    }
  }
  s.train = stack_dataset(train, d.downsample, d.stack, d.stride);
  s.dev = stack_dataset(dev, d.downsample, d.stack, d.stride);
  s.test = stack_dataset(test, d.downsample, d.stack, d.stride);
  return s;
}

TransducerModel train_baseline(const ExperimentConfig& c, const Dataset& train,
                               std::vector<StepRecord>* records, std::ostream* progress) {
  Rng rng(derive_seed(c.seed, kBaselineInit));
  TransducerModel model = build_baseline(c, rng);
  {
    Trainer trainer(c, model, train, derive_seed(c.seed, kBaselineTrain));
    trainer.set_progress(progress);
    PhaseSpec phase;
    phase.name = "baseline";
    phase.steps = c.train.baseline_steps;
    trainer.run(phase);
    if (records)
      records->insert(records->end(), trainer.records().begin(), trainer.records().end());
  }
  return model;
}

void train_amortized(const ExperimentConfig& c, TransducerModel& model, TransducerModel& baseline,
                     const DatasetSplits& data, ExperimentResult& result, const RunOptions& opts) {
  AMNET_REQUIRE(model.encoder.kind() == EncoderKind::amortized,
                "train_amortized: encoder is dense");
  std::ostream* log = opts.progress;
  const TrainConfig& tc = c.train;
  const std::size_t probe_count = std::min<std::size_t>(32, data.train.size());

  // Phase 1: forced random branches; masks follow the sparsity ramp.
  Trainer prune(c, model, data.train, derive_seed(c.seed, kPruneTrain));
  prune.set_progress(log);
  PhaseSpec p1;
  p1.name = "prune";
  p1.steps = tc.prune_steps;
  p1.mode = SamplerMode::forced;
  p1.prune = c.branches.method == CompressionMethod::sparse;
  prune.run(p1);

  // Arbitrator pre-training on entropy targets from the dense baseline.
  const auto targets = entropy_pretrain_targets(baseline, data.train, tc.entropy_threshold);
  result.entropy_slow_ratio =
      slow_target_ratio(entropy_pretrain_targets(baseline, data.dev, tc.entropy_threshold));
  if (tc.pretrain_steps > 0)
    result.arbitrator_accuracy = pretrain_arbitrator(c, model, data.train, targets,
                                                     tc.pretrain_steps,
                                                     derive_seed(c.seed, kPretrain));
  if (log)
    *log << "entropy targets: slow ratio " << slow_target_ratio(targets) << " (dev "
         << result.entropy_slow_ratio << "), arbitrator accuracy " << result.arbitrator_accuracy
         << '\n';

  // Phase 2: Gumbel-Softmax sampling with the average-cost loss.
  Trainer gumbel(c, model, data.train, derive_seed(c.seed, kGumbelTrain));
  gumbel.set_progress(log);
  if (tc.lambda_avg) {
    result.lambda_avg = *tc.lambda_avg;
  } else {
    const auto [nll, cost] = gumbel.probe(ComputeLoss::average, c.sampler.tau_start, probe_count);
    result.lambda_avg = tc.lambda_avg_scale * 0.1 * nll / cost;
  }
  PhaseSpec p2;
  p2.name = "gumbel";
  p2.steps = tc.gumbel_steps;
  p2.mode = SamplerMode::soft;
  p2.compute = ComputeLoss::average;
  p2.lambda = result.lambda_avg;
  p2.tau_start = c.sampler.tau_start;
  p2.tau_end = c.sampler.tau_end;
  p2.anneal_steps = c.sampler.anneal_steps;
  gumbel.run(p2);
  result.average = evaluate(model, data.test, c.device, c.eval.beam_width, c.name + "/avg");
  attach_baseline(result.average, result.baseline);
  if (log) *log << to_json_line(result.average) << '\n';

  // Phase 3: fine-tuning with the amortized-latency loss.
  Trainer finetune(c, model, data.train, derive_seed(c.seed, kFinetune));
  finetune.set_progress(log);
  if (tc.lambda_amr) {
    result.lambda_amr = *tc.lambda_amr;
  } else {
    const auto [nll, cost] = finetune.probe(ComputeLoss::amortized, c.sampler.tau_end, probe_count);
    // With no backlog left to probe, match the per-frame gradient of L_avg.
    result.lambda_amr =
        tc.lambda_amr_scale * (cost > 0.0 ? 0.1 * nll / cost
                                          : result.lambda_avg * c.device.mu / mean_frames(data.train));
  }
  PhaseSpec p3;
  p3.name = "finetune";
  p3.steps = tc.finetune_steps;
  p3.mode = SamplerMode::soft;
  p3.compute = ComputeLoss::amortized;
  p3.lambda = result.lambda_amr;
  p3.tau_start = c.sampler.tau_end;
  p3.tau_end = c.sampler.tau_end;
  p3.lr_scale = tc.finetune_lr_factor;
  finetune.run(p3);

  for (const Trainer* t : {&prune, &gumbel, &finetune})
    result.records.insert(result.records.end(), t->records().begin(), t->records().end());
}

ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& opts) {
  c.validate();
  std::ostream* log = opts.progress;
  const std::filesystem::path out = c.output_dir;
  if (opts.write_outputs) {
    std::filesystem::create_directories(out);
    std::ofstream(out / "config.ini") << format_config(c);
    std::filesystem::remove(out / "metrics.jsonl");
  }

  ExperimentResult result;
  const DatasetSplits data = load_splits(c);
  result.silence_ratio = data.silence_ratio;

  TransducerModel baseline;
  if (opts.baseline_checkpoint.empty()) {
    baseline = train_baseline(c, data.train, &result.records, log);
  } else {
    LoadedCheckpoint ck = load_checkpoint(opts.baseline_checkpoint);
    AMNET_REQUIRE(ck.model.encoder.kind() == EncoderKind::dense,
                  opts.baseline_checkpoint.string() + " does not hold a dense model");
    baseline = std::move(ck.model);
  }
  std::vector<UtteranceResult> base_rows;
  result.baseline =
      evaluate(baseline, data.test, c.device, c.eval.beam_width, c.name + "/baseline", &base_rows);
  if (log) *log << to_json_line(result.baseline) << '\n';
  if (opts.baseline_only) {
    if (opts.write_outputs) {
      save_checkpoint(out / "baseline.ckpt", c, baseline);
      append_jsonl(out / "metrics.jsonl", result.baseline);
      write_trace_csv(out / "trace_baseline.csv", base_rows);
      write_step_log(out / "steps.csv", result.records);
    }
    return result;
  }

  TransducerModel model;
  if (!opts.init_checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(opts.init_checkpoint);
    AMNET_REQUIRE(ck.model.encoder.kind() == EncoderKind::amortized,
                  opts.init_checkpoint.string() + " does not hold an amortized model");
    model = std::move(ck.model);
  } else {
    Rng rng(derive_seed(c.seed, kAmortizedInit));
    model = c.branches.init == BranchInit::seed ? seed_from_pretrained(c, baseline, rng)
                                                : build_amortized(c, rng);
  }
  train_amortized(c, model, baseline, data, result, opts);

  std::vector<UtteranceResult> amr_rows;
  result.amortized =
      evaluate(model, data.test, c.device, c.eval.beam_width, c.name + "/amr", &amr_rows);
  attach_baseline(result.amortized, result.baseline);
  if (log) *log << to_json_line(result.amortized) << '\n';

  if (opts.write_outputs) {
    save_checkpoint(out / "baseline.ckpt", c, baseline);
    save_checkpoint(out / "amortized.ckpt", c, model);
    for (const MetricsReport* r : {&result.baseline, &result.average, &result.amortized})
      append_jsonl(out / "metrics.jsonl", *r);
    write_trace_csv(out / "trace_baseline.csv", base_rows);
    write_trace_csv(out / "trace_amortized.csv", amr_rows);
    write_transcripts(out / "ref.txt", amr_rows, false);
    write_transcripts(out / "hyp_baseline.txt", base_rows, true);
    write_transcripts(out / "hyp_amortized.txt", amr_rows, true);
    write_step_log(out / "steps.csv", result.records);
  }
  return result;
}

void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& records) {
  std::ofstream f(path);
  AMNET_REQUIRE(f, "cannot open " + path.string());
  f << "phase,step,lr,tau,loss,nll,compute,fast_share,slow_sparsity,fast_sparsity\n"
    << std::setprecision(10);
  for (const StepRecord& r : records)
    f << r.phase << ',' << r.step << ',' << r.lr << ',' << r.tau << ',' << r.loss << ',' << r.nll
      << ',' << r.compute << ',' << r.fast_share << ',' << r.slow_sparsity << ','
      << r.fast_sparsity << '\n';
}

}  // namespace amnet
