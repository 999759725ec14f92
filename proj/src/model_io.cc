#include "amnet/model_io.h"

#include <map>

#include "amnet/compression.h"
#include "amnet/error.h"

namespace amnet {
namespace {

std::vector<std::size_t> encoder_dims(const ExperimentConfig& c) {
  std::vector<std::size_t> dims{c.feature_dim()};
  for (std::size_t l = 0; l < c.model.encoder_layers; ++l) dims.push_back(c.model.encoder_hidden);
  return dims;
}

PredictionNetwork make_decoder(const ExperimentConfig& c, Rng& rng) {
  return PredictionNetwork(c.vocab(), c.model.decoder_embed, c.model.decoder_hidden, rng);
}

Linear make_projection(const ExperimentConfig& c, Rng& rng) {
  return Linear::random(c.model.encoder_hidden, c.vocab(), rng);
}

Arbitrator make_arbitrator(const ExperimentConfig& c, Rng& rng) {
  return Arbitrator(c.feature_dim(), c.model.encoder_hidden, 2, c.arbitrator, rng);
}

StackedLstm masked_stack(const ExperimentConfig& c, Rng& rng) {
  StackedLstm s = StackedLstm::random(encoder_dims(c), rng);
  for (LstmCell& cell : s.layers())
    for (GateWeight& g : cell.gates()) g = GateWeight::masked(g.dense_weights());
  return s;
}

// Both branches share one zero factor pair per (layer, gate).
std::vector<StackedLstm> factored_branches(const ExperimentConfig& c) {
  const auto dims = encoder_dims(c);
  std::vector<StackedLstm> branches(2);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t w = dims[l] + dims[l + 1], v = dims[l + 1];
    const std::size_t r_slow = factor_rank(c, l, kSlowBranch);
    std::array<std::shared_ptr<FactorPair>, 4> pairs;
    for (auto& p : pairs) p = std::make_shared<FactorPair>(FactorPair{Matrix(w, r_slow), Matrix(v, r_slow)});
    for (std::size_t b = 0; b < 2; ++b) {
      LstmCell cell(dims[l], dims[l + 1]);
      for (std::size_t g = 0; g < 4; ++g)
        cell.gates()[g] = GateWeight::factored(pairs[g], factor_rank(c, l, b));
      branches[b].add_layer(std::move(cell));
    }
  }
  return branches;
}

TransducerModel amortized_structure(const ExperimentConfig& c, Rng& rng) {
  std::vector<StackedLstm> branches;
  if (c.branches.method == CompressionMethod::sparse) {
    branches.push_back(masked_stack(c, rng));
    branches.push_back(masked_stack(c, rng));
  } else {
    branches = factored_branches(c);
  }
  AmRnnLayer layer(std::move(branches), make_arbitrator(c, rng));
  layer.set_literal_previous_decision(c.literal_previous_decision);
  TransducerModel m;
  m.encoder = Encoder::amortized(std::move(layer), make_projection(c, rng));
  m.decoder = make_decoder(c, rng);
  return m;
}

}  // namespace

std::size_t factor_rank(const ExperimentConfig& c, std::size_t layer, std::size_t branch) {
  const std::size_t in = layer == 0 ? c.feature_dim() : c.model.encoder_hidden;
  const std::size_t h = c.model.encoder_hidden;
  const double target = branch == kSlowBranch ? c.branches.slow_target : c.branches.fast_target;
  return rank_for_compression(in + h, h, target);
}

TransducerModel build_baseline(const ExperimentConfig& c, Rng& rng) {
  TransducerModel m;
  m.encoder = Encoder::dense(StackedLstm::random(encoder_dims(c), rng), make_projection(c, rng));
  m.decoder = make_decoder(c, rng);
  return m;
}

TransducerModel build_amortized(const ExperimentConfig& c, Rng& rng) {
  AMNET_REQUIRE(c.branches.method == CompressionMethod::sparse,
                "build_amortized: factorized branches need a pretrained dense encoder");
  return amortized_structure(c, rng);
}

TransducerModel seed_from_pretrained(const ExperimentConfig& c, TransducerModel& pretrained,
                                     Rng& rng) {
  AMNET_REQUIRE(pretrained.encoder.kind() == EncoderKind::dense,
                "seed_from_pretrained: source encoder must be dense");
  StackedLstm& dense = pretrained.encoder.dense_stack();
  AMNET_REQUIRE(dense.depth() == c.model.encoder_layers &&
                    dense.input_dim() == c.feature_dim() &&
                    dense.output_dim() == c.model.encoder_hidden,
                "seed_from_pretrained: dense encoder does not match the configuration");

  TransducerModel m = amortized_structure(c, rng);
  AmRnnLayer& layer = m.encoder.amrnn();
  for (std::size_t l = 0; l < dense.depth(); ++l) {
    LstmCell& src = dense.layers()[l];
    for (std::size_t b = 0; b < 2; ++b) {
      LstmCell& dst = layer.branches()[b].layers()[l];
      dst.biases() = src.biases();
      for (std::size_t g = 0; g < 4; ++g) {
        GateWeight& gw = dst.gates()[g];
        if (gw.kind() == WeightKind::masked) {
          gw = GateWeight::masked(src.gates()[g].effective());
        } else if (b == kSlowBranch) {
          // Shared pair: written once, through the slow branch.
          *gw.factors() =
              svd_factorize(src.gates()[g].effective(), gw.rank());
        }
      }
    }
  }
  m.encoder.projection() = pretrained.encoder.projection();
  TensorList src_dec, dst_dec;
  pretrained.decoder.collect("dec", src_dec);
  m.decoder.collect("dec", dst_dec);
  for (std::size_t i = 0; i < src_dec.size(); ++i) *dst_dec[i].matrix = *src_dec[i].matrix;
  return m;
}

void copy_tensors(TransducerModel& src, TransducerModel& dst) {
  TensorList a, b;
  src.collect(a);
  dst.collect(b);
  AMNET_REQUIRE(a.size() == b.size(), "copy_tensors: models have different layouts");
  for (std::size_t i = 0; i < a.size(); ++i) {
    AMNET_REQUIRE(a[i].name == b[i].name && a[i].matrix->same_shape(*b[i].matrix),
                  "copy_tensors: layout mismatch at " + a[i].name);
    *b[i].matrix = *a[i].matrix;
    b[i].matrix->clear_grad();
  }
}

TransducerModel build_layout(const ExperimentConfig& c, EncoderKind kind) {
  Rng rng(0);
  return kind == EncoderKind::dense ? build_baseline(c, rng) : amortized_structure(c, rng);
}

TransducerModel clone_model(const ExperimentConfig& c, TransducerModel& model) {
  TransducerModel out = build_layout(c, model.encoder.kind());
  copy_tensors(model, out);
  return out;
}

double ParameterCounts::arbitrator_share() const {
  AMNET_REQUIRE(encoder > arbitrator, "arbitrator_share: encoder has no branch parameters");
  return static_cast<double>(arbitrator) / static_cast<double>(encoder - arbitrator);
}

ParameterCounts parameter_counts(const TransducerModel& model) {
  ParameterCounts p;
  p.encoder = model.encoder.parameter_count();
  if (model.encoder.kind() == EncoderKind::amortized)
    p.arbitrator = model.encoder.amrnn().arbitrator().parameter_count();
  p.decoder = model.decoder.parameter_count();
  return p;
}

}  // namespace amnet
