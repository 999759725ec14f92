#include "amnet/config.h"

#include <boost/property_tree/ini_parser.hpp>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "amnet/compression.h"
#include "amnet/error.h"

namespace amnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw ContractError("expected a count");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x)) throw ContractError("expected a number");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("expected true or false");
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(to_size(trim(part)));
  if (out.empty()) throw ContractError("expected a comma-separated list of counts");
  return out;
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::string fmt(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Get>
Field size_field(std::string s, std::string k, Get g) {
  return {s, k, [g](ExperimentConfig& c, const std::string& v) { g(c) = to_size(v); },
          [g](const ExperimentConfig& c) {
            return std::to_string(g(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Get>
Field double_field(std::string s, std::string k, Get g) {
  return {s, k, [g](ExperimentConfig& c, const std::string& v) { g(c) = to_double(v); },
          [g](const ExperimentConfig& c) { return fmt(g(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Get>
Field bool_field(std::string s, std::string k, Get g) {
  return {s, k, [g](ExperimentConfig& c, const std::string& v) { g(c) = to_bool(v); },
          [g](const ExperimentConfig& c) {
            return std::string(g(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Get>
Field string_field(std::string s, std::string k, Get g) {
  return {s, k, [g](ExperimentConfig& c, const std::string& v) { g(c) = v; },
          [g](const ExperimentConfig& c) { return g(const_cast<ExperimentConfig&>(c)); }};
}

template <typename Get>
Field optional_double_field(std::string s, std::string k, Get g) {
  return {s, k,
          [g](ExperimentConfig& c, const std::string& v) {
            if (v == "auto") g(c).reset();
            else g(c) = to_double(v);
          },
          [g](const ExperimentConfig& c) {
            const auto& o = g(const_cast<ExperimentConfig&>(c));
            return o ? fmt(*o) : std::string("auto");
          }};
}

template <typename E, typename Get>
Field enum_field(std::string s, std::string k, Get g, std::vector<std::pair<E, std::string>> names) {
  return {s, k,
          [g, names](ExperimentConfig& c, const std::string& v) {
            for (const auto& [e, n] : names)
              if (n == v) {
                g(c) = e;
                return;
              }
            std::string allowed;
            for (const auto& [e, n] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw ContractError("expected one of " + allowed);
          },
          [g, names](const ExperimentConfig& c) {
            const E e = g(const_cast<ExperimentConfig&>(c));
            for (const auto& [x, n] : names)
              if (x == e) return n;
            return std::string("?");
          }};
}

#define ACCESS(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      string_field("experiment", "name", ACCESS(name)),
      size_field("experiment", "seed", ACCESS(seed)),
      string_field("experiment", "output_dir", ACCESS(output_dir)),

      size_field("data", "labels", ACCESS(data.task.labels)),
      size_field("data", "dim", ACCESS(data.task.dim)),
      size_field("data", "tokens_min", ACCESS(data.task.tokens_min)),
      size_field("data", "tokens_max", ACCESS(data.task.tokens_max)),
      size_field("data", "content_min", ACCESS(data.task.content_min)),
      size_field("data", "content_max", ACCESS(data.task.content_max)),
      double_field("data", "silence_fraction", ACCESS(data.task.silence_fraction)),
      double_field("data", "content_noise", ACCESS(data.task.content_noise)),
      double_field("data", "silence_noise", ACCESS(data.task.silence_noise)),
      size_field("data", "prototype_seed", ACCESS(data.task.prototype_seed)),
      size_field("data", "train_utterances", ACCESS(data.train_utterances)),
      size_field("data", "dev_utterances", ACCESS(data.dev_utterances)),
      size_field("data", "test_utterances", ACCESS(data.test_utterances)),
      string_field("data", "train_dir", ACCESS(data.train_dir)),
      string_field("data", "dev_dir", ACCESS(data.dev_dir)),
      string_field("data", "test_dir", ACCESS(data.test_dir)),
      size_field("data", "downsample", ACCESS(data.downsample)),
      size_field("data", "stack", ACCESS(data.stack)),
      size_field("data", "stride", ACCESS(data.stride)),

      size_field("model", "encoder_layers", ACCESS(model.encoder_layers)),
      size_field("model", "encoder_hidden", ACCESS(model.encoder_hidden)),
      size_field("model", "decoder_embed", ACCESS(model.decoder_embed)),
      {"model", "decoder_hidden",
       [](ExperimentConfig& c, const std::string& v) { c.model.decoder_hidden = to_sizes(v); },
       [](const ExperimentConfig& c) { return fmt(c.model.decoder_hidden); }},

      enum_field<CompressionMethod>("branches", "method", ACCESS(branches.method),
                                    {{CompressionMethod::sparse, "sparse"},
                                     {CompressionMethod::factorized, "factorized"}}),
      double_field("branches", "slow_target", ACCESS(branches.slow_target)),
      double_field("branches", "fast_target", ACCESS(branches.fast_target)),
      enum_field<BranchInit>("branches", "init", ACCESS(branches.init),
                             {{BranchInit::scratch, "scratch"}, {BranchInit::seed, "seed"}}),

      {"arbitrator", "hidden",
       [](ExperimentConfig& c, const std::string& v) { c.arbitrator.hidden = to_sizes(v); },
       [](const ExperimentConfig& c) { return fmt(c.arbitrator.hidden); }},
      bool_field("arbitrator", "use_prev_state", ACCESS(arbitrator.use_prev_state)),
      bool_field("arbitrator", "use_prev_decision", ACCESS(arbitrator.use_prev_decision)),
      bool_field("arbitrator", "literal_previous_decision", ACCESS(literal_previous_decision)),

      double_field("sampler", "tau_start", ACCESS(sampler.tau_start)),
      double_field("sampler", "tau_end", ACCESS(sampler.tau_end)),
      size_field("sampler", "anneal_steps", ACCESS(sampler.anneal_steps)),

      size_field("pruning", "frequency", ACCESS(pruning.frequency)),
      size_field("pruning", "steps", ACCESS(pruning.steps)),

      double_field("device", "mu", ACCESS(device.mu)),
      double_field("device", "rho", ACCESS(device.rho)),

      size_field("train", "batch_size", ACCESS(train.batch_size)),
      size_field("train", "baseline_steps", ACCESS(train.baseline_steps)),
      size_field("train", "prune_steps", ACCESS(train.prune_steps)),
      size_field("train", "pretrain_steps", ACCESS(train.pretrain_steps)),
      size_field("train", "gumbel_steps", ACCESS(train.gumbel_steps)),
      size_field("train", "finetune_steps", ACCESS(train.finetune_steps)),
      optional_double_field("train", "lambda_avg", ACCESS(train.lambda_avg)),
      double_field("train", "lambda_avg_scale", ACCESS(train.lambda_avg_scale)),
      optional_double_field("train", "lambda_amr", ACCESS(train.lambda_amr)),
      double_field("train", "lambda_amr_scale", ACCESS(train.lambda_amr_scale)),
      double_field("train", "entropy_threshold", ACCESS(train.entropy_threshold)),
      enum_field<TrainCost>("train", "train_cost", ACCESS(train.train_cost),
                            {{TrainCost::expected, "expected"},
                             {TrainCost::straight_through, "straight_through"}}),
      double_field("train", "finetune_lr_factor", ACCESS(train.finetune_lr_factor)),

      double_field("optimizer", "lr", ACCESS(train.optimizer.lr)),
      size_field("optimizer", "warmup_steps", ACCESS(train.optimizer.warmup_steps)),
      size_field("optimizer", "hold_steps", ACCESS(train.optimizer.hold_steps)),
      double_field("optimizer", "final_lr_factor", ACCESS(train.optimizer.final_lr_factor)),
      double_field("optimizer", "beta1", ACCESS(train.optimizer.beta1)),
      double_field("optimizer", "beta2", ACCESS(train.optimizer.beta2)),
      double_field("optimizer", "epsilon", ACCESS(train.optimizer.epsilon)),
      double_field("optimizer", "clip_norm", ACCESS(train.optimizer.clip_norm)),

      size_field("eval", "beam_width", ACCESS(eval.beam_width)),
  };
  return f;
}

#undef ACCESS

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (f.section == section && f.key == key) return f;
  throw ContractError("config: unknown key [" + section + "] " + key);
}

void set_field(ExperimentConfig& c, const std::string& section, const std::string& key,
               const std::string& value) {
  const Field& f = find_field(section, key);
  try {
    f.set(c, value);
  } catch (const ContractError& e) {
    throw ContractError("config: [" + section + "] " + key + " = '" + value + "': " + e.what());
  }
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ContractError("config: " + key + ": " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    data.task.validate();
  } catch (const ContractError& e) {
    throw ContractError(std::string("config: [data] ") + e.what());
  }
  check(data.task.labels + 1 <= 64, "data.labels", "vocabulary is limited to 63 tokens");
  check(data.downsample >= 1 && data.stack >= 1 && data.stride >= 1,
        "data.downsample/stack/stride", "must be at least 1");
  const bool any_dir = !data.train_dir.empty() || !data.dev_dir.empty() || !data.test_dir.empty();
  const bool all_dirs = !data.train_dir.empty() && !data.dev_dir.empty() && !data.test_dir.empty();
  check(!any_dir || all_dirs, "data.*_dir", "set all of train_dir, dev_dir, test_dir or none");
  if (!any_dir) {
    check(data.train_utterances >= 1 && data.dev_utterances >= 1 && data.test_utterances >= 1,
          "data.*_utterances", "each split needs at least one utterance");
  }

  check(model.encoder_layers >= 1, "model.encoder_layers", "must be at least 1");
  check(model.encoder_hidden >= 1, "model.encoder_hidden", "must be positive");
  check(model.decoder_embed >= 1, "model.decoder_embed", "must be positive");
  for (std::size_t h : model.decoder_hidden) check(h >= 1, "model.decoder_hidden", "must be positive");

  const double s = branches.slow_target, f = branches.fast_target;
  if (branches.method == CompressionMethod::sparse) {
    check(s >= 0.0 && s < 1.0, "branches.slow_target", "sparsity must lie in [0, 1)");
    check(f >= 0.0 && f < 1.0, "branches.fast_target", "sparsity must lie in [0, 1)");
  } else {
    check(s > 0.0 && s < 1.0, "branches.slow_target", "compression must lie in (0, 1)");
    check(f > 0.0 && f < 1.0, "branches.fast_target", "compression must lie in (0, 1)");
  }
  check(f > s, "branches.fast_target",
        "the fast branch must be compressed more than the slow branch (it would cost more)");
  if (branches.method == CompressionMethod::factorized) {
    std::size_t in = feature_dim();
    for (std::size_t l = 0; l < model.encoder_layers; ++l) {
      const std::size_t w = in + model.encoder_hidden, v = model.encoder_hidden;
      std::size_t rs = 0, rf = 0;
      try {
        rs = rank_for_compression(w, v, s);
        rf = rank_for_compression(w, v, f);
      } catch (const ContractError&) {
        check(false, "branches", "no rank >= 1 reaches the compression target for layer " +
                                     std::to_string(l));
      }
      check(rf < rs, "branches.fast_target",
            "fast and slow ranks coincide for layer " + std::to_string(l));
      in = model.encoder_hidden;
    }
    check(branches.init == BranchInit::seed, "branches.init",
          "factorized branches are derived from a pretrained dense encoder");
  }

  check(!arbitrator.hidden.empty(), "arbitrator.hidden", "need at least one layer");
  for (std::size_t h : arbitrator.hidden) check(h >= 1, "arbitrator.hidden", "must be positive");

  check(sampler.tau_end > 0.0, "sampler.tau_end", "must be positive");
  check(sampler.tau_start >= sampler.tau_end, "sampler.tau_start", "must be >= tau_end");
  check(sampler.anneal_steps <= train.gumbel_steps, "sampler.anneal_steps",
        "must not exceed train.gumbel_steps");

  check(pruning.frequency >= 1, "pruning.frequency", "must be at least 1");
  check(pruning.steps >= 1, "pruning.steps", "must be at least 1");
  if (branches.method == CompressionMethod::sparse) {
    check(pruning.steps * pruning.frequency <= train.prune_steps, "pruning.steps",
          "the sparsity ramp (steps * frequency) must end within train.prune_steps");
  }

  try {
    device.validate();
  } catch (const ContractError& e) {
    throw ContractError(std::string("config: [device] ") + e.what());
  }

  check(train.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(train.baseline_steps >= 1, "train.baseline_steps", "must be at least 1");
  check(train.prune_steps >= 1, "train.prune_steps", "must be at least 1");
  check(train.gumbel_steps >= 1, "train.gumbel_steps", "must be at least 1");
  check(train.finetune_steps >= 1, "train.finetune_steps", "must be at least 1");
  check(!train.lambda_avg || *train.lambda_avg >= 0.0, "train.lambda_avg", "must be >= 0");
  check(!train.lambda_amr || *train.lambda_amr >= 0.0, "train.lambda_amr", "must be >= 0");
  check(train.lambda_avg_scale >= 0.0, "train.lambda_avg_scale", "must be >= 0");
  check(train.lambda_amr_scale >= 0.0, "train.lambda_amr_scale", "must be >= 0");
  check(train.entropy_threshold >= 0.0, "train.entropy_threshold", "must be >= 0");
  check(train.finetune_lr_factor > 0.0, "train.finetune_lr_factor", "must be positive");

  const OptimizerConfig& o = train.optimizer;
  check(o.lr > 0.0, "optimizer.lr", "must be positive");
  check(o.final_lr_factor > 0.0 && o.final_lr_factor <= 1.0, "optimizer.final_lr_factor",
        "must lie in (0, 1]");
  check(o.beta1 >= 0.0 && o.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  check(o.beta2 >= 0.0 && o.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  check(o.epsilon > 0.0, "optimizer.epsilon", "must be positive");
  check(o.clip_norm >= 0.0, "optimizer.clip_norm", "must be >= 0 (0 disables clipping)");

  check(eval.beam_width >= 1, "eval.beam_width", "must be at least 1");
}

ExperimentConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty())
      throw ContractError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : entries) set_field(c, section, key, value.data());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  AMNET_REQUIRE(in.good(), "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& c) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    out << f.key << " = " << f.get(c) << '\n';
  }
  return out.str();
}

void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  AMNET_REQUIRE(eq != std::string::npos && dot != std::string::npos && dot < eq,
                "override must look like section.key=value: " + assignment);
  set_field(c, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
            trim(assignment.substr(eq + 1)));
}

}  // namespace amnet
