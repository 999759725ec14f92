// amnet: train, evaluate and inspect amortized RNN-T models.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amnet/checkpoint.h"
#include "amnet/config.h"
#include "amnet/data.h"
#include "amnet/error.h"
#include "amnet/latency.h"
#include "amnet/metrics.h"
#include "amnet/model_io.h"
#include "amnet/training.h"

namespace fs = std::filesystem;
using namespace amnet;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void add(CLI::App* app, bool required) {
    auto* opt = app->add_option("-c,--config", path, "experiment config (INI)");
    if (required) opt->required();
    opt->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override, e.g. train.gumbel_steps=100");
  }

  ExperimentConfig load(const ExperimentConfig& fallback = {}) const {
    ExperimentConfig c = path.empty() ? fallback : load_config(path);
    for (const std::string& o : overrides) apply_override(c, o);
    c.validate();
    return c;
  }
};

void print_report(const MetricsReport& r) {
  std::cout << std::fixed << std::setprecision(4) << r.name << ": TER " << r.token_error_rate
            << ", " << std::setprecision(0) << r.flops_per_frame << " FLOPs/frame, latency "
            << std::setprecision(2) << r.latency_ms << " ms";
  if (!r.branch_ratios.empty())
    std::cout << std::setprecision(3) << ", slow/fast " << r.branch_ratios[kSlowBranch] << "/"
              << r.branch_ratios[kFastBranch];
  if (r.flops_reduction)
    std::cout << std::setprecision(1) << ", FLOPs -" << 100.0 * *r.flops_reduction
              << "%, latency -" << 100.0 * r.latency_reduction.value_or(0.0) << "%";
  std::cout << std::defaultfloat << '\n';
}

int cmd_train(const ConfigArgs& cfg, const std::string& stage, const std::string& baseline,
              const std::string& init, bool quiet) {
  ExperimentConfig c = cfg.load();
  RunOptions opts;
  opts.progress = quiet ? nullptr : &std::cerr;
  opts.baseline_checkpoint = baseline;
  opts.init_checkpoint = init;
  opts.baseline_only = stage == "baseline";
  if (stage == "amortized" && baseline.empty())
    throw ContractError("--stage amortized needs --baseline <checkpoint>");
  const ExperimentResult r = run_experiment(c, opts);
  print_report(r.baseline);
  if (!opts.baseline_only) {
    print_report(r.average);
    print_report(r.amortized);
    std::cout << "lambda_avg " << r.lambda_avg << ", lambda_amr " << r.lambda_amr
              << ", entropy slow ratio " << r.entropy_slow_ratio << '\n';
  }
  std::cout << "outputs in " << c.output_dir << '\n';
  return 0;
}

// One amortized run per value of `key`, all sharing one trained baseline.
int cmd_sweep(const ConfigArgs& cfg, const std::string& sweep, bool quiet) {
  const auto eq = sweep.find('=');
  AMNET_REQUIRE(eq != std::string::npos, "--sweep must look like section.key=v1,v2,...");
  const std::string key = sweep.substr(0, eq);
  for (const char* fixed : {"experiment.", "data.", "model.", "train.baseline_steps"})
    AMNET_REQUIRE(key.rfind(fixed, 0) != 0, "--sweep: " + key + " would change the baseline");
  std::vector<std::string> values;
  std::stringstream ss(sweep.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');) values.push_back(v);
  AMNET_REQUIRE(!values.empty(), "--sweep: no values");

  const ExperimentConfig base = cfg.load();
  const fs::path root = base.output_dir;
  for (const std::string& v : values) {
    ExperimentConfig c = base;
    apply_override(c, key + "=" + v);
    c.validate();
  }

  ExperimentConfig bc = base;
  bc.output_dir = (root / "baseline").string();
  RunOptions bo;
  bo.progress = quiet ? nullptr : &std::cerr;
  bo.baseline_only = true;
  const ExperimentResult b = run_experiment(bc, bo);
  print_report(b.baseline);

  fs::create_directories(root);
  std::ofstream csv(root / "sweep.csv");
  csv << key << ",lambda_avg,lambda_amr,token_error_rate,flops_per_frame,latency_ms,fast_ratio,"
      << "flops_reduction,latency_reduction\n" << std::setprecision(10);
  for (const std::string& v : values) {
    ExperimentConfig c = base;
    apply_override(c, key + "=" + v);
    c.name = base.name + "/" + key + "=" + v;
    c.output_dir = (root / (key + "=" + v)).string();
    RunOptions o;
    o.progress = bo.progress;
    o.baseline_checkpoint = fs::path(bc.output_dir) / "baseline.ckpt";
    const ExperimentResult r = run_experiment(c, o);
    print_report(r.amortized);
    const MetricsReport& a = r.amortized;
    csv << v << ',' << r.lambda_avg << ',' << r.lambda_amr << ',' << a.token_error_rate << ','
        << a.flops_per_frame << ',' << a.latency_ms << ',' << a.fast_ratio() << ','
        << a.flops_reduction.value_or(0.0) << ',' << a.latency_reduction.value_or(0.0) << '\n';
  }
  std::cout << "sweep summary in " << (root / "sweep.csv").string() << '\n';
  return 0;
}

int cmd_evaluate(const ConfigArgs& cfg, const std::string& checkpoint, const std::string& split,
                 const std::string& baseline_metrics, const std::string& trace,
                 const std::string& metrics_out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  // Data, device and decoding settings may be overridden; the model layout
  // always comes from the checkpoint.
  ExperimentConfig c = cfg.load(ck.config);
  const DatasetSplits data = load_splits(c);
  const Dataset& set = split == "train" ? data.train : split == "dev" ? data.dev : data.test;
  std::vector<UtteranceResult> rows;
  MetricsReport r = evaluate(ck.model, set, c.device, c.eval.beam_width,
                             fs::path(checkpoint).stem().string() + "/" + split, &rows);
  if (!baseline_metrics.empty()) {
    std::ifstream in(baseline_metrics);
    std::string line;
    AMNET_REQUIRE(in && std::getline(in, line), "cannot read " + baseline_metrics);
    attach_baseline(r, from_json_line(line));
  }
  if (!trace.empty()) write_trace_csv(trace, rows);
  if (!metrics_out.empty()) append_jsonl(metrics_out, r);
  print_report(r);
  std::cout << to_json_line(r) << '\n';
  return 0;
}

int cmd_seed(const ConfigArgs& cfg, const std::string& from, const std::string& out) {
  LoadedCheckpoint ck = load_checkpoint(from);
  AMNET_REQUIRE(ck.model.encoder.kind() == EncoderKind::dense, from + " is not a dense model");
  ExperimentConfig c = cfg.load(ck.config);
  AMNET_REQUIRE(c.model.encoder_layers == ck.config.model.encoder_layers &&
                    c.model.encoder_hidden == ck.config.model.encoder_hidden &&
                    c.feature_dim() == ck.config.feature_dim(),
                "seed: encoder layout differs from the pretrained checkpoint");
  Rng rng(c.seed);
  TransducerModel model = seed_from_pretrained(c, ck.model, rng);
  save_checkpoint(out, c, model);
  const ParameterCounts pc = parameter_counts(model);
  std::cout << "seeded " << out << ": encoder " << pc.encoder << " parameters, arbitrator "
            << pc.arbitrator << " (" << std::setprecision(3) << 100.0 * pc.arbitrator_share()
            << "%)\n";
  for (std::size_t n : {kSlowBranch, kFastBranch})
    std::cout << (n == kSlowBranch ? "slow" : "fast") << " branch frame cost "
              << std::setprecision(10) << model.encoder.branch_frame_cost(n) << " FLOPs\n";
  return 0;
}

int cmd_simulate(const std::string& trace, double mu, double frame_ms) {
  DeviceProfile device;
  device.mu = mu;
  device.rho = 1000.0 / frame_ms;
  device.validate();
  const auto utts = read_trace_csv(trace);
  AMNET_REQUIRE(!utts.empty(), trace + ": no frames");
  double total = 0.0;
  std::cout << "utterance,frames,mean_q,latency_ms\n" << std::setprecision(10);
  for (const auto& [id, q] : utts) {
    const double lat = amortized_latency_loss(q, device);
    double mean = 0.0;
    for (double v : q) mean += v;
    std::cout << id << ',' << q.size() << ',' << mean / static_cast<double>(q.size()) << ','
              << 1e3 * lat << '\n';
    total += lat;
  }
  std::cout << "# budget " << device.budget() << " FLOPs/frame, mean latency "
            << 1e3 * total / static_cast<double>(utts.size()) << " ms over " << utts.size()
            << " utterances\n";
  return 0;
}

int cmd_gen_data(const ConfigArgs& cfg, const std::string& out) {
  ExperimentConfig c = cfg.load();
  AMNET_REQUIRE(c.data.train_dir.empty(), "gen-data: config already points at data directories");
  const fs::path root = out;
  // Same utterances as an in-memory synthetic run with this config.
  ExperimentConfig raw = c;
  raw.data.downsample = raw.data.stack = raw.data.stride = 1;
  const DatasetSplits s = load_splits(raw);
  write_dataset(root / "train", s.train);
  write_dataset(root / "dev", s.dev);
  write_dataset(root / "test", s.test);
  std::cout << "wrote " << s.train.size() << "/" << s.dev.size() << "/" << s.test.size()
            << " utterances under " << root.string() << ", silence ratio " << s.silence_ratio
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized RNN-T toolkit"};
  app.require_subcommand(1);

  ConfigArgs train_cfg, eval_cfg, seed_cfg, gen_cfg;
  std::string stage = "all", baseline, init, sweep, checkpoint, split = "test", baseline_metrics, trace,
              metrics_out, from, out, sim_trace;
  bool quiet = false;
  double mu = 0.0, frame_ms = 30.0;

  auto* train = app.add_subcommand("train", "train a baseline and its amortized counterpart");
  train_cfg.add(train, true);
  train->add_option("--stage", stage, "all, baseline or amortized")
      ->check(CLI::IsMember({"all", "baseline", "amortized"}));
  train->add_option("--baseline", baseline, "dense checkpoint to reuse")
      ->check(CLI::ExistingFile);
  train->add_option("--init", init, "amortized checkpoint to start from")
      ->check(CLI::ExistingFile);
  train->add_flag("-q,--quiet", quiet, "no progress on stderr");
  train->add_option("--sweep", sweep,
                    "one run per value sharing one baseline, e.g. train.lambda_amr_scale=0.3,1,3")
      ->excludes("--baseline")
      ->excludes("--init");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "decode a split and report metrics");
  evaluate_cmd->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cfg.add(evaluate_cmd, false);
  evaluate_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
  evaluate_cmd->add_option("--baseline-metrics", baseline_metrics,
                           "JSONL whose first line is the reference run")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--trace", trace, "write per-frame costs and backlog as CSV");
  evaluate_cmd->add_option("--metrics", metrics_out, "append the report to this JSONL file");

  auto* seed = app.add_subcommand("seed", "initialise amortized branches from a dense checkpoint");
  seed->add_option("--from", from)->required()->check(CLI::ExistingFile);
  seed->add_option("--out", out)->required();
  seed_cfg.add(seed, false);

  auto* simulate = app.add_subcommand("simulate", "replay a cost trace through the backlog model");
  simulate->add_option("trace", sim_trace)->required()->check(CLI::ExistingFile);
  simulate->add_option("--mu", mu, "device FLOPs per second")->required()->check(
      CLI::PositiveNumber);
  simulate->add_option("--frame-ms", frame_ms, "frame shift in milliseconds")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "write the synthetic splits as feature files");
  gen_cfg.add(gen, true);
  gen->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train && !sweep.empty()) return cmd_sweep(train_cfg, sweep, quiet);
    if (*train) return cmd_train(train_cfg, stage, baseline, init, quiet);
    if (*evaluate_cmd)
      return cmd_evaluate(eval_cfg, checkpoint, split, baseline_metrics, trace, metrics_out);
    if (*seed) return cmd_seed(seed_cfg, from, out);
    if (*simulate) return cmd_simulate(sim_trace, mu, frame_ms);
    if (*gen) return cmd_gen_data(gen_cfg, out);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
