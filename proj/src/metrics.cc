#include "amnet/metrics.h"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "amnet/error.h"
#include "amnet/model_io.h"

namespace amnet {

using nlohmann::json;

double MetricsReport::fast_ratio() const {
  return branch_ratios.size() > kFastBranch ? branch_ratios[kFastBranch] : 0.0;
}

MetricsReport evaluate(TransducerModel& model, const Dataset& data, const DeviceProfile& profile,
                       std::size_t beam_width, const std::string& name,
                       std::vector<UtteranceResult>* details) {
  AMNET_REQUIRE(!data.empty(), "evaluate: empty dataset");
  AMNET_REQUIRE(beam_width >= 1, "evaluate: beam width must be positive");
  profile.validate();
  const bool amortized = model.encoder.kind() == EncoderKind::amortized;

  MetricsReport r;
  r.name = name;
  r.encoder = amortized ? "amortized" : "dense";
  r.utterances = data.size();
  const ParameterCounts pc = parameter_counts(model);
  r.encoder_parameters = pc.encoder;
  r.arbitrator_parameters = pc.arbitrator;

  std::vector<std::vector<int>> hyps, refs;
  double total_flops = 0.0, total_latency = 0.0;
  std::vector<std::size_t> branch_frames(amortized ? model.encoder.amrnn().branch_count() : 0, 0);
  DecoderCache cache(model.decoder);

  for (const Utterance& u : data) {
    Tape tape(false);
    EncodeResult enc = model.encoder.encode_runtime(tape, u.features);
    UtteranceResult ur;
    ur.id = u.id;
    ur.reference = u.labels;
    ur.hypothesis = beam_search(enc.logits.value(), cache, beam_width).labels;
    for (const Var& q : enc.costs) ur.costs.push_back(q.scalar());
    ur.branches = enc.decisions.branches;
    const BacklogTrace trace = backlog_sequence(ur.costs, profile);
    ur.backlog = trace.backlog;
    ur.latency_seconds = trace.latency_seconds;

    for (double q : ur.costs) total_flops += q;
    for (std::size_t b : ur.branches) ++branch_frames.at(b);
    r.frames += ur.costs.size();
    total_latency += ur.latency_seconds;
    r.max_latency_ms = std::max(r.max_latency_ms, 1e3 * ur.latency_seconds);
    hyps.push_back(ur.hypothesis);
    refs.push_back(ur.reference);
    if (details) details->push_back(std::move(ur));
  }

  r.token_error_rate = token_error_rate(hyps, refs);
  r.flops_per_frame = total_flops / static_cast<double>(r.frames);
  r.latency_ms = 1e3 * total_latency / static_cast<double>(r.utterances);
  for (std::size_t n : branch_frames)
    r.branch_ratios.push_back(static_cast<double>(n) / static_cast<double>(r.frames));
  return r;
}

void attach_baseline(MetricsReport& report, const MetricsReport& baseline) {
  AMNET_REQUIRE(baseline.flops_per_frame > 0.0, "attach_baseline: baseline has no cost");
  report.baseline_name = baseline.name;
  report.flops_reduction = 1.0 - report.flops_per_frame / baseline.flops_per_frame;
  // A baseline that never queues leaves nothing to reduce.
  report.latency_reduction =
      baseline.latency_ms > 0.0 ? 1.0 - report.latency_ms / baseline.latency_ms : 0.0;
}

std::string to_json_line(const MetricsReport& r) {
  json j = {
      {"name", r.name},
      {"encoder", r.encoder},
      {"utterances", r.utterances},
      {"frames", r.frames},
      {"token_error_rate", r.token_error_rate},
      {"flops_per_frame", r.flops_per_frame},
      {"latency_ms", r.latency_ms},
      {"max_latency_ms", r.max_latency_ms},
      {"branch_ratios", r.branch_ratios},
      {"encoder_parameters", r.encoder_parameters},
      {"arbitrator_parameters", r.arbitrator_parameters},
  };
  if (r.flops_reduction) j["flops_reduction"] = *r.flops_reduction;
  if (r.latency_reduction) j["latency_reduction"] = *r.latency_reduction;
  if (r.baseline_name) j["baseline"] = *r.baseline_name;
  return j.dump();
}

MetricsReport from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ContractError(std::string("metrics line: ") + e.what());
  }
  MetricsReport r;
  try {
    r.name = j.at("name").get<std::string>();
    r.encoder = j.at("encoder").get<std::string>();
    r.utterances = j.at("utterances").get<std::size_t>();
    r.frames = j.at("frames").get<std::size_t>();
    r.token_error_rate = j.at("token_error_rate").get<double>();
    r.flops_per_frame = j.at("flops_per_frame").get<double>();
    r.latency_ms = j.at("latency_ms").get<double>();
    r.max_latency_ms = j.at("max_latency_ms").get<double>();
    r.branch_ratios = j.at("branch_ratios").get<std::vector<double>>();
    r.encoder_parameters = j.at("encoder_parameters").get<std::size_t>();
    r.arbitrator_parameters = j.at("arbitrator_parameters").get<std::size_t>();
    if (j.contains("flops_reduction")) r.flops_reduction = j["flops_reduction"].get<double>();
    if (j.contains("latency_reduction"))
      r.latency_reduction = j["latency_reduction"].get<double>();
    if (j.contains("baseline")) r.baseline_name = j["baseline"].get<std::string>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("metrics line: ") + e.what());
  }
  return r;
}

void append_jsonl(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path, std::ios::app);
  AMNET_REQUIRE(out, "cannot open " + path.string());
  out << to_json_line(r) << '\n';
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<UtteranceResult>& rows) {
  std::ofstream out(path);
  AMNET_REQUIRE(out, "cannot open " + path.string());
  out << "utterance,t,decision,q,backlog\n" << std::setprecision(17);
  for (const UtteranceResult& u : rows) {
    for (std::size_t t = 0; t < u.costs.size(); ++t) {
      out << u.id << ',' << t << ',';
      if (!u.branches.empty()) out << u.branches[t];
      out << ',' << u.costs[t] << ',' << u.backlog[t + 1] << '\n';
    }
  }
}

std::vector<std::pair<std::string, std::vector<double>>> read_trace_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  AMNET_REQUIRE(in, "cannot open " + path.string());
  std::string line;
  AMNET_REQUIRE(std::getline(in, line), path.string() + ": empty trace");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    AMNET_REQUIRE(it != header.end(), path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t utt_col = col("utterance"), t_col = col("t"), q_col = col("q");

  std::vector<std::pair<std::string, std::vector<double>>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    AMNET_REQUIRE(cells.size() == header.size(), where + ": wrong column count");
    double q = 0.0;
    std::size_t t = 0;
    try {
      std::size_t used = 0;
      q = std::stod(cells[q_col], &used);
      AMNET_REQUIRE(used == cells[q_col].size(), where + ": bad cost");
      t = std::stoul(cells[t_col]);
    } catch (const std::logic_error&) {
      throw ContractError(where + ": bad number");
    }
    AMNET_REQUIRE(q >= 0.0, where + ": negative cost");
    if (out.empty() || out.back().first != cells[utt_col])
      out.emplace_back(cells[utt_col], std::vector<double>{});
    AMNET_REQUIRE(t == out.back().second.size(), where + ": frames out of order");
    out.back().second.push_back(q);
  }
  return out;
}

void write_transcripts(const std::filesystem::path& path, const std::vector<UtteranceResult>& rows,
                       bool hypotheses) {
  std::ofstream out(path);
  AMNET_REQUIRE(out, "cannot open " + path.string());
  for (const UtteranceResult& u : rows) {
    out << u.id;
    for (int y : hypotheses ? u.hypothesis : u.reference) out << ' ' << y;
    out << '\n';
  }
}

}  // namespace amnet
