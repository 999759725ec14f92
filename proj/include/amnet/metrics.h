#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "amnet/data.h"
#include "amnet/latency.h"
#include "amnet/transducer.h"

namespace amnet {

struct UtteranceResult {
  std::string id;
  std::vector<int> hypothesis;
  std::vector<int> reference;
  std::vector<double> costs;           // realized q_t
  std::vector<std::size_t> branches;   // empty for a dense encoder
  std::vector<double> backlog;         // l_0..l_T
  double latency_seconds = 0.0;
};

struct MetricsReport {
  std::string name;
  std::string encoder;  // "dense" or "amortized"
  std::size_t utterances = 0;
  std::size_t frames = 0;
  double token_error_rate = 0.0;
  double flops_per_frame = 0.0;  // pooled over all frames
  double latency_ms = 0.0;       // mean over utterances
  double max_latency_ms = 0.0;
  std::vector<double> branch_ratios;  // slow, fast; empty for dense
  std::size_t encoder_parameters = 0;
  std::size_t arbitrator_parameters = 0;
  // Relative to a recorded baseline run, as fractions.
  std::optional<double> flops_reduction;
  std::optional<double> latency_reduction;
  std::optional<std::string> baseline_name;

  double fast_ratio() const;
};

// Hard run-time encoding, beam decoding and latency simulation over `data`.
MetricsReport evaluate(TransducerModel& model, const Dataset& data, const DeviceProfile& profile,
                       std::size_t beam_width, const std::string& name,
                       std::vector<UtteranceResult>* details = nullptr);

void attach_baseline(MetricsReport& report, const MetricsReport& baseline);

// One JSON object on one line.
std::string to_json_line(const MetricsReport& r);
MetricsReport from_json_line(const std::string& line);
void append_jsonl(const std::filesystem::path& path, const MetricsReport& r);

// Rows: utterance,t,decision,q,backlog. decision is the branch that ran
// (blank for a dense encoder), backlog is l_t after frame t.
void write_trace_csv(const std::filesystem::path& path, const std::vector<UtteranceResult>& rows);
// Reads utterance,t,...,q columns back into per-utterance cost sequences.
std::vector<std::pair<std::string, std::vector<double>>> read_trace_csv(
    const std::filesystem::path& path);

// Hypotheses and references, one utterance per line: "<id> <ids...>".
void write_transcripts(const std::filesystem::path& path, const std::vector<UtteranceResult>& rows,
                       bool hypotheses);

}  // namespace amnet
