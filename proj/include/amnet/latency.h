#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amnet/amortized.h"
#include "amnet/tape.h"

namespace amnet {

// Device compute rate mu (FLOPs/s) and feature frame rate rho (frames/s).
struct DeviceProfile {
  double mu = 650e6;
  double rho = 1.0 / 0.030;

  // FLOPs the device can spend per frame while keeping up: mu / rho.
  double budget() const { return mu / rho; }
  void validate() const;
};

// Buffered FLOP backlog l_0..l_T with l_0 = 0 and
// l_t = max(l_{t-1} + q_t - mu/rho, 0).
struct BacklogTrace {
  std::vector<double> backlog;  // size T + 1
  double latency_seconds = 0.0;  // l_T / mu

  double terminal() const { return backlog.back(); }
  double peak() const;  // diagnostic only
};

// Mean cost (1/T) sum q_t.
double avg_cost_loss(std::span<const double> q);
std::vector<double> avg_cost_gradient(std::size_t frames);

BacklogTrace backlog_sequence(std::span<const double> q, const DeviceProfile& profile);
// Terminal backlog only, O(1) memory.
double terminal_backlog(std::span<const double> q, const DeviceProfile& profile);

// Response delay in seconds: l_T / mu.
double amortized_latency_loss(std::span<const double> q, const DeviceProfile& profile);

// dL/dq_t = 1/mu while the backlog stays strictly positive from t through T,
// else 0. A step that lands exactly on zero takes the zero branch.
std::vector<double> amr_subgradient(std::span<const double> q, const DeviceProfile& profile);

struct LatencySimulation {
  double latency_seconds = 0.0;
  BacklogTrace trace;
};

// Replays realized hard costs through the backlog recursion.
LatencySimulation simulate_runtime_latency(const DecisionSequence& decisions,
                                           const DeviceProfile& profile);

// nll + lambda * compute.
double combined_training_loss(double transducer_nll, double compute_loss, double lambda);
Var combined_training_loss(Var transducer_nll, Var compute_loss, double lambda);

// Recorded compute losses over a 1 x T row (or T x 1 column) of costs.
Var average_cost(Var q);
Var amortized_latency(Var q, const DeviceProfile& profile);

}  // namespace amnet
