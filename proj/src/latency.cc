#include "amnet/latency.h"

#include <algorithm>
#include <cmath>

#include "amnet/error.h"
#include "amnet/ops.h"

namespace amnet {

void DeviceProfile::validate() const {
  AMNET_REQUIRE(std::isfinite(mu) && mu > 0.0, "DeviceProfile: mu must be positive");
  AMNET_REQUIRE(std::isfinite(rho) && rho > 0.0, "DeviceProfile: rho must be positive");
}

double BacklogTrace::peak() const { return *std::max_element(backlog.begin(), backlog.end()); }

double avg_cost_loss(std::span<const double> q) {
  AMNET_REQUIRE(!q.empty(), "avg_cost_loss: empty cost sequence");
  double s = 0.0;
  for (double v : q) s += v;
  return s / static_cast<double>(q.size());
}

std::vector<double> avg_cost_gradient(std::size_t frames) {
  AMNET_REQUIRE(frames > 0, "avg_cost_gradient: empty cost sequence");
  return std::vector<double>(frames, 1.0 / static_cast<double>(frames));
}

namespace {

inline double backlog_step(double prev, double q, double budget) {
  return std::max(prev + q - budget, 0.0);
}

void require_costs(std::span<const double> q) {
  for (double v : q)
    AMNET_REQUIRE(std::isfinite(v) && v >= 0.0, "latency: costs must be finite and non-negative");
}

}  // namespace

BacklogTrace backlog_sequence(std::span<const double> q, const DeviceProfile& profile) {
  profile.validate();
  require_costs(q);
  const double b = profile.budget();
  BacklogTrace trace;
  trace.backlog.resize(q.size() + 1);
  trace.backlog[0] = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t)
    trace.backlog[t + 1] = backlog_step(trace.backlog[t], q[t], b);
  trace.latency_seconds = trace.backlog.back() / profile.mu;
  return trace;
}

double terminal_backlog(std::span<const double> q, const DeviceProfile& profile) {
  profile.validate();
  const double b = profile.budget();
  double l = 0.0;
  for (double v : q) l = backlog_step(l, v, b);
  return l;
}

double amortized_latency_loss(std::span<const double> q, const DeviceProfile& profile) {
  require_costs(q);
  return terminal_backlog(q, profile) / profile.mu;
}

std::vector<double> amr_subgradient(std::span<const double> q, const DeviceProfile& profile) {
  profile.validate();
  const double b = profile.budget();
  std::vector<char> positive(q.size());
  double l = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    const double pre = l + q[t] - b;
    positive[t] = pre > 0.0;
    l = std::max(pre, 0.0);
  }
  std::vector<double> g(q.size(), 0.0);
  double carry = 1.0 / profile.mu;
  for (std::size_t t = q.size(); t-- > 0;) {
    if (!positive[t]) carry = 0.0;
    g[t] = carry;
  }
  return g;
}

LatencySimulation simulate_runtime_latency(const DecisionSequence& decisions,
                                           const DeviceProfile& profile) {
  AMNET_REQUIRE(decisions.hard, "simulate_runtime_latency: needs a hard decision sequence");
  LatencySimulation sim;
  sim.trace = backlog_sequence(decisions.costs, profile);
  sim.latency_seconds = sim.trace.latency_seconds;
  return sim;
}

double combined_training_loss(double transducer_nll, double compute_loss, double lambda) {
  return transducer_nll + lambda * compute_loss;
}

Var combined_training_loss(Var transducer_nll, Var compute_loss, double lambda) {
  return add(transducer_nll, scale(compute_loss, lambda));
}

Var average_cost(Var q) {
  AMNET_REQUIRE(q.rows() == 1 || q.cols() == 1, "average_cost: costs must be a vector");
  const auto values = q.value().data();
  const double loss = avg_cost_loss(values);
  const double inv = 1.0 / static_cast<double>(values.size());
  return q.tape()->record(Matrix(1, 1, loss), {q},
                          [inv](const Matrix& g, std::span<Matrix* const> gi) {
                            for (double& v : gi[0]->data()) v += g[0] * inv;
                          });
}

Var amortized_latency(Var q, const DeviceProfile& profile) {
  AMNET_REQUIRE(q.rows() == 1 || q.cols() == 1, "amortized_latency: costs must be a vector");
  const auto values = q.value().data();
  const double loss = amortized_latency_loss(values, profile);
  std::vector<double> grad = amr_subgradient(values, profile);
  return q.tape()->record(Matrix(1, 1, loss), {q},
                          [grad = std::move(grad)](const Matrix& g, std::span<Matrix* const> gi) {
                            auto d = gi[0]->data();
                            for (std::size_t t = 0; t < d.size(); ++t) d[t] += g[0] * grad[t];
                          });
}

}  // namespace amnet
