#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>

#include "amnet/error.h"
#include "amnet/latency.h"
#include "amnet/ops.h"
#include "support/gradcheck.h"
#include "support/oracles.h"

namespace amnet {
namespace {

// mu = 1 so that the budget b equals rho.
DeviceProfile budget(double b) { return {1.0, 1.0 / b}; }

std::vector<double> random_costs(std::size_t T, std::mt19937_64& rng, double hi) {
  std::uniform_real_distribution<double> u(0.0, hi);
  std::vector<double> q(T);
  for (double& v : q) v = u(rng);
  return q;
}

TEST(AvgCost, Examples) {
  EXPECT_DOUBLE_EQ(avg_cost_loss(std::vector<double>{10, 10, 10}), 10.0);
  EXPECT_DOUBLE_EQ(avg_cost_loss(std::vector<double>{15, 5, 15, 5}), 10.0);
  EXPECT_THROW(avg_cost_loss(std::vector<double>{}), ContractError);
  EXPECT_EQ(avg_cost_gradient(4), std::vector<double>(4, 0.25));
}

TEST(AvgCost, PermutationInvariantProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = random_costs(1 + trial % 40, rng, 100.0);
    // Integer-valued costs keep the sum exact under reordering.
    for (double& v : q) v = std::round(v);
    const double before = avg_cost_loss(q);
    std::shuffle(q.begin(), q.end(), rng);
    EXPECT_EQ(avg_cost_loss(q), before);
  }
}

TEST(Backlog, HandTraces) {
  using V = std::vector<double>;
  EXPECT_EQ(backlog_sequence(V{5, 5, 5}, budget(10)).backlog, (V{0, 0, 0, 0}));
  EXPECT_EQ(backlog_sequence(V{15, 5, 15}, budget(10)).backlog, (V{0, 5, 0, 5}));
  BacklogTrace tr = backlog_sequence(V{15, 15, 15}, budget(10));
  EXPECT_EQ(tr.backlog, (V{0, 5, 10, 15}));
  EXPECT_DOUBLE_EQ(tr.latency_seconds, 15.0);
  EXPECT_DOUBLE_EQ(tr.peak(), 15.0);
  EXPECT_DOUBLE_EQ(amortized_latency_loss(V{15, 15, 15}, budget(10)), 15.0);
  EXPECT_DOUBLE_EQ(amortized_latency_loss(V{5, 5, 5}, budget(10)), 0.0);
}

TEST(Backlog, RejectsBadInput) {
  EXPECT_THROW(backlog_sequence(std::vector<double>{-1.0}, budget(10)), ContractError);
  EXPECT_THROW(backlog_sequence(std::vector<double>{1.0}, DeviceProfile{0.0, 1.0}), ContractError);
  EXPECT_THROW(backlog_sequence(std::vector<double>{1.0}, DeviceProfile{1.0, -1.0}), ContractError);
}

TEST(Backlog, TraceSatisfiesRecursionProperty) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = random_costs(1 + trial % 60, rng, 20.0);
    const DeviceProfile p{3.0, 0.3};
    BacklogTrace tr = backlog_sequence(q, p);
    ASSERT_EQ(tr.backlog.size(), q.size() + 1);
    EXPECT_EQ(tr.backlog[0], 0.0);
    for (std::size_t t = 0; t < q.size(); ++t) {
      EXPECT_GE(tr.backlog[t + 1], 0.0);
      EXPECT_EQ(tr.backlog[t + 1], std::max(tr.backlog[t] + q[t] - p.budget(), 0.0));
    }
    EXPECT_EQ(terminal_backlog(q, p), tr.terminal());
  }
}

TEST(Backlog, AgreesWithQueueSimulation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    auto q = random_costs(1 + trial % 80, rng, 2000.0);
    const DeviceProfile p{1000.0, 1.0 + trial % 3};
    EXPECT_NEAR(amortized_latency_loss(q, p), testing::event_driven_latency(q, p.mu, p.rho), 1e-9);
  }
}

TEST(Amr, OrderMattersAtEqualAverage) {
  const double F = 4, S = 16;
  std::vector<double> fast_first{F, F, F, F, S, S, S, S};
  std::vector<double> slow_first(fast_first.rbegin(), fast_first.rend());
  EXPECT_EQ(avg_cost_loss(fast_first), avg_cost_loss(slow_first));
  EXPECT_GT(amortized_latency_loss(fast_first, budget(10)),
            amortized_latency_loss(slow_first, budget(10)));
}

TEST(Amr, ConvexProperty) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const DeviceProfile p{7.0, 0.7};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 1 + trial % 100;
    auto a = random_costs(T, rng, 20.0), b = random_costs(T, rng, 20.0);
    const double lam = unit(rng);
    std::vector<double> mix(T);
    for (std::size_t t = 0; t < T; ++t) mix[t] = lam * a[t] + (1 - lam) * b[t];
    EXPECT_LE(amortized_latency_loss(mix, p),
              lam * amortized_latency_loss(a, p) + (1 - lam) * amortized_latency_loss(b, p) + 1e-9);
  }
}

TEST(Amr, MonotoneProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> bump(0.0, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    auto q = random_costs(1 + trial % 50, rng, 20.0);
    const double before = amortized_latency_loss(q, budget(10));
    q[trial % q.size()] += bump(rng);
    EXPECT_GE(amortized_latency_loss(q, budget(10)), before);
  }
}

TEST(Amr, SubgradientExamples) {
  using V = std::vector<double>;
  EXPECT_EQ(amr_subgradient(V{5, 5, 5}, budget(10)), (V{0, 0, 0}));
  EXPECT_EQ(amr_subgradient(V{15, 15, 15}, budget(10)), (V{1, 1, 1}));
  EXPECT_EQ(amr_subgradient(V{15, 5, 15}, budget(10)), (V{0, 0, 1}));
  const DeviceProfile p{4.0, 0.4};  // budget 10, 1/mu = 0.25
  EXPECT_EQ(amr_subgradient(V{15, 15, 15}, p), (V{0.25, 0.25, 0.25}));
  // Exactly on the kink takes the zero branch.
  EXPECT_EQ(amr_subgradient(V{15, 5, 12}, budget(10)), (V{0, 0, 1}));
  EXPECT_EQ(amr_subgradient(V{10, 12}, budget(10)), (V{0, 1}));
}

TEST(Amr, SubgradientMatchesFiniteDifferencesAwayFromKinks) {
  std::mt19937_64 rng(6);
  const DeviceProfile p{50.0, 5.0};  // budget 10
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 100; ++trial) {
    auto q = random_costs(2 + trial % 30, rng, 20.0);
    bool near_kink = false;
    double l = 0.0;
    for (double v : q) {
      near_kink |= std::abs(l + v - p.budget()) < 1e-3;
      l = std::max(l + v - p.budget(), 0.0);
    }
    if (near_kink) continue;
    ++checked;
    const auto g = amr_subgradient(q, p);
    const double h = 1e-4;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t t = 0; t < q.size(); ++t) {
      auto up = q, down = q;
      up[t] += h;
      down[t] -= h;
      const double num =
          (amortized_latency_loss(up, p) - amortized_latency_loss(down, p)) / (2 * h);
      diff2 += (num - g[t]) * (num - g[t]);
      a2 += g[t] * g[t];
      n2 += num * num;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
    if (a2 == 0 && n2 == 0) continue;
    EXPECT_LT(std::sqrt(diff2) / denom, 1e-6);
  }
  EXPECT_GE(checked, 50);
}

TEST(Amr, RecordedOpsMatchPlainFunctions) {
  const std::vector<double> q{15, 5, 15, 20};
  const DeviceProfile p{2.0, 0.2};
  Matrix qm = Matrix::row(q);
  {
    Tape tape;
    Var loss = amortized_latency(tape.parameter(qm), p);
    EXPECT_EQ(loss.scalar(), amortized_latency_loss(q, p));
    tape.backward(loss);
  }
  const auto g = amr_subgradient(q, p);
  for (std::size_t t = 0; t < q.size(); ++t) EXPECT_EQ(qm.grad()[t], g[t]);
  qm.clear_grad();
  {
    Tape tape;
    Var loss = average_cost(tape.parameter(qm));
    EXPECT_DOUBLE_EQ(loss.scalar(), 13.75);
    tape.backward(loss);
  }
  for (double v : qm.grad()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Amr, SimulatorAgreesExactly) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    DecisionSequence ds;
    ds.hard = true;
    ds.costs = random_costs(1 + trial, rng, 5e7);
    const DeviceProfile p{650e6, 1.0 / 0.030};
    EXPECT_EQ(simulate_runtime_latency(ds, p).latency_seconds, amortized_latency_loss(ds.costs, p));
  }
  DecisionSequence soft;
  soft.costs = {1.0};
  EXPECT_THROW(simulate_runtime_latency(soft, DeviceProfile{}), ContractError);
}

TEST(Amr, CombinedLoss) {
  EXPECT_DOUBLE_EQ(combined_training_loss(2.0, 10.0, 0.1), 3.0);
}

TEST(Amr, LinearTimeScaling) {
  std::mt19937_64 rng(8);
  auto small = random_costs(100000, rng, 20.0);
  auto large = random_costs(1000000, rng, 20.0);
  const DeviceProfile p{1.0, 10.0};
  auto time = [&](const std::vector<double>& q) {
    double best = 1e9;
    for (int rep = 0; rep < 5; ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      volatile double sink = amortized_latency_loss(q, p) + amr_subgradient(q, p)[0];
      (void)sink;
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  EXPECT_LE(time(large), 15.0 * time(small));
}

}  // namespace
}  // namespace amnet
