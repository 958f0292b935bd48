#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow {

/// Net per-bus consumption in p.u. (loads positive, PV generation negative).
/// Entry 0 (slack) is ignored by the solvers.
struct Injection {
  std::vector<double> p;
  std::vector<double> q;

  static Injection zeros(std::size_t n_bus) { return {std::vector<double>(n_bus, 0.0), std::vector<double>(n_bus, 0.0)}; }
};

struct PowerFlowSolution {
  std::vector<double> v;            // magnitude, p.u.
  std::vector<double> theta;        // angle, rad
  std::vector<double> branch_loss;  // active loss per branch, p.u.
  double slack_p = 0.0;             // active power drawn from the main grid
  double slack_q = 0.0;
  double max_mismatch = 0.0;        // worst complex-power mismatch over non-slack buses
  bool converged = false;
  int iterations = 0;

  bool operator==(const PowerFlowSolution&) const = default;
};

struct SweepOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
};

/// Backward/forward sweep from a flat start.
PowerFlowSolution solve_sweep(const PowerNetwork& network, const Injection& inj, SweepOptions options = {});

/// Polar Newton-Raphson with a dense Jacobian. Independent reference solver.
PowerFlowSolution solve_newton_oracle(const PowerNetwork& network, const Injection& inj,
                                      double tolerance = 1e-10, int max_iterations = 50);

/// Sum of branch losses. Throws std::invalid_argument on an unconverged solution.
double total_power_loss(const PowerFlowSolution& solution);

/// Voltage bounds outside which a solve counts as a system crash.
struct CrashBounds {
  double v_min = 0.5;
  double v_max = 1.5;
};

bool is_crash(const PowerFlowSolution& solution, CrashBounds bounds = {});

/// Uniform p in +-scale and q in +-scale/2 on every non-slack bus.
Injection random_injection(const PowerNetwork& network, std::mt19937_64& rng, double scale);

struct SolverComparison {
  std::size_t samples = 0;
  std::size_t failures = 0;      // either solver unconverged
  double max_voltage_gap = 0.0;  // |V| and angle, worst over buses and samples
  double max_balance_residual = 0.0;  // |slack P - demand - losses| and worst bus mismatch
};

/// Sweep against the Newton oracle on seeded random injections.
SolverComparison compare_solvers(const PowerNetwork& network, std::size_t samples, std::uint64_t seed,
                                 double scale = 0.08);

}  // namespace gridflow
