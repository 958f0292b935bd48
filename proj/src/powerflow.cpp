#include "gridflow/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace gridflow {

namespace {

using cd = std::complex<double>;

cd impedance(const Branch& b) { return {b.r, b.x}; }

// Branch current oriented parent -> child.
std::vector<cd> branch_currents(const PowerNetwork& net, const std::vector<cd>& voltage) {
  std::vector<cd> current(net.branches().size());
  for (std::size_t bus = 1; bus < net.n_bus(); ++bus) {
    const auto k = net.parent_branch()[bus];
    current[k] = (voltage[net.parent()[bus]] - voltage[bus]) / impedance(net.branches()[k]);
  }
  return current;
}

double max_power_mismatch(const PowerNetwork& net, const Injection& inj, const std::vector<cd>& voltage,
                          const std::vector<cd>& current) {
  std::vector<cd> net_in(net.n_bus(), cd{});
  for (std::size_t bus = 1; bus < net.n_bus(); ++bus) {
    const auto k = net.parent_branch()[bus];
    net_in[bus] += current[k];
    net_in[net.parent()[bus]] -= current[k];
  }
  double worst = 0.0;
  for (std::size_t bus = 1; bus < net.n_bus(); ++bus) {
    const cd delivered = voltage[bus] * std::conj(net_in[bus]);
    const double m = std::abs(delivered - cd{inj.p[bus], inj.q[bus]});
    if (!std::isfinite(m)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, m);
  }
  return worst;
}

void fill_solution(const PowerNetwork& net, const Injection& inj, const std::vector<cd>& voltage,
                   PowerFlowSolution& out) {
  const auto current = branch_currents(net, voltage);
  out.v.resize(net.n_bus());
  out.theta.resize(net.n_bus());
  for (std::size_t bus = 0; bus < net.n_bus(); ++bus) {
    out.v[bus] = std::abs(voltage[bus]);
    out.theta[bus] = std::arg(voltage[bus]);
  }
  out.branch_loss.resize(net.branches().size());
  for (std::size_t k = 0; k < current.size(); ++k) out.branch_loss[k] = net.branches()[k].r * std::norm(current[k]);
  cd slack{};
  for (std::size_t bus = 1; bus < net.n_bus(); ++bus)
    if (net.parent()[bus] == 0) slack += voltage[0] * std::conj(current[net.parent_branch()[bus]]);
  out.slack_p = slack.real();
  out.slack_q = slack.imag();
  out.max_mismatch = max_power_mismatch(net, inj, voltage, current);
}

void check_injection(const PowerNetwork& net, const Injection& inj) {
  if (inj.p.size() != net.n_bus() || inj.q.size() != net.n_bus())
    throw std::invalid_argument("injection length does not match bus count");
  for (std::size_t bus = 1; bus < net.n_bus(); ++bus)
    if (!std::isfinite(inj.p[bus]) || !std::isfinite(inj.q[bus]))
      throw std::invalid_argument("injection must be finite");
}

}  // namespace

PowerFlowSolution solve_sweep(const PowerNetwork& net, const Injection& inj, SweepOptions options) {
  check_injection(net, inj);
  const auto& order = net.bfs_order();
  std::vector<cd> voltage(net.n_bus(), cd{1.0, 0.0});
  std::vector<cd> branch_current(net.branches().size());

  PowerFlowSolution out;
  for (int iter = 0;; ++iter) {
    const double mismatch = max_power_mismatch(net, inj, voltage, branch_currents(net, voltage));
    if (mismatch <= options.tolerance) {
      out.converged = true;
      out.iterations = iter;
      break;
    }
    if (iter == options.max_iterations || !std::isfinite(mismatch)) {
      out.iterations = iter;
      break;
    }

    // backward: accumulate downstream currents
    std::fill(branch_current.begin(), branch_current.end(), cd{});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto bus = *it;
      if (bus == 0) continue;
      const auto k = net.parent_branch()[bus];
      branch_current[k] += std::conj(cd{inj.p[bus], inj.q[bus]} / voltage[bus]);
      const auto up = net.parent()[bus];
      if (up != 0) branch_current[net.parent_branch()[up]] += branch_current[k];
    }
    // forward: drop voltages from the slack outward
    for (auto bus : order) {
      if (bus == 0) continue;
      const auto k = net.parent_branch()[bus];
      voltage[bus] = voltage[net.parent()[bus]] - impedance(net.branches()[k]) * branch_current[k];
    }
  }
  fill_solution(net, inj, voltage, out);
  if (!std::isfinite(out.max_mismatch)) out.converged = false;
  return out;
}

PowerFlowSolution solve_newton_oracle(const PowerNetwork& net, const Injection& inj, double tolerance,
                                      int max_iterations) {
  check_injection(net, inj);
  const auto n = net.n_bus();
  Eigen::MatrixXcd ybus = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& b : net.branches()) {
    const cd y = 1.0 / impedance(b);
    const auto f = static_cast<Eigen::Index>(b.from);
    const auto t = static_cast<Eigen::Index>(b.to);
    ybus(f, f) += y;
    ybus(t, t) += y;
    ybus(f, t) -= y;
    ybus(t, f) -= y;
  }
  const Eigen::MatrixXd g = ybus.real();
  const Eigen::MatrixXd bm = ybus.imag();

  const auto unknowns = static_cast<Eigen::Index>(n - 1);
  std::vector<double> vm(n, 1.0);
  std::vector<double> va(n, 0.0);

  auto injections = [&](std::vector<double>& p, std::vector<double>& q) {
    p.assign(n, 0.0);
    q.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto kk = static_cast<Eigen::Index>(k);
        const double a = va[i] - va[k];
        p[i] += vm[i] * vm[k] * (g(ii, kk) * std::cos(a) + bm(ii, kk) * std::sin(a));
        q[i] += vm[i] * vm[k] * (g(ii, kk) * std::sin(a) - bm(ii, kk) * std::cos(a));
      }
  };

  PowerFlowSolution out;
  std::vector<double> p, q;
  for (int iter = 0;; ++iter) {
    injections(p, q);
    Eigen::VectorXd residual(2 * unknowns);
    for (std::size_t i = 1; i < n; ++i) {
      residual(static_cast<Eigen::Index>(i - 1)) = -inj.p[i] - p[i];
      residual(unknowns + static_cast<Eigen::Index>(i - 1)) = -inj.q[i] - q[i];
    }
    const double worst = residual.cwiseAbs().maxCoeff();
    if (!std::isfinite(worst)) {
      out.iterations = iter;
      break;
    }
    if (worst <= tolerance) {
      out.converged = true;
      out.iterations = iter;
      break;
    }
    if (iter == max_iterations) {
      out.iterations = iter;
      break;
    }

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * unknowns, 2 * unknowns);
    for (std::size_t i = 1; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i - 1);
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t k = 1; k < n; ++k) {
        const auto c = static_cast<Eigen::Index>(k - 1);
        const auto kk = static_cast<Eigen::Index>(k);
        if (i == k) {
          jac(r, c) = -q[i] - bm(ii, ii) * vm[i] * vm[i];
          jac(r, unknowns + c) = p[i] / vm[i] + g(ii, ii) * vm[i];
          jac(unknowns + r, c) = p[i] - g(ii, ii) * vm[i] * vm[i];
          jac(unknowns + r, unknowns + c) = q[i] / vm[i] - bm(ii, ii) * vm[i];
        } else {
          const double a = va[i] - va[k];
          const double s = std::sin(a);
          const double co = std::cos(a);
          jac(r, c) = vm[i] * vm[k] * (g(ii, kk) * s - bm(ii, kk) * co);
          jac(r, unknowns + c) = vm[i] * (g(ii, kk) * co + bm(ii, kk) * s);
          jac(unknowns + r, c) = -vm[i] * vm[k] * (g(ii, kk) * co + bm(ii, kk) * s);
          jac(unknowns + r, unknowns + c) = vm[i] * (g(ii, kk) * s - bm(ii, kk) * co);
        }
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      out.iterations = iter;
      break;
    }
    const Eigen::VectorXd step = lu.solve(residual);
    for (std::size_t i = 1; i < n; ++i) {
      va[i] += step(static_cast<Eigen::Index>(i - 1));
      vm[i] += step(unknowns + static_cast<Eigen::Index>(i - 1));
    }
  }

  std::vector<cd> voltage(n);
  for (std::size_t i = 0; i < n; ++i) voltage[i] = std::polar(vm[i], va[i]);
  fill_solution(net, inj, voltage, out);
  return out;
}

double total_power_loss(const PowerFlowSolution& solution) {
  if (!solution.converged) throw std::invalid_argument("total_power_loss needs a converged solution");
  double total = 0.0;
  for (double l : solution.branch_loss) total += l;
  return total;
}

bool is_crash(const PowerFlowSolution& solution, CrashBounds bounds) {
  if (!solution.converged) return true;
  return std::any_of(solution.v.begin(), solution.v.end(),
                     [&](double v) { return !(v >= bounds.v_min && v <= bounds.v_max); });
}

Injection random_injection(const PowerNetwork& network, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto inj = Injection::zeros(network.n_bus());
  for (std::size_t i = 1; i < network.n_bus(); ++i) {
    inj.p[i] = scale * u(rng);
    inj.q[i] = 0.5 * scale * u(rng);
  }
  return inj;
}

SolverComparison compare_solvers(const PowerNetwork& network, std::size_t samples, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  SolverComparison out;
  out.samples = samples;
  for (std::size_t k = 0; k < samples; ++k) {
    const auto inj = random_injection(network, rng, scale);
    const auto a = solve_sweep(network, inj);
    const auto b = solve_newton_oracle(network, inj);
    if (!a.converged || !b.converged) {
      ++out.failures;
      continue;
    }
    for (std::size_t i = 0; i < network.n_bus(); ++i) {
      out.max_voltage_gap = std::max(out.max_voltage_gap, std::abs(a.v[i] - b.v[i]));
      out.max_voltage_gap = std::max(out.max_voltage_gap, std::abs(a.theta[i] - b.theta[i]));
    }
    const double demand = std::accumulate(inj.p.begin() + 1, inj.p.end(), 0.0);
    for (const auto* s : {&a, &b}) {
      out.max_balance_residual = std::max(out.max_balance_residual, std::abs(s->slack_p - demand - total_power_loss(*s)));
      out.max_balance_residual = std::max(out.max_balance_residual, s->max_mismatch);
    }
  }
  return out;
}

}  // namespace gridflow
