#include "gridflow/eval.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace gridflow::eval {

double controllable_rate(const std::vector<std::vector<double>>& voltages, double lower, double upper) {
  std::size_t inside = 0, total = 0;
  for (const auto& step : voltages)
    for (std::size_t i = 1; i < step.size(); ++i) {
      ++total;
      if (step[i] >= lower && step[i] <= upper) ++inside;
    }
  if (total == 0) throw std::invalid_argument("controllable_rate: empty episode");
  return 100.0 * static_cast<double>(inside) / static_cast<double>(total);
}

double q_loss(const std::vector<std::vector<double>>& q_pv) {
  if (q_pv.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& step : q_pv) {
    double s = 0.0;
    for (double q : step) s += std::abs(q);
    if (!step.empty()) sum += s / static_cast<double>(step.size());
  }
  return sum / static_cast<double>(q_pv.size());
}

ScenarioSet ScenarioSet::validation() const {
  ScenarioSet out;
  for (const auto& s : scenarios)
    if (s.validation) out.scenarios.push_back(s);
  return out;
}

ScenarioSet default_scenarios(std::uint64_t base_seed) {
  ScenarioSet set;
  for (std::size_t f = 0; f < kScenarioFactors.size(); ++f)
    for (std::size_t k = 0; k < 3; ++k) {
      Scenario s;
      s.factor = kScenarioFactors[f];
      s.profile_seed = base_seed + 10 * f + k;
      s.id = "f" + std::to_string(f) + "-" + std::to_string(k);
      s.validation = k == 0;
      set.scenarios.push_back(s);
    }
  return set;
}

Controller policy_controller(const nets::Policy& policy) {
  auto hidden = std::make_shared<std::vector<std::vector<double>>>();
  Controller c;
  c.reset = [hidden, &policy] {
    hidden->assign(policy.config().n_agents, std::vector<double>(policy.config().gru_width, 0.0));
  };
  c.act = [hidden, &policy](const std::vector<Observation>& obs) {
    auto step = nets::act(policy, obs, *hidden);
    *hidden = std::move(step.hidden);
    return step.actions;
  };
  return c;
}

Controller random_controller(std::uint64_t seed, std::size_t n_agents) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  Controller c;
  c.reset = [rng, seed] { rng->seed(seed); };
  c.act = [rng, n_agents](const std::vector<Observation>&) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> a(n_agents);
    for (auto& x : a) x = u(*rng);
    return a;
  };
  return c;
}

EpisodeMetrics run_scenario(std::shared_ptr<const PowerNetwork> network, const Scenario& scenario,
                            const EnvConfig& config, Controller& controller) {
  ProfileOptions options;
  options.pv_to_load = scenario.factor;
  const auto n_days = (scenario.start + scenario.length) / kStepsPerDay + 1;
  auto profile = std::make_shared<const Profile>(generate_profiles(*network, scenario.profile_seed, n_days, options));
  EnvConfig cfg = config;
  cfg.episode_length = scenario.length;
  VoltageControlEnv env(network, profile, cfg);

  auto obs = env.reset(scenario.start);
  controller.reset();
  std::vector<std::vector<double>> voltages, q;
  double pl = 0.0;
  EpisodeMetrics m;
  while (!env.done()) {
    const auto result = env.step(controller.act(obs));
    if (result.info.crashed) {
      m.crashed = true;
      break;
    }
    voltages.push_back(env.state().solution.v);
    q.push_back(env.state().q_pv);
    pl += result.info.pl;
    obs = result.observations;
  }
  m.steps = voltages.size();
  if (m.steps == 0) return m;
  m.cr = controllable_rate(voltages, cfg.v_lower, cfg.v_upper);
  m.ql = q_loss(q);
  m.pl = pl / static_cast<double>(m.steps);
  return m;
}

Report run_controller(std::shared_ptr<const PowerNetwork> network, const ScenarioSet& set, const EnvConfig& config,
                      Controller& controller) {
  Report report;
  for (const auto& s : set.scenarios) {
    report.scenarios.push_back(s);
    report.metrics.push_back(run_scenario(network, s, config, controller));
  }
  if (report.metrics.empty()) return report;
  for (const auto& m : report.metrics) {
    report.mean.cr += m.cr;
    report.mean.ql += m.ql;
    report.mean.pl += m.pl;
    report.mean.crashed = report.mean.crashed || m.crashed;
    report.mean.steps += m.steps;
  }
  const auto n = static_cast<double>(report.metrics.size());
  report.mean.cr /= n;
  report.mean.ql /= n;
  report.mean.pl /= n;
  return report;
}

Report run_policy(std::shared_ptr<const PowerNetwork> network, const nets::Policy& policy, const ScenarioSet& set,
                  const EnvConfig& config) {
  auto controller = policy_controller(policy);
  return run_controller(std::move(network), set, config, controller);
}

Report run_random(std::shared_ptr<const PowerNetwork> network, const ScenarioSet& set, const EnvConfig& config,
                  std::uint64_t seed) {
  auto controller = random_controller(seed, network->n_agents());
  return run_controller(std::move(network), set, config, controller);
}

void write_report_csv(const Report& report, std::ostream& out) {
  out << "scenario_id,factor,cr,ql,pl,crashed\n";
  out.precision(10);
  for (std::size_t k = 0; k < report.metrics.size(); ++k) {
    const auto& m = report.metrics[k];
    out << report.scenarios[k].id << ',' << report.scenarios[k].factor << ',' << m.cr << ',' << m.ql << ',' << m.pl
        << ',' << (m.crashed ? 1 : 0) << '\n';
  }
  out << "mean,," << report.mean.cr << ',' << report.mean.ql << ',' << report.mean.pl << ','
      << (report.mean.crashed ? 1 : 0) << '\n';
}

}  // namespace gridflow::eval
