#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/nets.hpp"

namespace gridflow::eval {

/// 100 * share of (step, non-slack bus) pairs inside [lower, upper].
/// voltages[t] holds every bus of step t with the slack at index 0.
double controllable_rate(const std::vector<std::vector<double>>& voltages, double lower = 0.95, double upper = 1.05);

/// Mean over steps of (1/n) sum_i |q_i|.
double q_loss(const std::vector<std::vector<double>>& q_pv);

struct Scenario {
  std::string id;
  double factor = 1.5;  // midday PV / load
  std::uint64_t profile_seed = 0;
  std::size_t start = 0;
  std::size_t length = kEvalEpisodeLength;
  bool validation = false;
};

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  ScenarioSet validation() const;
};

inline const std::vector<double> kScenarioFactors{0.8, 1.2, 1.5, 2.0};

/// 12 full-day scenarios from midnight, three per PV factor; the first of each factor is a validation scenario.
ScenarioSet default_scenarios(std::uint64_t base_seed = 1000);

struct EpisodeMetrics {
  double cr = 0.0;
  double ql = 0.0;
  double pl = 0.0;
  bool crashed = false;
  std::size_t steps = 0;
};

struct Report {
  std::vector<Scenario> scenarios;
  std::vector<EpisodeMetrics> metrics;
  EpisodeMetrics mean;  // crashed if any scenario crashed
};

/// Maps observations and recurrent state to actions; state is owned by the controller.
struct Controller {
  std::function<void()> reset;
  std::function<std::vector<double>(const std::vector<Observation>&)> act;
};

Controller policy_controller(const nets::Policy& policy);
/// Uniform actions in [-1, 1]; each scenario restarts the stream from seed.
Controller random_controller(std::uint64_t seed, std::size_t n_agents);

/// Runs one scenario. Crashed episodes report metrics over the completed steps.
EpisodeMetrics run_scenario(std::shared_ptr<const PowerNetwork> network, const Scenario& scenario,
                            const EnvConfig& config, Controller& controller);

Report run_controller(std::shared_ptr<const PowerNetwork> network, const ScenarioSet& set, const EnvConfig& config,
                      Controller& controller);
Report run_policy(std::shared_ptr<const PowerNetwork> network, const nets::Policy& policy, const ScenarioSet& set,
                  const EnvConfig& config);
Report run_random(std::shared_ptr<const PowerNetwork> network, const ScenarioSet& set, const EnvConfig& config,
                  std::uint64_t seed);

/// `scenario_id,factor,cr,ql,pl,crashed`, one row per scenario, then a `mean` row.
void write_report_csv(const Report& report, std::ostream& out);

}  // namespace gridflow::eval
