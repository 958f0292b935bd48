#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gridflow/env.hpp"

using namespace gridflow;

namespace {

const std::string kDataDir = GRIDFLOW_DATA_DIR;

std::shared_ptr<const PowerNetwork> feeder(const std::string& name) {
  return std::make_shared<const PowerNetwork>(load_network(kDataDir + "/" + name));
}

// Flat 2-bus profile with a chosen load at one step.
std::shared_ptr<const Profile> flat_profile(std::size_t length, double load, double pv, std::size_t spike_at = 0,
                                            double spike = 0.0) {
  Profile p;
  p.loads["load1"].assign(length, {load, 0.3 * load});
  p.pvs["pv1"].assign(length, pv);
  if (spike_at) p.loads["load1"][spike_at] = {spike, spike};
  return std::make_shared<const Profile>(std::move(p));
}

PowerFlowSolution with_voltages(std::vector<double> v) {
  PowerFlowSolution s;
  s.converged = true;
  s.theta.assign(v.size(), 0.0);
  s.v = std::move(v);
  return s;
}

}  // namespace

TEST_CASE("barrier: hand values") {
  CHECK(barrier(1.02, Barrier::L1) == doctest::Approx(0.02));
  CHECK(barrier(1.02, Barrier::L2) == doctest::Approx(0.0004));
  CHECK(barrier(0.97, Barrier::Bowl) == doctest::Approx(0.0009));
  CHECK(barrier(1.1, Barrier::Bowl) == doctest::Approx(0.0075));
  CHECK(barrier(0.9, Barrier::Bowl) == doctest::Approx(0.0075));
}

TEST_CASE("barrier: zero at nominal and symmetric") {
  for (auto kind : {Barrier::L1, Barrier::L2, Barrier::Bowl}) {
    CHECK(barrier(1.0, kind) == 0.0);
    for (double d : {0.001, 0.03, 0.05, 0.07, 0.2, 0.45})
      CHECK(barrier(1.0 + d, kind) == doctest::Approx(barrier(1.0 - d, kind)).epsilon(1e-12));
  }
}

TEST_CASE("barrier: bowl is continuously differentiable at the knee") {
  const double h = 1e-7;
  for (double knee : {1.05, 0.95}) {
    const double left = (barrier(knee, Barrier::Bowl) - barrier(knee - h, Barrier::Bowl)) / h;
    const double right = (barrier(knee + h, Barrier::Bowl) - barrier(knee, Barrier::Bowl)) / h;
    CHECK(std::abs(left - right) < 1e-6);
    CHECK(std::abs(barrier(knee + 1e-12, Barrier::Bowl) - barrier(knee - 1e-12, Barrier::Bowl)) < 1e-12);
  }
}

TEST_CASE("barrier: names") {
  CHECK(parse_barrier("bowl") == Barrier::Bowl);
  CHECK(parse_barrier("L2") == Barrier::L2);
  CHECK(to_string(Barrier::L1) == "l1");
  CHECK_THROWS_AS(parse_barrier("l3"), ValidationError);
}

TEST_CASE("reward: hand-computed cases") {
  EnvConfig cfg;
  // slack counts toward the voltage average
  const auto sol = with_voltages({1.0, 1.02, 0.9});
  const std::vector<double> q{0.1, -0.3};
  CHECK(reward(sol, q, cfg) == doctest::Approx(-(0.0004 + 0.01) / 3.0 - 0.01 * 0.2).epsilon(1e-12));

  cfg.barrier = Barrier::L1;
  cfg.alpha = 0.1;
  CHECK(reward(sol, q, cfg) == doctest::Approx(-(0.02 + 0.1) / 3.0 - 0.1 * 0.2).epsilon(1e-12));

  cfg.barrier = Barrier::Bowl;
  const auto flat = with_voltages({1.0, 1.0});
  CHECK(reward(flat, std::vector<double>{0.0}, cfg) == 0.0);
}

TEST_CASE("aux_label: fraction of zone nodes out of band") {
  Observation o;
  for (double v : {0.94, 1.0, 1.06, 1.05}) {
    NodeFeature f{};
    f[feature::kVoltage] = v;
    o.features.push_back(f);
  }
  CHECK(aux_label(o) == doctest::Approx(0.5));
  o.features.resize(1);
  CHECK(aux_label(o) == doctest::Approx(1.0));
  o.features[0][feature::kVoltage] = 0.95;
  CHECK(aux_label(o) == 0.0);
}

TEST_CASE("controllable rate ignores the slack bus") {
  CHECK(instant_controllable_rate(with_voltages({1.0, 0.96, 1.07, 1.0, 0.94})) == doctest::Approx(50.0));
  CHECK(instant_controllable_rate(with_voltages({0.5, 1.0})) == doctest::Approx(100.0));
}

TEST_CASE("config validation") {
  EnvConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.episode_length = 100;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.action_bound = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("profiles: deterministic, non-negative, PV dark at night") {
  const auto net = feeder("feeder14.json");
  const auto a = generate_profiles(*net, 11, 2);
  const auto b = generate_profiles(*net, 11, 2);
  const auto c = generate_profiles(*net, 12, 2);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.length() == 2 * kStepsPerDay + 1);
  for (const auto& [id, s] : a.loads)
    for (const auto& pq : s) {
      CHECK(pq[0] >= 0.0);
      CHECK(pq[1] >= 0.0);
    }
  for (const auto& [id, s] : a.pvs) {
    for (double p : s) CHECK(p >= 0.0);
    CHECK(s[0] == 0.0);                  // midnight
    CHECK(s[100] == 0.0);                // 05:00
    CHECK(s[kStepsPerDay / 2] > 0.0);    // noon
    CHECK(s[kStepsPerDay - 20] == 0.0);  // 23:00
  }
}

TEST_CASE("profiles: midday aggregate PV exceeds aggregate load by the factor") {
  const auto net = feeder("feeder14.json");
  ProfileOptions opt;
  opt.load_noise = 0.0;
  const auto p = generate_profiles(*net, 3, 1, opt);
  const std::size_t noon = kStepsPerDay / 2;
  double load = 0.0, pv = 0.0;
  for (const auto& l : net->loads()) load += p.loads.at(l.profile_id)[noon][0];
  for (const auto& s : net->pvs()) pv += p.pvs.at(s.profile_id)[noon];
  // cloud factor in [0.85, 1] and 2% jitter
  CHECK(pv / load > 1.5 * 0.8);
  CHECK(pv / load < 1.5 * 1.07);
}

TEST_CASE("profiles: default factor drives uncontrolled midday over-voltage") {
  const auto net = feeder("feeder14.json");
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto profile = generate_profiles(*net, seed, 1);
    double highest = 0.0;
    for (std::size_t t = 9 * 20; t <= 15 * 20; ++t) {
      auto inj = Injection::zeros(net->n_bus());
      for (const auto& l : net->loads()) {
        inj.p[l.bus] += profile.loads.at(l.profile_id)[t][0];
        inj.q[l.bus] += profile.loads.at(l.profile_id)[t][1];
      }
      for (const auto& pv : net->pvs()) inj.p[pv.bus] -= profile.pvs.at(pv.profile_id)[t];
      const auto sol = solve_newton_oracle(*net, inj);
      REQUIRE(sol.converged);
      for (double v : sol.v) highest = std::max(highest, v);
    }
    CHECK(highest > 1.05);
  }
}

TEST_CASE("profiles: save and load round trip") {
  const auto net = feeder("feeder14.json");
  const auto p = generate_profiles(*net, 4, 1);
  const auto path = std::filesystem::temp_directory_path() / "gridflow_profile_roundtrip.json";
  save_profile(p, path);
  const auto q = load_profile(path);
  std::filesystem::remove(path);
  CHECK(q.length() == p.length());
  for (const auto& [id, s] : p.pvs)
    for (std::size_t t = 0; t < s.size(); ++t) CHECK(q.pvs.at(id)[t] == s[t]);
  CHECK_THROWS_AS(load_profile("/nonexistent/profile.json"), ParseError);
}

TEST_CASE("env: observations mirror the zone layout") {
  const auto net = feeder("feeder14.json");
  const auto profile = std::make_shared<const Profile>(generate_profiles(*net, 1, 1));
  VoltageControlEnv env(net, profile, {});
  const auto obs = env.reset(200);
  REQUIRE(obs.size() == 3);
  for (std::size_t a = 0; a < obs.size(); ++a) {
    const auto& zone = net->zones()[net->agent_zone(a)];
    CHECK(obs[a].agent_id == a);
    CHECK(obs[a].size() == zone.node_ids.size());
    CHECK(obs[a].adjacency == zone.adjacency);
    const auto& own = obs[a].features[obs[a].own_index];
    CHECK(own[feature::kFlagPv] == 1.0);
    CHECK(own[feature::kPPv] == doctest::Approx(env.pv_output(200)[a]));
    CHECK(own[feature::kQPv] == 0.0);
    CHECK(own[feature::kVoltage] == env.state().solution.v[zone.node_ids[obs[a].own_index]]);
  }
  // zone 3 hosts two agents sharing one feature matrix
  CHECK(obs[1].features == obs[2].features);
  CHECK(obs[1].own_index != obs[2].own_index);
}

TEST_CASE("env: action mapping and clipping") {
  const auto net = feeder("feeder2.json");
  VoltageControlEnv env(net, flat_profile(500, 0.05, 0.12), {});
  env.reset(0);
  const double q_max = std::sqrt(0.2 * 0.2 - 0.12 * 0.12);
  CHECK(env.q_capability(1)[0] == doctest::Approx(q_max));

  const std::vector<double> half{0.5};
  auto r = env.step(half);
  CHECK(env.state().q_pv[0] == doctest::Approx(0.5 * 0.6 * q_max));
  CHECK(r.info.ql == doctest::Approx(0.5 * 0.6 * q_max));

  const std::vector<double> big{7.0};
  env.step(big);
  CHECK(env.state().q_pv[0] == doctest::Approx(0.6 * q_max));
  const std::vector<double> small{-3.0};
  env.step(small);
  CHECK(env.state().q_pv[0] == doctest::Approx(-0.6 * q_max));

  // PV beyond its rating leaves no reactive headroom
  VoltageControlEnv saturated(net, flat_profile(500, 0.05, 0.3), {});
  saturated.reset(0);
  const std::vector<double> one{1.0};
  saturated.step(one);
  CHECK(saturated.state().q_pv[0] == 0.0);
}

TEST_CASE("env: reward matches the solved state") {
  const auto net = feeder("feeder14.json");
  const auto profile = std::make_shared<const Profile>(generate_profiles(*net, 2, 1));
  EnvConfig cfg;
  VoltageControlEnv env(net, profile, cfg);
  env.reset(220);
  const std::vector<double> a{0.3, -0.7, 0.1};
  const auto r = env.step(a);
  CHECK(r.reward == doctest::Approx(reward(env.state().solution, env.state().q_pv, cfg)));
  CHECK(r.info.pl == doctest::Approx(total_power_loss(env.state().solution)));
  CHECK(env.state().time == 221);
}

TEST_CASE("env: episode length and start-step precondition") {
  const auto net = feeder("feeder2.json");
  const auto profile = flat_profile(kStepsPerDay + 1, 0.05, 0.05);
  VoltageControlEnv env(net, profile, {});
  CHECK_THROWS_AS(env.reset(kStepsPerDay + 1 - 240), ScenarioError);
  env.reset(kStepsPerDay - 240);
  const std::vector<double> a{0.0};
  StepResult r;
  for (std::size_t k = 0; k < 240; ++k) {
    CHECK_FALSE(env.done());
    r = env.step(a);
  }
  CHECK(r.done);
  CHECK(env.state().steps == 240);
  CHECK_THROWS_AS(env.step(a), std::logic_error);
  const std::vector<double> wrong{0.0, 0.0};
  env.reset(0);
  CHECK_THROWS_AS(env.step(wrong), std::invalid_argument);
}

TEST_CASE("env: crash backtracks and terminates") {
  const auto net = feeder("feeder2.json");
  VoltageControlEnv env(net, flat_profile(500, 0.05, 0.05, 3, 80.0), {});
  env.reset(0);
  const std::vector<double> a{0.2};
  env.step(a);
  env.step(a);
  const auto before = env.state();
  const auto obs_before = env.observations();
  const auto r = env.step(a);
  CHECK(r.info.crashed);
  CHECK(r.done);
  CHECK(r.reward == -200.0);
  CHECK(env.state() == before);
  CHECK(r.observations == obs_before);
  CHECK(env.done());
  CHECK_THROWS_AS(env.step(a), std::logic_error);
}

TEST_CASE("env: missing profile ids are reported") {
  const auto net = feeder("feeder14.json");
  Profile p;
  p.pvs["pv6"] = {0.0};
  CHECK_THROWS_AS(VoltageControlEnv(net, std::make_shared<const Profile>(p), {}), ScenarioError);
}
