#include "gridflow/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace gridflow {

Barrier parse_barrier(const std::string& name) {
  if (name == "l1" || name == "L1") return Barrier::L1;
  if (name == "l2" || name == "L2") return Barrier::L2;
  if (name == "bowl" || name == "Bowl") return Barrier::Bowl;
  throw ValidationError("unknown barrier '" + name + "' (expected l1, l2 or bowl)");
}

std::string to_string(Barrier kind) {
  switch (kind) {
    case Barrier::L1: return "l1";
    case Barrier::L2: return "l2";
    case Barrier::Bowl: return "bowl";
  }
  return "?";
}

double barrier(double v, Barrier kind) {
  const double d = std::abs(v - 1.0);
  switch (kind) {
    case Barrier::L1: return d;
    case Barrier::L2: return d * d;
    case Barrier::Bowl:
      // quadratic inside the safe band, linear outside; value and slope match at 0.05
      return d <= 0.05 ? d * d : 0.1 * d - 0.0025;
  }
  return 0.0;
}

double aux_label(const Observation& obs) {
  if (obs.features.empty()) return 0.0;
  double count = 0.0;
  for (const auto& f : obs.features) {
    const double v = f[feature::kVoltage];
    count += (v < 0.95 ? 1.0 : 0.0) + (v > 1.05 ? 1.0 : 0.0);
  }
  return count / static_cast<double>(obs.features.size());
}

void EnvConfig::validate() const {
  if (!(action_bound > 0.0)) throw ValidationError("action bound c must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (episode_length != kTrainEpisodeLength && episode_length != kEvalEpisodeLength)
    throw ValidationError("episode length must be 240 (train) or 480 (eval)");
  if (!(v_lower < v_ref && v_ref < v_upper)) throw ValidationError("safe band must contain v_ref");
}

double reward(const PowerFlowSolution& solution, std::span<const double> q_pv, const EnvConfig& config) {
  double voltage_term = 0.0;
  for (double v : solution.v) voltage_term += barrier(v / config.v_ref, config.barrier);
  voltage_term /= static_cast<double>(solution.v.size());
  double q_term = 0.0;
  for (double q : q_pv) q_term += std::abs(q);
  if (!q_pv.empty()) q_term /= static_cast<double>(q_pv.size());
  return -voltage_term - config.alpha * q_term;
}

double instant_controllable_rate(const PowerFlowSolution& solution, double lower, double upper) {
  if (solution.v.size() < 2) return 100.0;
  std::size_t inside = 0;
  for (std::size_t i = 1; i < solution.v.size(); ++i)
    if (solution.v[i] >= lower && solution.v[i] <= upper) ++inside;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(solution.v.size() - 1);
}

// ---------------------------------------------------------------------------
// Profiles

std::size_t Profile::length() const {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& [id, s] : loads) n = std::min(n, s.size());
  for (const auto& [id, s] : pvs) n = std::min(n, s.size());
  return n == std::numeric_limits<std::size_t>::max() ? 0 : n;
}

namespace {

double hour_of(std::size_t step) {
  return static_cast<double>(step % kStepsPerDay) * 24.0 / static_cast<double>(kStepsPerDay);
}

// Morning and evening peaks over a base level.
double load_shape(double hour) {
  auto bump = [](double h, double centre, double width) {
    // wrap around midnight so the evening peak is continuous
    double d = std::abs(h - centre);
    d = std::min(d, 24.0 - d);
    return std::exp(-d * d / (2.0 * width * width));
  };
  return 0.5 + 0.25 * bump(hour, 8.0, 1.5) + 0.35 * bump(hour, 19.0, 2.0);
}

double pv_shape(double hour) {
  if (hour < 6.0 || hour >= 18.0) return 0.0;
  return std::sin(std::numbers::pi * (hour - 6.0) / 12.0);
}

}  // namespace

Profile generate_profiles(const PowerNetwork& network, std::uint64_t seed, std::size_t n_days,
                          const ProfileOptions& options) {
  if (n_days < 1) throw std::invalid_argument("n_days must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale_dist(0.8, 1.2);
  std::uniform_real_distribution<double> cloud_dist(0.85, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t length = n_days * kStepsPerDay + 1;
  const double q_ratio = std::tan(std::acos(options.power_factor));

  Profile profile;
  std::map<std::string, double> load_scale;
  for (const auto& l : network.loads())
    if (!load_scale.contains(l.profile_id)) load_scale[l.profile_id] = scale_dist(rng) * options.peak_load;

  // Aggregate load at noon, counted per load site (shared ids count per site).
  double noon_load = 0.0;
  for (const auto& l : network.loads()) noon_load += load_scale[l.profile_id] * load_shape(12.0);
  double total_rating = 0.0;
  for (const auto& pv : network.pvs()) total_rating += pv.s_max;
  const double pv_peak_total = options.pv_to_load * noon_load;

  for (const auto& [id, scale] : load_scale) {
    auto& series = profile.loads[id];
    series.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
      const double p = std::max(0.0, scale * load_shape(hour_of(t)) * (1.0 + options.load_noise * noise(rng)));
      series[t] = {p, p * q_ratio};
    }
  }

  std::vector<double> cloud(n_days + 1);
  for (auto& c : cloud) c = cloud_dist(rng);

  std::map<std::string, double> pv_peak;
  for (const auto& pv : network.pvs()) pv_peak[pv.profile_id] += pv_peak_total * pv.s_max / total_rating;
  for (const auto& [id, peak] : pv_peak) {
    auto& series = profile.pvs[id];
    series.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
      const double shape = pv_shape(hour_of(t));
      const double jitter = 1.0 + 0.02 * noise(rng);
      series[t] = shape > 0.0 ? std::max(0.0, peak * cloud[t / kStepsPerDay] * shape * jitter) : 0.0;
    }
  }
  return profile;
}

Profile load_profile(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open profile file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("profile file: ") + e.what());
  }
  Profile profile;
  try {
    profile.step_minutes = doc.at("step_minutes").get<double>();
    for (const auto& [id, rows] : doc.at("loads").items()) {
      auto& series = profile.loads[id];
      for (const auto& row : rows) series.push_back({row.at(0).get<double>(), row.at(1).get<double>()});
    }
    for (const auto& [id, rows] : doc.at("pvs").items()) profile.pvs[id] = rows.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("profile file: ") + e.what());
  }
  return profile;
}

void save_profile(const Profile& profile, const std::filesystem::path& path) {
  using nlohmann::json;
  json doc;
  doc["step_minutes"] = profile.step_minutes;
  doc["loads"] = json::object();
  for (const auto& [id, series] : profile.loads) {
    auto& rows = doc["loads"][id] = json::array();
    for (const auto& pq : series) rows.push_back({pq[0], pq[1]});
  }
  doc["pvs"] = json::object();
  for (const auto& [id, series] : profile.pvs) doc["pvs"][id] = series;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write profile file " + path.string());
  out << doc.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Environment

VoltageControlEnv::VoltageControlEnv(std::shared_ptr<const PowerNetwork> network,
                                     std::shared_ptr<const Profile> profile, EnvConfig config)
    : network_(std::move(network)), profile_(std::move(profile)), config_(config) {
  config_.validate();
  for (const auto& l : network_->loads()) {
    auto it = profile_->loads.find(l.profile_id);
    if (it == profile_->loads.end()) throw ScenarioError("profile has no load series '" + l.profile_id + "'");
    load_series_.push_back(&it->second);
  }
  for (const auto& pv : network_->pvs()) {
    auto it = profile_->pvs.find(pv.profile_id);
    if (it == profile_->pvs.end()) throw ScenarioError("profile has no PV series '" + pv.profile_id + "'");
    pv_series_.push_back(&it->second);
  }
}

std::vector<double> VoltageControlEnv::pv_output(std::size_t time) const {
  std::vector<double> p(pv_series_.size());
  for (std::size_t a = 0; a < p.size(); ++a) p[a] = (*pv_series_[a])[time];
  return p;
}

std::vector<double> VoltageControlEnv::q_capability(std::size_t time) const {
  std::vector<double> q(pv_series_.size());
  for (std::size_t a = 0; a < q.size(); ++a) {
    const double s = network_->pvs()[a].s_max;
    const double p = (*pv_series_[a])[time];
    q[a] = std::sqrt(std::max(0.0, s * s - p * p));
  }
  return q;
}

Injection VoltageControlEnv::injection(std::size_t time, std::span<const double> q_pv) const {
  auto inj = Injection::zeros(network_->n_bus());
  for (std::size_t k = 0; k < load_series_.size(); ++k) {
    const auto bus = network_->loads()[k].bus;
    inj.p[bus] += (*load_series_[k])[time][0];
    inj.q[bus] += (*load_series_[k])[time][1];
  }
  for (std::size_t a = 0; a < pv_series_.size(); ++a) {
    const auto bus = network_->pvs()[a].bus;
    inj.p[bus] -= (*pv_series_[a])[time];
    inj.q[bus] -= q_pv[a];
  }
  return inj;
}

std::vector<Observation> VoltageControlEnv::reset(std::size_t start_step) {
  const auto len = profile_->length();
  if (start_step + config_.episode_length >= len)
    throw ScenarioError("start step " + std::to_string(start_step) + " + episode length exceeds profile length " +
                        std::to_string(len));
  start_ = start_step;
  EnvState next;
  next.time = start_step;
  next.steps = 0;
  next.q_pv.assign(n_agents(), 0.0);
  next.solution = solve_sweep(*network_, injection(start_step, next.q_pv));
  if (is_crash(next.solution, config_.crash))
    throw ScenarioError("power flow fails at the initial state of step " + std::to_string(start_step));
  state_ = std::move(next);
  done_ = false;
  return observations();
}

StepResult VoltageControlEnv::step(std::span<const double> actions) {
  if (actions.size() != n_agents())
    throw std::invalid_argument("expected " + std::to_string(n_agents()) + " actions, got " +
                                std::to_string(actions.size()));
  if (done_) throw std::logic_error("step called on a finished episode; call reset first");

  const std::size_t next_time = state_.time + 1;
  const auto q_max = q_capability(next_time);
  std::vector<double> q_pv(n_agents());
  for (std::size_t a = 0; a < n_agents(); ++a)
    q_pv[a] = std::clamp(actions[a], -1.0, 1.0) * config_.action_bound * q_max[a];

  auto solution = solve_sweep(*network_, injection(next_time, q_pv));
  StepResult result;
  if (is_crash(solution, config_.crash)) {
    // backtrack to the pre-step state and end the episode
    result.observations = observations();
    result.reward = config_.crash_penalty;
    result.done = true;
    result.info.crashed = true;
    done_ = true;
    return result;
  }

  state_.time = next_time;
  state_.steps += 1;
  state_.q_pv = std::move(q_pv);
  state_.solution = std::move(solution);
  done_ = state_.steps >= config_.episode_length;

  result.observations = observations();
  result.reward = reward(state_.solution, state_.q_pv, config_);
  result.done = done_;
  result.info.cr = instant_controllable_rate(state_.solution, config_.v_lower, config_.v_upper);
  double ql = 0.0;
  for (double q : state_.q_pv) ql += std::abs(q);
  result.info.ql = ql / static_cast<double>(n_agents());
  result.info.pl = total_power_loss(state_.solution);
  return result;
}

std::vector<Observation> VoltageControlEnv::observations() const {
  const auto& net = *network_;
  const auto inj_time = state_.time;
  std::vector<double> p_load(net.n_bus(), 0.0), q_load(net.n_bus(), 0.0);
  for (std::size_t k = 0; k < load_series_.size(); ++k) {
    p_load[net.loads()[k].bus] += (*load_series_[k])[inj_time][0];
    q_load[net.loads()[k].bus] += (*load_series_[k])[inj_time][1];
  }
  const auto p_pv = pv_output(inj_time);

  std::vector<Observation> out(n_agents());
  for (std::size_t a = 0; a < n_agents(); ++a) {
    const auto& zone = net.zones()[net.agent_zone(a)];
    auto& obs = out[a];
    obs.agent_id = a;
    obs.own_index = net.agent_local_index(a);
    obs.adjacency = zone.adjacency;
    obs.features.reserve(zone.node_ids.size());
    for (auto bus : zone.node_ids) {
      NodeFeature f{};
      f[feature::kPLoad] = p_load[bus];
      f[feature::kQLoad] = q_load[bus];
      f[feature::kVoltage] = state_.solution.v[bus];
      f[feature::kAngle] = state_.solution.theta[bus];
      const auto agent = net.pv_agent_at(bus);
      if (agent != PowerNetwork::npos) {
        f[feature::kFlagPv] = 1.0;
        f[feature::kPPv] = p_pv[agent];
        f[feature::kQPv] = state_.q_pv[agent];
      }
      obs.features.push_back(f);
    }
  }
  return out;
}

}  // namespace gridflow
