#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/powerflow.hpp"

namespace gridflow {

/// Raised when a scenario cannot be simulated (bad start step, crash at reset,
/// profile ids missing for the network).
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Barrier { L1, L2, Bowl };

Barrier parse_barrier(const std::string& name);
std::string to_string(Barrier kind);

/// Voltage barrier l_v. Zero at v = 1, symmetric about 1.
double barrier(double v, Barrier kind);

/// Per-node feature layout: p_load, q_load, v, theta, flag_pv, p_pv, q_pv.
inline constexpr std::size_t kFeatureWidth = 7;
using NodeFeature = std::array<double, kFeatureWidth>;

namespace feature {
inline constexpr std::size_t kPLoad = 0;
inline constexpr std::size_t kQLoad = 1;
inline constexpr std::size_t kVoltage = 2;
inline constexpr std::size_t kAngle = 3;
inline constexpr std::size_t kFlagPv = 4;
inline constexpr std::size_t kPPv = 5;
inline constexpr std::size_t kQPv = 6;
}  // namespace feature

struct Observation {
  std::vector<NodeFeature> features;  // zone order
  BinaryMatrix adjacency;
  std::size_t own_index = 0;
  std::size_t agent_id = 0;

  std::size_t size() const { return features.size(); }
  bool operator==(const Observation&) const = default;
};

/// Fraction of zone nodes outside [0.95, 1.05]; the auxiliary-task target.
double aux_label(const Observation& obs);

struct EnvConfig {
  Barrier barrier = Barrier::L2;
  double alpha = 0.01;
  double action_bound = 0.6;  // c
  double v_ref = 1.0;
  double v_lower = 0.95;
  double v_upper = 1.05;
  std::size_t episode_length = 240;
  double crash_penalty = -200.0;
  CrashBounds crash;

  /// Throws ValidationError on violated invariants.
  void validate() const;
};

inline constexpr std::size_t kTrainEpisodeLength = 240;
inline constexpr std::size_t kEvalEpisodeLength = 480;
inline constexpr std::size_t kStepsPerDay = 480;

/// Eq. 1 reward for one solved state.
double reward(const PowerFlowSolution& solution, std::span<const double> q_pv, const EnvConfig& config);

/// Load and PV time series at a 3-minute resolution.
struct Profile {
  double step_minutes = 3.0;
  std::map<std::string, std::vector<std::array<double, 2>>> loads;  // id -> [(p, q)]
  std::map<std::string, std::vector<double>> pvs;                   // id -> [p]

  /// Shortest series length over all entries.
  std::size_t length() const;
  bool operator==(const Profile&) const = default;
};

struct ProfileOptions {
  double pv_to_load = 1.5;      // midday aggregate PV / aggregate load
  double peak_load = 0.06;      // nominal per-load active peak, p.u.
  double power_factor = 0.95;   // load power factor
  double load_noise = 0.05;     // relative std of multiplicative load noise
};

/// Synthetic daily profiles; deterministic in seed. Length n_days * 480 + 1 so
/// that a full-day episode starting at midnight has its closing sample.
Profile generate_profiles(const PowerNetwork& network, std::uint64_t seed, std::size_t n_days,
                          const ProfileOptions& options = {});

Profile load_profile(const std::filesystem::path& path);
void save_profile(const Profile& profile, const std::filesystem::path& path);

struct StepInfo {
  double cr = 0.0;  // % of non-slack buses inside the safe band
  double ql = 0.0;  // (1/n) sum |q_pv|
  double pl = 0.0;  // total active loss
  bool crashed = false;
};

/// Complete mutable state of an environment; compared bit-for-bit in tests.
struct EnvState {
  std::size_t time = 0;
  std::size_t steps = 0;
  std::vector<double> q_pv;
  PowerFlowSolution solution;
  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  std::vector<Observation> observations;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Dec-POMDP voltage-control environment. One agent per PV inverter.
class VoltageControlEnv {
 public:
  VoltageControlEnv(std::shared_ptr<const PowerNetwork> network, std::shared_ptr<const Profile> profile,
                    EnvConfig config);

  /// Solves the start state with zero reactive output. Recurrent states held by
  /// callers must be reset alongside.
  std::vector<Observation> reset(std::size_t start_step);

  /// Actions are pre-scaling values; each is clipped to [-1, 1] and mapped to
  /// q = a * c * q_max with q_max from the inverter capability circle.
  StepResult step(std::span<const double> actions);

  std::vector<Observation> observations() const;
  const EnvState& state() const { return state_; }
  bool done() const { return done_; }
  const PowerNetwork& network() const { return *network_; }
  const Profile& profile() const { return *profile_; }
  const EnvConfig& config() const { return config_; }
  std::size_t n_agents() const { return network_->n_agents(); }

  /// Reactive capability sqrt(s_max^2 - p_pv^2) of every agent at a time index.
  std::vector<double> q_capability(std::size_t time) const;
  /// Active PV output per agent at a time index.
  std::vector<double> pv_output(std::size_t time) const;
  /// Net consumption per bus for a time index and reactive outputs.
  Injection injection(std::size_t time, std::span<const double> q_pv) const;

 private:
  std::shared_ptr<const PowerNetwork> network_;
  std::shared_ptr<const Profile> profile_;
  EnvConfig config_;
  std::vector<const std::vector<std::array<double, 2>>*> load_series_;
  std::vector<const std::vector<double>*> pv_series_;
  std::size_t start_ = 0;
  EnvState state_;
  bool done_ = true;
};

/// Instantaneous controllable rate (% of non-slack buses within [lower, upper]).
double instant_controllable_rate(const PowerFlowSolution& solution, double lower = 0.95, double upper = 1.05);

}  // namespace gridflow
