#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/eval.hpp"
#include "gridflow/nets.hpp"

namespace gridflow::train {

enum class Algorithm { Maddpg, Matd3, TMaddpg, TMatd3 };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm algorithm);
bool is_transformer(Algorithm algorithm);
bool is_td3(Algorithm algorithm);

struct Transition {
  std::vector<Observation> obs;
  std::vector<double> actions;
  double reward = 0.0;  // raw; normalised when sampled
  std::vector<Observation> next_obs;
  bool done = false;
  std::vector<std::vector<double>> hidden;  // per agent, before the step
};

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  /// Uniform with replacement. Throws std::logic_error when empty.
  std::vector<const Transition*> sample(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

/// Welford running mean and population variance.
class RunningStats {
 public:
  void push(double x);
  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double std() const;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// r / max(std, 1e-6); no mean subtraction so the sign is kept.
double normalize_reward(double r, const RunningStats& stats);

/// Adds a step's reward to the statistics unless the step crashed.
void observe_reward(RunningStats& stats, const StepResult& step);

struct ExplorationSchedule {
  double sigma_start = 0.3;
  double sigma_end = 0.05;
  double decay_fraction = 0.5;  // of total training steps
  double sigma(std::size_t step, std::size_t total_steps) const;
};

/// clip(mu + sigma * N(0, 1), -1, 1).
double exploration_action(double mu, double sigma, std::mt19937_64& rng);

/// target <- tau * online + (1 - tau) * target, element by element.
void soft_update(diff::ParameterSet& target, const diff::ParameterSet& online, double tau);

struct TrainConfig {
  Algorithm algorithm = Algorithm::TMaddpg;
  std::size_t episodes = 2000;
  double policy_lr = 1e-4;
  double value_lr = 1e-4;
  double aux_lr = 1e-5;
  std::size_t policy_epochs = 1;
  std::size_t value_epochs = 10;
  std::size_t aux_epochs = 10;
  double tau = 0.1;
  double gamma = 0.99;
  std::size_t buffer_capacity = 5000;
  std::size_t batch_size = 32;
  double grad_clip = 1.0;  // global L1 bound
  ExplorationSchedule exploration;
  // TD3
  double target_noise = 0.2;
  double target_noise_clip = 0.5;
  std::size_t actor_delay = 2;
  // evaluation
  std::size_t eval_interval = 20;
  // training data: days of synthetic profiles per PV factor
  std::size_t train_days = 8;
  std::vector<double> train_factors{0.8, 1.2, 1.5, 2.0};
  // architecture
  std::size_t d_model = 64;
  std::size_t gru_width = 64;
  std::size_t mlp_hidden = 64;
  // ablations
  bool no_aux = false;
  bool no_mask = false;
  bool no_ea = false;
  bool mlp_critic = false;

  /// Throws ValidationError on violated invariants.
  void validate() const;
  bool use_aux() const { return is_transformer(algorithm) && !no_aux; }
};

nets::PolicyConfig policy_config(const TrainConfig& config, const PowerNetwork& network);
nets::CriticConfig critic_config(const TrainConfig& config, const PowerNetwork& network);

/// Tensors for one sampled mini-batch; the policy batch is sample-major, agent-minor.
struct SampledBatch {
  std::size_t size = 0;
  std::size_t agents = 0;
  nets::PolicyBatch policy_obs;
  nets::PolicyBatch policy_next;
  diff::Tensor hidden;  // [B * n, gru_width]
  nets::CriticBatch critic_obs;
  nets::CriticBatch critic_next;
  diff::Tensor actions;  // [B, n]
  std::vector<double> rewards;  // normalised
  std::vector<double> done;
};

SampledBatch make_batch(std::span<const Transition* const> transitions, const RunningStats& stats,
                        const nets::PolicyConfig& policy);

/// Online and target networks with their optimiser state.
class Learner {
 public:
  Learner(const TrainConfig& config, const PowerNetwork& network, std::uint64_t seed);

  nets::Policy& policy() { return *policy_; }
  const nets::Policy& policy() const { return *policy_; }
  nets::Policy& target_policy() { return *target_policy_; }
  nets::Critic& critic(std::size_t k = 0) { return *critics_[k]; }
  const nets::Critic& critic(std::size_t k = 0) const { return *critics_[k]; }
  nets::Critic& target_critic(std::size_t k = 0) { return *target_critics_[k]; }
  std::size_t n_critics() const { return critics_.size(); }
  const TrainConfig& config() const { return config_; }

  /// y = r + gamma * (1 - done) * Q'(s', mu'(o')); TD3 takes the twin minimum under smoothed target actions.
  std::vector<double> targets(const SampledBatch& batch, std::mt19937_64& rng) const;
  /// Value epochs of squared-error descent towards fixed targets. Returns the last epoch's loss.
  double critic_update(const SampledBatch& batch, std::mt19937_64& rng);
  /// Aux epochs of MSE between the VR head and the zone labels. Returns the last epoch's loss.
  double aux_update(const SampledBatch& batch);
  /// Policy epochs of ascent on Q(s, mu(o)). Returns the mean Q before the last step.
  double actor_update(const SampledBatch& batch);
  void update_targets();

  /// One round: critic, then aux (if enabled), then actor (every actor_delay rounds under TD3), then targets.
  struct RoundLosses {
    double critic = 0.0;
    double aux = 0.0;
    double actor = 0.0;
    bool actor_updated = false;
  };
  RoundLosses update(const SampledBatch& batch, std::mt19937_64& rng);

  /// Every trainable parameter set, online first.
  std::vector<diff::ParameterSet*> all_parameter_sets();

 private:
  TrainConfig config_;
  std::unique_ptr<nets::Policy> policy_, target_policy_;
  std::vector<std::unique_ptr<nets::Critic>> critics_, target_critics_;
  std::size_t rounds_ = 0;
};

struct LogRow {
  std::size_t episode = 0;
  double cr = 0.0;
  double ql = 0.0;
  double pl = 0.0;
  double critic_loss = 0.0;
  double actor_obj = 0.0;
  double aux_loss = 0.0;
};

void write_log_csv(const std::vector<LogRow>& log, std::ostream& out);

struct TrainResult {
  std::unique_ptr<Learner> learner;
  std::vector<LogRow> log;
  std::size_t env_steps = 0;
  std::size_t crashes = 0;
};

struct TrainSetup {
  std::shared_ptr<const PowerNetwork> network;
  EnvConfig env;
  eval::ScenarioSet validation;
  std::uint64_t seed = 0;
  /// Called after each logged evaluation.
  std::function<void(const LogRow&)> on_log;
};

/// Episode loop: act with exploration, store, update once per step when the buffer holds a batch,
/// soft-update targets, evaluate on the validation set every eval_interval episodes.
TrainResult train_loop(const TrainConfig& config, const TrainSetup& setup);

}  // namespace gridflow::train
