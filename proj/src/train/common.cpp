#include <algorithm>
#include <cmath>
#include <ostream>

#include "gridflow/train.hpp"

namespace gridflow::train {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "maddpg") return Algorithm::Maddpg;
  if (name == "matd3") return Algorithm::Matd3;
  if (name == "t-maddpg") return Algorithm::TMaddpg;
  if (name == "t-matd3") return Algorithm::TMatd3;
  throw ValidationError("unknown algorithm '" + name + "' (expected maddpg, matd3, t-maddpg or t-matd3)");
}

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Maddpg: return "maddpg";
    case Algorithm::Matd3: return "matd3";
    case Algorithm::TMaddpg: return "t-maddpg";
    case Algorithm::TMatd3: return "t-matd3";
  }
  return "?";
}

bool is_transformer(Algorithm algorithm) { return algorithm == Algorithm::TMaddpg || algorithm == Algorithm::TMatd3; }
bool is_td3(Algorithm algorithm) { return algorithm == Algorithm::Matd3 || algorithm == Algorithm::TMatd3; }

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(batch);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

void RunningStats::push(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double RunningStats::std() const {
  if (count_ < 2) return 0.0;
  return std::sqrt(std::max(0.0, m2_ / static_cast<double>(count_)));
}

double normalize_reward(double r, const RunningStats& stats) { return r / std::max(stats.std(), 1e-6); }

void observe_reward(RunningStats& stats, const StepResult& step) {
  if (!step.info.crashed) stats.push(step.reward);
}

double ExplorationSchedule::sigma(std::size_t step, std::size_t total_steps) const {
  const double horizon = decay_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return sigma_end;
  const double progress = std::min(1.0, static_cast<double>(step) / horizon);
  return sigma_start + (sigma_end - sigma_start) * progress;
}

double exploration_action(double mu, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  return std::clamp(mu + sigma * noise(rng), -1.0, 1.0);
}

void soft_update(diff::ParameterSet& target, const diff::ParameterSet& online, double tau) {
  if (target.size() != online.size()) throw diff::ShapeError("soft_update: parameter sets differ in size");
  for (std::size_t k = 0; k < target.size(); ++k) {
    auto& t = target.items()[k].tensor;
    const auto& o = online.items()[k].tensor;
    if (t.shape() != o.shape())
      throw diff::ShapeError("soft_update: shape mismatch for " + target.items()[k].name);
    auto tv = t.mutable_values();
    const auto ov = o.values();
    if (tau == 1.0) {
      std::copy(ov.begin(), ov.end(), tv.begin());
      continue;
    }
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += tau * (ov[i] - tv[i]);
  }
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(what);
  };
  require(policy_lr >= 0.0 && value_lr >= 0.0 && aux_lr >= 0.0, "learning rates must be non-negative");
  require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(buffer_capacity > 0, "buffer_capacity must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(actor_delay > 0, "actor_delay must be positive");
  require(eval_interval > 0, "eval_interval must be positive");
  require(train_days > 0, "train_days must be positive");
  require(!train_factors.empty(), "train_factors must not be empty");
  require(d_model > 0 && d_model % 4 == 0, "d_model must be a positive multiple of the head count (4)");
  require(gru_width > 0 && mlp_hidden > 0, "layer widths must be positive");
  require(exploration.sigma_start >= 0.0 && exploration.sigma_end >= 0.0, "exploration sigma must be non-negative");
}

nets::PolicyConfig policy_config(const TrainConfig& config, const PowerNetwork& network) {
  nets::PolicyConfig p;
  p.kind = is_transformer(config.algorithm) ? nets::PolicyKind::Transformer : nets::PolicyKind::Mlp;
  p.n_agents = network.n_agents();
  p.max_nodes = network.max_zone_size();
  p.d_model = config.d_model;
  p.gru_width = config.gru_width;
  p.mlp_hidden = config.mlp_hidden;
  p.use_mask = !config.no_mask;
  p.use_aggregation = !config.no_ea;
  return p;
}

nets::CriticConfig critic_config(const TrainConfig& config, const PowerNetwork& network) {
  nets::CriticConfig c;
  c.kind = is_transformer(config.algorithm) && !config.mlp_critic ? nets::CriticKind::Transformer
                                                                   : nets::CriticKind::Mlp;
  c.n_agents = network.n_agents();
  c.max_nodes = network.max_zone_size();
  c.d_model = config.d_model;
  c.mlp_hidden = config.mlp_hidden;
  return c;
}

void write_log_csv(const std::vector<LogRow>& log, std::ostream& out) {
  out << "episode,cr,ql,pl,critic_loss,actor_obj,aux_loss\n";
  out.precision(10);
  for (const auto& r : log)
    out << r.episode << ',' << r.cr << ',' << r.ql << ',' << r.pl << ',' << r.critic_loss << ',' << r.actor_obj << ','
        << r.aux_loss << '\n';
}

}  // namespace gridflow::train
