#include <algorithm>
#include <cmath>

#include "gridflow/train.hpp"

namespace gridflow::train {

using namespace gridflow::diff;

SampledBatch make_batch(std::span<const Transition* const> transitions, const RunningStats& stats,
                        const nets::PolicyConfig& policy) {
  SampledBatch b;
  b.size = transitions.size();
  if (b.size == 0) throw std::invalid_argument("make_batch: empty sample");
  b.agents = transitions[0]->obs.size();
  const auto n = b.agents;

  std::vector<const Observation*> obs, next;
  std::vector<const std::vector<Observation>*> joint, joint_next;
  std::vector<double> hidden(b.size * n * policy.gru_width);
  std::vector<double> actions(b.size * n);
  for (std::size_t s = 0; s < b.size; ++s) {
    const auto& t = *transitions[s];
    if (t.obs.size() != n || t.next_obs.size() != n || t.actions.size() != n || t.hidden.size() != n)
      throw ShapeError("make_batch: transition disagrees on agent count");
    for (std::size_t a = 0; a < n; ++a) {
      obs.push_back(&t.obs[a]);
      next.push_back(&t.next_obs[a]);
      if (t.hidden[a].size() != policy.gru_width) throw ShapeError("make_batch: hidden width mismatch");
      std::copy(t.hidden[a].begin(), t.hidden[a].end(), hidden.begin() + (s * n + a) * policy.gru_width);
      actions[s * n + a] = t.actions[a];
    }
    joint.push_back(&t.obs);
    joint_next.push_back(&t.next_obs);
    b.rewards.push_back(normalize_reward(t.reward, stats));
    b.done.push_back(t.done ? 1.0 : 0.0);
  }
  b.policy_obs = nets::make_policy_batch(obs, n, policy.max_nodes);
  b.policy_next = nets::make_policy_batch(next, n, policy.max_nodes);
  b.hidden = Tensor::constant({b.size * n, policy.gru_width}, std::move(hidden));
  b.critic_obs = nets::make_critic_batch(joint, policy.max_nodes);
  b.critic_next = nets::make_critic_batch(joint_next, policy.max_nodes);
  b.actions = Tensor::constant({b.size, n}, std::move(actions));
  return b;
}

Learner::Learner(const TrainConfig& config, const PowerNetwork& network, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 seeds(seed);
  policy_ = nets::make_policy(policy_config(config_, network), seeds());
  target_policy_ = policy_->clone();
  const std::size_t twins = is_td3(config_.algorithm) ? 2 : 1;
  for (std::size_t k = 0; k < twins; ++k) {
    critics_.push_back(nets::make_critic(critic_config(config_, network), seeds()));
    target_critics_.push_back(critics_.back()->clone());
  }
}

std::vector<ParameterSet*> Learner::all_parameter_sets() {
  std::vector<ParameterSet*> out{&policy_->params()};
  for (auto& c : critics_) out.push_back(&c->params());
  out.push_back(&target_policy_->params());
  for (auto& c : target_critics_) out.push_back(&c->params());
  return out;
}

std::vector<double> Learner::targets(const SampledBatch& batch, std::mt19937_64& rng) const {
  NoGradGuard no_grad;
  const auto out = target_policy_->forward(batch.policy_next, batch.hidden);
  std::vector<double> a(out.action.values().begin(), out.action.values().end());
  if (is_td3(config_.algorithm)) {
    std::normal_distribution<double> noise(0.0, config_.target_noise);
    for (auto& x : a) {
      const double eps = std::clamp(noise(rng), -config_.target_noise_clip, config_.target_noise_clip);
      x = std::clamp(x + eps, -1.0, 1.0);
    }
  }
  const auto next_actions = Tensor::constant({batch.size, batch.agents}, std::move(a));
  std::vector<double> q(batch.size, 0.0);
  for (std::size_t k = 0; k < target_critics_.size(); ++k) {
    const auto qk = target_critics_[k]->forward(batch.critic_next, next_actions);
    for (std::size_t s = 0; s < batch.size; ++s) q[s] = k == 0 ? qk[s] : std::min(q[s], qk[s]);
  }
  std::vector<double> y(batch.size);
  for (std::size_t s = 0; s < batch.size; ++s)
    y[s] = batch.rewards[s] + config_.gamma * (1.0 - batch.done[s]) * q[s];
  return y;
}

double Learner::critic_update(const SampledBatch& batch, std::mt19937_64& rng) {
  const auto y = Tensor::constant({batch.size, 1}, targets(batch, rng));
  double first_loss = 0.0;
  for (std::size_t k = 0; k < critics_.size(); ++k) {
    auto& critic = *critics_[k];
    for (std::size_t e = 0; e < config_.value_epochs; ++e) {
      const auto loss = mse(critic.forward(batch.critic_obs, batch.actions), y);
      backward(loss);
      clip_gradients_l1(critic.params(), config_.grad_clip);
      rmsprop_step(critic.params(), {config_.value_lr});
      if (k == 0) first_loss = loss.item();
    }
  }
  return first_loss;
}

double Learner::aux_update(const SampledBatch& batch) {
  const auto labels = Tensor::constant({batch.size * batch.agents, 1}, batch.policy_obs.labels);
  double last = 0.0;
  for (std::size_t e = 0; e < config_.aux_epochs; ++e) {
    const auto loss = mse(policy_->forward(batch.policy_obs, batch.hidden).vr, labels);
    backward(loss);
    clip_gradients_l1(policy_->params(), config_.grad_clip);
    rmsprop_step(policy_->params(), {config_.aux_lr});
    last = loss.item();
  }
  return last;
}

double Learner::actor_update(const SampledBatch& batch) {
  double objective = 0.0;
  auto& critic = *critics_[0];
  for (std::size_t e = 0; e < config_.policy_epochs; ++e) {
    const auto out = policy_->forward(batch.policy_obs, batch.hidden);
    const auto actions = reshape(out.action, {batch.size, batch.agents});
    const auto q = mean_all(critic.forward(batch.critic_obs, actions));
    backward(scale(q, -1.0));
    critic.params().zero_grad();
    clip_gradients_l1(policy_->params(), config_.grad_clip);
    rmsprop_step(policy_->params(), {config_.policy_lr});
    objective = q.item();
  }
  return objective;
}

void Learner::update_targets() {
  soft_update(target_policy_->params(), policy_->params(), config_.tau);
  for (std::size_t k = 0; k < critics_.size(); ++k)
    soft_update(target_critics_[k]->params(), critics_[k]->params(), config_.tau);
}

Learner::RoundLosses Learner::update(const SampledBatch& batch, std::mt19937_64& rng) {
  RoundLosses out;
  out.critic = critic_update(batch, rng);
  const bool actor_round = !is_td3(config_.algorithm) || rounds_ % config_.actor_delay == config_.actor_delay - 1;
  ++rounds_;
  if (config_.use_aux()) out.aux = aux_update(batch);
  if (actor_round) {
    out.actor = actor_update(batch);
    out.actor_updated = true;
    update_targets();
  }
  return out;
}

}  // namespace gridflow::train
