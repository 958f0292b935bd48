#include <random>

#include "gridflow/train.hpp"

namespace gridflow::train {

namespace {

struct LossAccumulator {
  double critic = 0.0, actor = 0.0, aux = 0.0;
  std::size_t rounds = 0, actor_rounds = 0;

  void add(const Learner::RoundLosses& l) {
    critic += l.critic;
    aux += l.aux;
    ++rounds;
    if (l.actor_updated) {
      actor += l.actor;
      ++actor_rounds;
    }
  }
  void flush_into(LogRow& row) {
    if (rounds) {
      row.critic_loss = critic / static_cast<double>(rounds);
      row.aux_loss = aux / static_cast<double>(rounds);
    }
    if (actor_rounds) row.actor_obj = actor / static_cast<double>(actor_rounds);
    *this = {};
  }
};

}  // namespace

TrainResult train_loop(const TrainConfig& config, const TrainSetup& setup) {
  config.validate();
  setup.env.validate();
  const auto& network = setup.network;
  std::mt19937_64 rng(setup.seed);

  TrainResult result;
  result.learner = std::make_unique<Learner>(config, *network, rng());
  auto& learner = *result.learner;
  const auto pcfg = learner.policy().config();

  // one training environment per PV factor, each over its own synthetic days
  std::vector<VoltageControlEnv> envs;
  for (double factor : config.train_factors) {
    ProfileOptions options;
    options.pv_to_load = factor;
    auto profile = std::make_shared<const Profile>(generate_profiles(*network, rng(), config.train_days, options));
    envs.emplace_back(network, profile, setup.env);
  }

  ReplayBuffer buffer(config.buffer_capacity);
  RunningStats stats;
  LossAccumulator losses;
  const std::size_t length = setup.env.episode_length;
  const std::size_t total_steps = config.episodes * length;
  std::size_t step = 0;

  for (std::size_t episode = 1; episode <= config.episodes; ++episode) {
    auto& env = envs[std::uniform_int_distribution<std::size_t>(0, envs.size() - 1)(rng)];
    const auto last_start = env.profile().length() - length - 1;
    auto obs = env.reset(std::uniform_int_distribution<std::size_t>(0, last_start)(rng));
    std::vector<std::vector<double>> hidden(network->n_agents(), std::vector<double>(pcfg.gru_width, 0.0));

    while (!env.done()) {
      auto decision = nets::act(learner.policy(), obs, hidden);
      const double sigma = config.exploration.sigma(step, total_steps);
      for (auto& a : decision.actions) a = exploration_action(a, sigma, rng);
      auto outcome = env.step(decision.actions);
      if (outcome.info.crashed) ++result.crashes;
      observe_reward(stats, outcome);

      Transition t;
      t.obs = std::move(obs);
      t.actions = std::move(decision.actions);
      t.reward = outcome.reward;
      t.next_obs = outcome.observations;
      t.done = outcome.done;
      t.hidden = std::move(hidden);
      buffer.push(std::move(t));
      obs = std::move(outcome.observations);
      hidden = std::move(decision.hidden);

      if (buffer.size() >= config.batch_size) {
        const auto sample = buffer.sample(config.batch_size, rng);
        losses.add(learner.update(make_batch(sample, stats, pcfg), rng));
      }
      ++step;
    }

    if (episode % config.eval_interval == 0) {
      const auto report = eval::run_policy(network, learner.policy(), setup.validation, setup.env);
      LogRow row;
      row.episode = episode;
      row.cr = report.mean.cr;
      row.ql = report.mean.ql;
      row.pl = report.mean.pl;
      losses.flush_into(row);
      result.log.push_back(row);
      if (setup.on_log) setup.on_log(row);
    }
  }
  result.env_steps = step;
  return result;
}

}  // namespace gridflow::train
