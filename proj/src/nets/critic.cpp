#include "gridflow/nets.hpp"

namespace gridflow::nets {

using namespace gridflow::diff;

CriticBatch make_critic_batch(std::span<const std::vector<Observation>* const> joint, std::size_t max_nodes) {
  CriticBatch b;
  b.batch = joint.size();
  b.agents = b.batch ? joint[0]->size() : 0;
  const auto obs_width = max_nodes * kFeatureWidth;
  std::vector<double> obs(b.batch * b.agents * obs_width, 0.0);
  std::vector<double> ids(b.batch * b.agents * b.agents, 0.0);
  for (std::size_t s = 0; s < b.batch; ++s) {
    if (joint[s]->size() != b.agents) throw ShapeError("critic batch: samples disagree on agent count");
    for (std::size_t a = 0; a < b.agents; ++a) {
      const auto& o = (*joint[s])[a];
      if (o.size() > max_nodes) throw ShapeError("critic batch: zone larger than max_nodes");
      double* row = obs.data() + (s * b.agents + a) * obs_width;
      for (std::size_t j = 0; j < o.size(); ++j) std::copy(o.features[j].begin(), o.features[j].end(), row + j * kFeatureWidth);
      ids[(s * b.agents + a) * b.agents + o.agent_id] = 1.0;
    }
  }
  b.obs = Tensor::constant({b.batch, b.agents, obs_width}, std::move(obs));
  b.ids = Tensor::constant({b.batch, b.agents, b.agents}, std::move(ids));
  return b;
}

namespace {

void check_actions(const CriticBatch& batch, const Tensor& actions, std::size_t n_agents) {
  if (batch.agents != n_agents) throw ShapeError("critic: batch has " + std::to_string(batch.agents) +
                                                 " agents, network expects " + std::to_string(n_agents));
  if (actions.shape() != Shape{batch.batch, batch.agents})
    throw ShapeError("critic: actions must be [B, n], got " + to_string(actions.shape()));
}

// Tokens (O_i, mu_i, id_i) -> unmasked transformer -> mean over agents -> scalar.
class TransformerCritic final : public Critic {
 public:
  TransformerCritic(const CriticConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(seed);
    const auto token = config.max_nodes * kFeatureWidth + 1 + config.n_agents;
    projection_ = make_linear(params_, "critic.projection", token, config.d_model, rng);
    for (std::size_t l = 0; l < config.layers; ++l)
      layers_.push_back(make_attention(params_, "critic.layer" + std::to_string(l), config.d_model, config.heads, rng));
    head_ = make_linear(params_, "critic.head", config.d_model, 1, rng);
  }

  Tensor forward(const CriticBatch& batch, const Tensor& actions) const override {
    check_actions(batch, actions, config_.n_agents);
    const auto a = reshape(actions, {batch.batch, batch.agents, 1});
    auto e = projection_(concat({batch.obs, a, batch.ids}));
    for (const auto& layer : layers_) e = layer(e, Tensor{});
    return head_(mean(e, 1));
  }

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  const CriticConfig& config() const override { return config_; }

 private:
  CriticConfig config_;
  ParameterSet params_;
  Linear projection_;
  std::vector<AttentionLayer> layers_;
  Linear head_;
};

// Baseline: one hidden layer over all observations and actions in agent order.
class MlpCritic final : public Critic {
 public:
  MlpCritic(const CriticConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(seed);
    const auto in = config.n_agents * (config.max_nodes * kFeatureWidth + 1);
    hidden_ = make_linear(params_, "critic.mlp.hidden", in, config.mlp_hidden, rng);
    head_ = make_linear(params_, "critic.head", config.mlp_hidden, 1, rng);
  }

  Tensor forward(const CriticBatch& batch, const Tensor& actions) const override {
    check_actions(batch, actions, config_.n_agents);
    const auto obs = reshape(batch.obs, {batch.batch, batch.agents * batch.obs.dim(-1)});
    return head_(relu(hidden_(concat({obs, actions}))));
  }

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  const CriticConfig& config() const override { return config_; }

 private:
  CriticConfig config_;
  ParameterSet params_;
  Linear hidden_;
  Linear head_;
};

}  // namespace

std::unique_ptr<Critic> make_critic(const CriticConfig& config, std::uint64_t seed) {
  if (config.kind == CriticKind::Mlp) return std::make_unique<MlpCritic>(config, seed);
  return std::make_unique<TransformerCritic>(config, seed);
}

std::unique_ptr<Critic> Critic::clone() const {
  auto copy = make_critic(config(), 0);
  copy->params().copy_values_from(params());
  return copy;
}

}  // namespace gridflow::nets
