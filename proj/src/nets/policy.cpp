#include <algorithm>
#include <ostream>

#include "gridflow/nets.hpp"

namespace gridflow::nets {

using namespace gridflow::diff;

PolicyBatch make_policy_batch(std::span<const Observation* const> observations, std::size_t n_agents,
                              std::size_t max_nodes) {
  PolicyBatch b;
  b.batch = observations.size();
  for (const auto* o : observations) b.nodes = std::max(b.nodes, o->size());
  if (b.nodes > max_nodes) throw ShapeError("observation has more nodes than the network's largest zone");
  const auto m = b.nodes;
  const auto width = kFeatureWidth + n_agents;
  const auto flat_width = max_nodes * kFeatureWidth + n_agents;

  std::vector<double> features(b.batch * m * width, 0.0);
  std::vector<double> node_mask(b.batch * m * m, 0.0);
  std::vector<double> key_mask(b.batch * m * m, 0.0);
  std::vector<double> flat(b.batch * flat_width, 0.0);
  b.own_index.resize(b.batch);
  b.labels.resize(b.batch);

  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& o = *observations[i];
    const auto mi = o.size();
    if (o.adjacency.size != mi) throw ShapeError("adjacency is not m_i x m_i");
    if (o.own_index >= mi) throw ShapeError("own_index out of range");
    if (o.agent_id >= n_agents) throw ShapeError("agent_id out of range");
    for (std::size_t j = 0; j < mi; ++j) {
      double* row = features.data() + (i * m + j) * width;
      std::copy(o.features[j].begin(), o.features[j].end(), row);
      row[kFeatureWidth + o.agent_id] = 1.0;
      std::copy(o.features[j].begin(), o.features[j].end(), flat.data() + i * flat_width + j * kFeatureWidth);
      for (std::size_t k = 0; k < mi; ++k) {
        node_mask[(i * m + j) * m + k] = o.adjacency(j, k);
        key_mask[(i * m + j) * m + k] = 1.0;
      }
    }
    // padded query rows still see the real keys so their softmax stays well defined
    for (std::size_t j = mi; j < m; ++j)
      for (std::size_t k = 0; k < mi; ++k) {
        node_mask[(i * m + j) * m + k] = 1.0;
        key_mask[(i * m + j) * m + k] = 1.0;
      }
    flat[i * flat_width + max_nodes * kFeatureWidth + o.agent_id] = 1.0;
    b.own_index[i] = o.own_index;
    b.labels[i] = aux_label(o);
  }
  b.features = Tensor::constant({b.batch, m, width}, std::move(features));
  b.node_mask = Tensor::constant({b.batch, m, m}, std::move(node_mask));
  b.key_mask = Tensor::constant({b.batch, m, m}, std::move(key_mask));
  b.flat = Tensor::constant({b.batch, flat_width}, std::move(flat));
  return b;
}

namespace {

class TransformerPolicy final : public Policy {
 public:
  TransformerPolicy(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(seed);
    projection_ = make_linear(params_, "policy.projection", kFeatureWidth + config.n_agents, config.d_model, rng);
    for (std::size_t l = 0; l < config.encoder_layers; ++l)
      encoder_.push_back(make_attention(params_, "policy.encoder" + std::to_string(l), config.d_model, config.heads, rng));
    if (config.use_aggregation)
      aggregation_ = make_attention(params_, "policy.aggregation", config.d_model, config.heads, rng);
    gru_ = make_gru(params_, "policy.gru", config.d_model, config.gru_width, rng);
    action_head_ = make_linear(params_, "policy.action_head", config.gru_width, 1, rng);
    aux_head_ = make_linear(params_, "policy.aux_head", config.d_model, 1, rng);
  }

  PolicyOutput forward(const PolicyBatch& batch, const Tensor& hidden, AttentionTrace* trace) const override {
    auto e = projection_(batch.features);
    const auto& encoder_mask = config_.use_mask ? batch.node_mask : batch.key_mask;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      std::vector<Tensor>* sink = nullptr;
      if (trace) sink = &trace->layers.emplace_back(AttentionTrace::Layer{"encoder" + std::to_string(l), {}}).heads;
      e = encoder_[l](e, encoder_mask, sink);
    }
    if (trace) trace->encoder_output = e;
    if (config_.use_aggregation) {
      std::vector<Tensor>* sink = nullptr;
      if (trace) sink = &trace->layers.emplace_back(AttentionTrace::Layer{"aggregation", {}}).heads;
      e = aggregation_(e, batch.key_mask, sink);
    }
    const auto own = select_rows(e, batch.own_index);
    PolicyOutput out;
    out.hidden = gru_(own, hidden);
    out.action = tanh(action_head_(out.hidden));
    out.vr = sigmoid(aux_head_(own));
    return out;
  }

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  const PolicyConfig& config() const override { return config_; }

 private:
  PolicyConfig config_;
  ParameterSet params_;
  Linear projection_;
  std::vector<AttentionLayer> encoder_;
  AttentionLayer aggregation_;
  GruCell gru_;
  Linear action_head_;
  Linear aux_head_;
};

// Baseline: one hidden layer on the padded observation, then a GRU.
class MlpPolicy final : public Policy {
 public:
  MlpPolicy(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(seed);
    const auto in = config.max_nodes * kFeatureWidth + config.n_agents;
    hidden_layer_ = make_linear(params_, "policy.mlp.hidden", in, config.mlp_hidden, rng);
    gru_ = make_gru(params_, "policy.gru", config.mlp_hidden, config.gru_width, rng);
    action_head_ = make_linear(params_, "policy.action_head", config.gru_width, 1, rng);
    aux_head_ = make_linear(params_, "policy.aux_head", config.mlp_hidden, 1, rng);
  }

  PolicyOutput forward(const PolicyBatch& batch, const Tensor& hidden, AttentionTrace*) const override {
    const auto x = relu(hidden_layer_(batch.flat));
    PolicyOutput out;
    out.hidden = gru_(x, hidden);
    out.action = tanh(action_head_(out.hidden));
    out.vr = sigmoid(aux_head_(x));
    return out;
  }

  ParameterSet& params() override { return params_; }
  const ParameterSet& params() const override { return params_; }
  const PolicyConfig& config() const override { return config_; }

 private:
  PolicyConfig config_;
  ParameterSet params_;
  Linear hidden_layer_;
  GruCell gru_;
  Linear action_head_;
  Linear aux_head_;
};

}  // namespace

std::unique_ptr<Policy> make_policy(const PolicyConfig& config, std::uint64_t seed) {
  if (config.kind == PolicyKind::Mlp) return std::make_unique<MlpPolicy>(config, seed);
  return std::make_unique<TransformerPolicy>(config, seed);
}

std::unique_ptr<Policy> Policy::clone() const {
  auto copy = make_policy(config(), 0);
  copy->params().copy_values_from(params());
  return copy;
}

AgentStep act(const Policy& policy, const std::vector<Observation>& observations,
              const std::vector<std::vector<double>>& hidden) {
  NoGradGuard no_grad;
  const auto n = observations.size();
  const auto width = policy.config().gru_width;
  std::vector<const Observation*> ptrs;
  for (const auto& o : observations) ptrs.push_back(&o);
  const auto batch = make_policy_batch(ptrs, policy.config().n_agents, policy.config().max_nodes);
  std::vector<double> h(n * width);
  for (std::size_t i = 0; i < n; ++i) std::copy(hidden[i].begin(), hidden[i].end(), h.begin() + i * width);
  const auto out = policy.forward(batch, Tensor::constant({n, width}, std::move(h)));

  AgentStep step;
  step.actions.assign(out.action.values().begin(), out.action.values().end());
  step.vr.assign(out.vr.values().begin(), out.vr.values().end());
  step.hidden.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    step.hidden[i].assign(out.hidden.values().begin() + static_cast<std::ptrdiff_t>(i * width),
                          out.hidden.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  return step;
}

AttentionDump dump_attention(const Policy& policy, const Observation& obs, std::span<const double> hidden) {
  NoGradGuard no_grad;
  const Observation* one[] = {&obs};
  const auto batch = make_policy_batch(one, policy.config().n_agents, policy.config().max_nodes);
  AttentionTrace trace;
  policy.forward(batch, Tensor::constant({1, hidden.size()}, {hidden.begin(), hidden.end()}), &trace);
  AttentionDump dump;
  dump.nodes = obs.size();
  for (const auto& layer : trace.layers) {
    auto& out = dump.layers.emplace_back(AttentionDump::Layer{layer.name, {}});
    for (const auto& w : layer.heads) out.heads.emplace_back(w.values().begin(), w.values().end());
  }
  return dump;
}

void write_attention_csv(const AttentionDump& dump, std::ostream& out) {
  out << "layer,head,query,key,weight\n";
  out.precision(17);
  for (const auto& layer : dump.layers)
    for (std::size_t h = 0; h < layer.heads.size(); ++h)
      for (std::size_t q = 0; q < dump.nodes; ++q)
        for (std::size_t k = 0; k < dump.nodes; ++k)
          out << layer.name << ',' << h << ',' << q << ',' << k << ',' << layer.heads[h][q * dump.nodes + k] << '\n';
}

}  // namespace gridflow::nets
