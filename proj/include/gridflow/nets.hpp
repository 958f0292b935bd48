#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gridflow/diff.hpp"
#include "gridflow/env.hpp"

namespace gridflow::nets {

using diff::ParameterSet;
using diff::Tensor;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined
  Tensor operator()(const Tensor& x) const;
};

/// Weights and bias uniform in +-1/sqrt(fan_in).
Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                   std::mt19937_64& rng, bool bias = true);

/// Softmax weights of one attention layer: heads x [batch, query, key].
struct AttentionTrace {
  struct Layer {
    std::string name;
    std::vector<Tensor> heads;
  };
  std::vector<Layer> layers;
  Tensor encoder_output;  // [B, M, d] after the masked encoder, before aggregation
};

/// Multi-head self-attention with residual and layer norm:
/// E' = LayerNorm(E + Linear(MaskAttention(W_Q E, W_K E, W_V E, mask))).
struct AttentionLayer {
  Linear query, key, value, output;
  Tensor gamma, beta;
  std::size_t heads = 4;

  /// x: [B, M, d]; mask: [B, M, M] binary, or undefined for full attention.
  Tensor operator()(const Tensor& x, const Tensor& mask, std::vector<Tensor>* weights = nullptr) const;
};

AttentionLayer make_attention(ParameterSet& params, const std::string& name, std::size_t d_model, std::size_t heads,
                              std::mt19937_64& rng);

/// PyTorch-convention GRU cell.
struct GruCell {
  Linear input;   // x -> [r, z, n]
  Linear hidden;  // h -> [r, z, n]
  std::size_t width = 0;
  Tensor operator()(const Tensor& x, const Tensor& h) const;
};

GruCell make_gru(ParameterSet& params, const std::string& name, std::size_t in, std::size_t width,
                 std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Batched inputs

/// Observations for a batch of (sample, agent) pairs, padded to a common node count.
struct PolicyBatch {
  std::size_t batch = 0;
  std::size_t nodes = 0;
  Tensor features;   // [B, M, 7 + n_agents]: node features plus agent one-hot
  Tensor node_mask;  // [B, M, M]: D^i, zero on padding
  Tensor key_mask;   // [B, M, M]: 1 on every real key
  Tensor flat;       // [B, max_nodes * 7 + n_agents]: zero-padded flattening plus one-hot
  std::vector<std::size_t> own_index;
  std::vector<double> labels;  // aux_label per row
};

PolicyBatch make_policy_batch(std::span<const Observation* const> observations, std::size_t n_agents,
                              std::size_t max_nodes);

/// Joint observations for a batch of samples; every sample lists all n agents in id order.
struct CriticBatch {
  std::size_t batch = 0;
  std::size_t agents = 0;
  Tensor obs;  // [B, n, max_nodes * 7]
  Tensor ids;  // [B, n, n] one-hot
};

CriticBatch make_critic_batch(std::span<const std::vector<Observation>* const> joint, std::size_t max_nodes);

// ---------------------------------------------------------------------------
// Policies

struct PolicyOutput {
  Tensor action;  // [B, 1] in [-1, 1]
  Tensor vr;      // [B, 1] in [0, 1]
  Tensor hidden;  // [B, gru_width]
};

enum class PolicyKind { Transformer, Mlp };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Transformer;
  std::size_t n_agents = 1;
  std::size_t max_nodes = 1;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t gru_width = 64;
  std::size_t mlp_hidden = 64;
  bool use_mask = true;         // false: encoder attends across the whole zone
  bool use_aggregation = true;  // false: select the own-node row straight from the encoder
  bool operator==(const PolicyConfig&) const = default;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual PolicyOutput forward(const PolicyBatch& batch, const Tensor& hidden, AttentionTrace* trace = nullptr) const = 0;
  virtual ParameterSet& params() = 0;
  virtual const ParameterSet& params() const = 0;
  virtual const PolicyConfig& config() const = 0;
  /// Same architecture, independent parameter storage, identical values.
  std::unique_ptr<Policy> clone() const;
  Tensor initial_hidden(std::size_t batch) const { return Tensor::zeros({batch, config().gru_width}); }
};

std::unique_ptr<Policy> make_policy(const PolicyConfig& config, std::uint64_t seed);

/// Per-agent forward used during rollouts. Returns actions, vr predictions, new hidden rows.
struct AgentStep {
  std::vector<double> actions;
  std::vector<double> vr;
  std::vector<std::vector<double>> hidden;
};
AgentStep act(const Policy& policy, const std::vector<Observation>& observations,
              const std::vector<std::vector<double>>& hidden);

/// Softmax weights of every head of every attention layer for one observation.
struct AttentionDump {
  struct Layer {
    std::string name;
    std::vector<std::vector<double>> heads;  // m x m row-major per head
  };
  std::size_t nodes = 0;
  std::vector<Layer> layers;
};
AttentionDump dump_attention(const Policy& policy, const Observation& obs, std::span<const double> hidden);
void write_attention_csv(const AttentionDump& dump, std::ostream& out);

// ---------------------------------------------------------------------------
// Critics

enum class CriticKind { Transformer, Mlp };

struct CriticConfig {
  CriticKind kind = CriticKind::Transformer;
  std::size_t n_agents = 1;
  std::size_t max_nodes = 1;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 3;
  std::size_t mlp_hidden = 64;
  bool operator==(const CriticConfig&) const = default;
};

class Critic {
 public:
  virtual ~Critic() = default;
  /// actions: [B, n]. Returns Q: [B, 1].
  virtual Tensor forward(const CriticBatch& batch, const Tensor& actions) const = 0;
  virtual ParameterSet& params() = 0;
  virtual const ParameterSet& params() const = 0;
  virtual const CriticConfig& config() const = 0;
  std::unique_ptr<Critic> clone() const;
};

std::unique_ptr<Critic> make_critic(const CriticConfig& config, std::uint64_t seed);

}  // namespace gridflow::nets
