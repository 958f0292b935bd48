#pragma once

// Random zones and observations for network tests.

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "gridflow/env.hpp"

namespace gridflow::testing {

/// Adjacency (with self loops) of a random tree on m nodes.
inline BinaryMatrix random_tree_adjacency(std::size_t m, std::mt19937_64& rng) {
  BinaryMatrix d;
  d.size = m;
  d.data.assign(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) d.data[i * m + i] = 1;
  for (std::size_t i = 1; i < m; ++i) {
    const auto parent = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    d.data[i * m + parent] = d.data[parent * m + i] = 1;
  }
  return d;
}

inline Observation random_observation(std::size_t m, std::size_t agent_id, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> load(0.0, 0.1), volt(0.92, 1.08), angle(-0.05, 0.05);
  Observation o;
  o.adjacency = random_tree_adjacency(m, rng);
  o.own_index = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
  o.agent_id = agent_id;
  o.features.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto& f = o.features[j];
    f[feature::kPLoad] = load(rng);
    f[feature::kQLoad] = 0.3 * load(rng);
    f[feature::kVoltage] = volt(rng);
    f[feature::kAngle] = angle(rng);
    if (j == o.own_index) {
      f[feature::kFlagPv] = 1.0;
      f[feature::kPPv] = 2.0 * load(rng);
      f[feature::kQPv] = load(rng) - 0.05;
    }
  }
  return o;
}

/// Relabels the nodes of an observation: new node k is old node perm[k].
inline Observation permute_nodes(const Observation& o, const std::vector<std::size_t>& perm) {
  Observation p = o;
  const auto m = o.size();
  for (std::size_t k = 0; k < m; ++k) {
    p.features[k] = o.features[perm[k]];
    for (std::size_t l = 0; l < m; ++l) p.adjacency.data[k * m + l] = o.adjacency(perm[k], perm[l]);
    if (perm[k] == o.own_index) p.own_index = k;
  }
  return p;
}

inline std::vector<std::size_t> random_permutation(std::size_t m, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace gridflow::testing
