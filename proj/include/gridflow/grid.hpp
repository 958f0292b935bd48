#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridflow {

/// Malformed input file (bad JSON, missing keys, wrong types).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsed but violates a model invariant. The message names the invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;  // p.u.
  double x = 0.0;  // p.u.
};

struct LoadSite {
  std::size_t bus = 0;
  std::string profile_id;
};

struct PvSite {
  std::size_t bus = 0;
  double s_max = 0.0;  // apparent-power rating, p.u.
  std::string profile_id;
};

/// Dense row-major 0/1 matrix.
struct BinaryMatrix {
  std::size_t size = 0;
  std::vector<int> data;

  int operator()(std::size_t row, std::size_t col) const { return data[row * size + col]; }
  int& operator()(std::size_t row, std::size_t col) { return data[row * size + col]; }
  bool operator==(const BinaryMatrix&) const = default;
};

struct Zone {
  std::vector<std::size_t> node_ids;
  BinaryMatrix adjacency;
  /// One entry per agent in this zone: local index of its PV bus in node_ids.
  std::vector<std::size_t> pv_local_indices;
  /// Global agent indices matching pv_local_indices.
  std::vector<std::size_t> agents;
};

struct Base {
  double s_base_mva = 1.0;
  double v_base_kv = 1.0;
};

/// Radial distribution feeder with its zone partition. Bus 0 is the slack.
/// Immutable after construction; every instance satisfies the tree and
/// partition invariants.
class PowerNetwork {
 public:
  PowerNetwork(std::size_t n_bus, std::vector<Branch> branches, std::vector<LoadSite> loads,
               std::vector<PvSite> pvs, std::vector<std::vector<std::size_t>> zones,
               Base base = {});

  std::size_t n_bus() const { return n_bus_; }
  std::size_t n_agents() const { return pvs_.size(); }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<LoadSite>& loads() const { return loads_; }
  const std::vector<PvSite>& pvs() const { return pvs_; }
  const std::vector<Zone>& zones() const { return zones_; }
  const Base& base() const { return base_; }

  /// Branch index feeding each bus (entry 0 unused).
  const std::vector<std::size_t>& parent_branch() const { return parent_branch_; }
  /// Parent bus of each bus (entry 0 is 0).
  const std::vector<std::size_t>& parent() const { return parent_; }
  /// Breadth-first order from the slack bus.
  const std::vector<std::size_t>& bfs_order() const { return bfs_order_; }

  /// Zone index and local position of an agent's PV bus.
  std::size_t agent_zone(std::size_t agent) const { return agent_zone_[agent]; }
  std::size_t agent_local_index(std::size_t agent) const { return agent_local_[agent]; }
  /// Agent hosted on a bus, or npos.
  std::size_t pv_agent_at(std::size_t bus) const { return pv_at_bus_[bus]; }
  /// Largest zone size.
  std::size_t max_zone_size() const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t n_bus_;
  std::vector<Branch> branches_;
  std::vector<LoadSite> loads_;
  std::vector<PvSite> pvs_;
  std::vector<Zone> zones_;
  Base base_;
  std::vector<std::size_t> parent_branch_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> bfs_order_;
  std::vector<std::size_t> agent_zone_;
  std::vector<std::size_t> agent_local_;
  std::vector<std::size_t> pv_at_bus_;
};

PowerNetwork load_network(const std::filesystem::path& path);
PowerNetwork parse_network(const std::string& json_text);

/// D^i for one zone: 1 where two zone members share a branch, 1 on the diagonal.
BinaryMatrix build_zone_adjacency(const PowerNetwork& network, std::size_t zone_index);

/// Buses in breadth-first order from the slack; each bus after its parent.
std::vector<std::size_t> parent_order(const PowerNetwork& network);

}  // namespace gridflow
