#include "gridflow/grid.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

namespace gridflow {

namespace {

using nlohmann::json;

BinaryMatrix induced_adjacency(const std::vector<Branch>& branches,
                               const std::vector<std::size_t>& node_ids, std::size_t n_bus) {
  std::vector<std::size_t> local(n_bus, PowerNetwork::npos);
  for (std::size_t k = 0; k < node_ids.size(); ++k) local[node_ids[k]] = k;

  BinaryMatrix m;
  m.size = node_ids.size();
  m.data.assign(m.size * m.size, 0);
  for (std::size_t k = 0; k < m.size; ++k) m(k, k) = 1;
  for (const auto& b : branches) {
    const auto a = local[b.from];
    const auto c = local[b.to];
    if (a == PowerNetwork::npos || c == PowerNetwork::npos) continue;
    m(a, c) = 1;
    m(c, a) = 1;
  }
  return m;
}

std::string profile_key(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  throw ParseError("profile_id must be a string or integer");
}

std::size_t as_index(const json& value, const char* what) {
  if (!value.is_number_integer() || value.get<long long>() < 0)
    throw ParseError(std::string(what) + " must be a non-negative integer");
  return static_cast<std::size_t>(value.get<long long>());
}

double as_number(const json& value, const char* what) {
  if (!value.is_number()) throw ParseError(std::string(what) + " must be a number");
  return value.get<double>();
}

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing key '") + key + "'");
  return *it;
}

}  // namespace

PowerNetwork::PowerNetwork(std::size_t n_bus, std::vector<Branch> branches,
                           std::vector<LoadSite> loads, std::vector<PvSite> pvs,
                           std::vector<std::vector<std::size_t>> zones, Base base)
    : n_bus_(n_bus),
      branches_(std::move(branches)),
      loads_(std::move(loads)),
      pvs_(std::move(pvs)),
      base_(base) {
  if (n_bus_ < 2) throw ValidationError("network needs at least 2 buses");
  if (branches_.size() != n_bus_ - 1)
    throw ValidationError("not a tree: expected " + std::to_string(n_bus_ - 1) +
                          " branches, got " + std::to_string(branches_.size()));
  if (!(base_.s_base_mva > 0.0) || !(base_.v_base_kv > 0.0))
    throw ValidationError("base quantities must be positive");

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n_bus_);
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const auto& b = branches_[k];
    if (b.from >= n_bus_ || b.to >= n_bus_)
      throw ValidationError("branch " + std::to_string(k) + " references unknown bus");
    if (b.from == b.to) throw ValidationError("not a tree: self-loop on bus " + std::to_string(b.from));
    if (!(b.r > 0.0) || !(b.x > 0.0))
      throw ValidationError("branch " + std::to_string(k) + " needs r > 0 and x > 0");
    adj[b.from].emplace_back(b.to, k);
    adj[b.to].emplace_back(b.from, k);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());

  parent_.assign(n_bus_, 0);
  parent_branch_.assign(n_bus_, npos);
  std::vector<bool> seen(n_bus_, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = true;
  while (!frontier.empty()) {
    const auto bus = frontier.front();
    frontier.pop();
    bfs_order_.push_back(bus);
    for (const auto& [next, branch] : adj[bus]) {
      if (branch == parent_branch_[bus]) continue;
      if (seen[next]) throw ValidationError("not a tree: cycle detected at bus " + std::to_string(next));
      seen[next] = true;
      parent_[next] = bus;
      parent_branch_[next] = branch;
      frontier.push(next);
    }
  }
  if (bfs_order_.size() != n_bus_) throw ValidationError("not a tree: some buses unreachable from slack");

  for (const auto& l : loads_)
    if (l.bus == 0 || l.bus >= n_bus_) throw ValidationError("load on invalid bus " + std::to_string(l.bus));

  if (pvs_.empty()) throw ValidationError("at least one PV is required");
  pv_at_bus_.assign(n_bus_, npos);
  for (std::size_t a = 0; a < pvs_.size(); ++a) {
    const auto& pv = pvs_[a];
    if (pv.bus == 0 || pv.bus >= n_bus_) throw ValidationError("PV on invalid bus " + std::to_string(pv.bus));
    if (!(pv.s_max > 0.0)) throw ValidationError("PV s_max must be positive");
    if (pv_at_bus_[pv.bus] != npos) throw ValidationError("two PVs on bus " + std::to_string(pv.bus));
    pv_at_bus_[pv.bus] = a;
  }

  std::vector<std::size_t> owner(n_bus_, npos);
  for (std::size_t z = 0; z < zones.size(); ++z) {
    if (zones[z].empty()) throw ValidationError("zone " + std::to_string(z) + " is empty");
    for (auto bus : zones[z]) {
      if (bus == 0 || bus >= n_bus_)
        throw ValidationError("zones must partition buses 1..n_bus-1: bad bus " + std::to_string(bus));
      if (owner[bus] != npos)
        throw ValidationError("zones must be disjoint: bus " + std::to_string(bus) + " appears twice");
      owner[bus] = z;
    }
  }
  for (std::size_t bus = 1; bus < n_bus_; ++bus)
    if (owner[bus] == npos)
      throw ValidationError("zones must partition buses 1..n_bus-1: bus " + std::to_string(bus) + " missing");

  zones_.resize(zones.size());
  for (std::size_t z = 0; z < zones.size(); ++z) {
    zones_[z].node_ids = std::move(zones[z]);
    zones_[z].adjacency = induced_adjacency(branches_, zones_[z].node_ids, n_bus_);
  }
  agent_zone_.resize(pvs_.size());
  agent_local_.resize(pvs_.size());
  for (std::size_t a = 0; a < pvs_.size(); ++a) {
    const auto z = owner[pvs_[a].bus];
    const auto& ids = zones_[z].node_ids;
    const auto local = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), pvs_[a].bus) - ids.begin());
    agent_zone_[a] = z;
    agent_local_[a] = local;
    zones_[z].pv_local_indices.push_back(local);
    zones_[z].agents.push_back(a);
  }
}

std::size_t PowerNetwork::max_zone_size() const {
  std::size_t m = 0;
  for (const auto& z : zones_) m = std::max(m, z.node_ids.size());
  return m;
}

PowerNetwork parse_network(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("network file: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("network file must be a JSON object");

  Base base;
  const auto& jb = require(doc, "base");
  base.s_base_mva = as_number(require(jb, "s_base_mva"), "s_base_mva");
  base.v_base_kv = as_number(require(jb, "v_base_kv"), "v_base_kv");

  const auto n_bus = as_index(require(doc, "buses"), "buses");

  std::vector<Branch> branches;
  for (const auto& row : require(doc, "branches")) {
    if (!row.is_array() || row.size() != 4) throw ParseError("branch rows are [from,to,r,x]");
    branches.push_back({as_index(row[0], "branch from"), as_index(row[1], "branch to"),
                        as_number(row[2], "branch r"), as_number(row[3], "branch x")});
  }

  std::vector<LoadSite> loads;
  for (const auto& row : require(doc, "loads")) {
    if (!row.is_array() || row.size() != 2) throw ParseError("load rows are [bus,profile_id]");
    loads.push_back({as_index(row[0], "load bus"), profile_key(row[1])});
  }

  std::vector<PvSite> pvs;
  for (const auto& row : require(doc, "pvs")) {
    if (!row.is_array() || row.size() != 3) throw ParseError("pv rows are [bus,s_max,profile_id]");
    pvs.push_back({as_index(row[0], "pv bus"), as_number(row[1], "pv s_max"), profile_key(row[2])});
  }

  std::vector<std::vector<std::size_t>> zones;
  for (const auto& row : require(doc, "zones")) {
    if (!row.is_array()) throw ParseError("zones are arrays of bus indices");
    auto& zone = zones.emplace_back();
    for (const auto& bus : row) zone.push_back(as_index(bus, "zone bus"));
  }

  return PowerNetwork(n_bus, std::move(branches), std::move(loads), std::move(pvs), std::move(zones), base);
}

PowerNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_network(buffer.str());
}

BinaryMatrix build_zone_adjacency(const PowerNetwork& network, std::size_t zone_index) {
  return induced_adjacency(network.branches(), network.zones().at(zone_index).node_ids, network.n_bus());
}

std::vector<std::size_t> parent_order(const PowerNetwork& network) { return network.bfs_order(); }

}  // namespace gridflow
