#include <doctest.h>

#include <algorithm>
#include <queue>
#include <set>

#include "gridflow/grid.hpp"

using namespace gridflow;

namespace {

const std::string kDataDir = GRIDFLOW_DATA_DIR;

std::string two_bus_json() {
  return R"({"base": {"s_base_mva": 1, "v_base_kv": 12.66}, "buses": 2,
             "branches": [[0, 1, 0.01, 0.01]], "loads": [[1, "l1"]],
             "pvs": [[1, 0.2, "p1"]], "zones": [[1]]})";
}

// Independent edge scan: every pair of zone members joined by a branch.
std::set<std::pair<std::size_t, std::size_t>> induced_edges(const PowerNetwork& net, const Zone& zone) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t a = 0; a < zone.node_ids.size(); ++a)
    for (std::size_t b = 0; b < zone.node_ids.size(); ++b)
      for (const auto& br : net.branches())
        if ((br.from == zone.node_ids[a] && br.to == zone.node_ids[b]) ||
            (br.to == zone.node_ids[a] && br.from == zone.node_ids[b]))
          edges.insert({a, b});
  return edges;
}

}  // namespace

TEST_CASE("load_network: smallest legal network") {
  const auto net = parse_network(two_bus_json());
  CHECK(net.n_bus() == 2);
  CHECK(net.branches().size() == 1);
  CHECK(net.n_agents() == 1);
  CHECK(net.zones().size() == 1);
}

TEST_CASE("load_network: 14-bus reference feeder") {
  const auto net = load_network(kDataDir + "/feeder14.json");
  CHECK(net.n_bus() == 14);
  CHECK(net.zones().size() == 4);
  CHECK(net.n_agents() == 3);
  CHECK(net.zones()[1].node_ids.size() == 1);
  CHECK(net.zones()[0].node_ids.size() == 4);
  CHECK(net.zones()[2].node_ids.size() == 4);
  // bus 6 hosts a PV and sits in the first zone
  CHECK(net.pv_agent_at(6) != PowerNetwork::npos);
  CHECK(net.agent_zone(net.pv_agent_at(6)) == 0);
}

TEST_CASE("load_network: rejects duplicated branch") {
  const std::string text = R"({"base": {"s_base_mva": 1, "v_base_kv": 1}, "buses": 3,
    "branches": [[0, 1, 0.01, 0.01], [1, 2, 0.01, 0.01], [1, 2, 0.01, 0.01]],
    "loads": [], "pvs": [[2, 0.2, "p"]], "zones": [[1, 2]]})";
  try {
    parse_network(text);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("not a tree") != std::string::npos);
  }
}

TEST_CASE("load_network: cycle with the right branch count") {
  const std::string text = R"({"base": {"s_base_mva": 1, "v_base_kv": 1}, "buses": 4,
    "branches": [[0, 1, 0.01, 0.01], [1, 2, 0.01, 0.01], [2, 1, 0.01, 0.01]],
    "loads": [], "pvs": [[2, 0.2, "p"]], "zones": [[1, 2, 3]]})";
  CHECK_THROWS_AS(parse_network(text), ValidationError);
}

TEST_CASE("load_network: invariant violations are named") {
  auto expect = [](const std::string& text, const std::string& fragment) {
    try {
      parse_network(text);
      FAIL("expected a validation error containing " << fragment);
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  const std::string head = R"({"base": {"s_base_mva": 1, "v_base_kv": 1}, "buses": 3, )";
  expect(head + R"("branches": [[0,1,0.01,0.01],[1,2,0,0.01]], "loads": [], "pvs": [[2,0.2,"p"]], "zones": [[1,2]]})",
         "r > 0");
  expect(head + R"("branches": [[0,1,0.01,0.01],[1,2,0.01,0.01]], "loads": [], "pvs": [[2,0.2,"p"]], "zones": [[1]]})",
         "missing");
  expect(head + R"("branches": [[0,1,0.01,0.01],[1,2,0.01,0.01]], "loads": [], "pvs": [[2,0.2,"p"]], "zones": [[1,2],[2]]})",
         "disjoint");
  expect(head + R"("branches": [[0,1,0.01,0.01],[1,2,0.01,0.01]], "loads": [], "pvs": [], "zones": [[1,2]]})",
         "at least one PV");
}

TEST_CASE("load_network: malformed input is a parse error") {
  CHECK_THROWS_AS(parse_network("{not json"), ParseError);
  CHECK_THROWS_AS(parse_network(R"({"buses": 2})"), ParseError);
  CHECK_THROWS_AS(load_network("/nonexistent/file.json"), ParseError);
}

TEST_CASE("build_zone_adjacency: small cases") {
  SUBCASE("single node") {
    const auto net = parse_network(two_bus_json());
    const auto d = build_zone_adjacency(net, 0);
    CHECK(d.size == 1);
    CHECK(d(0, 0) == 1);
  }
  SUBCASE("path 5-6-7") {
    const std::string text = R"({"base": {"s_base_mva": 1, "v_base_kv": 1}, "buses": 8,
      "branches": [[0,1,0.01,0.01],[1,2,0.01,0.01],[2,3,0.01,0.01],[3,4,0.01,0.01],
                   [4,5,0.01,0.01],[5,6,0.01,0.01],[6,7,0.01,0.01]],
      "loads": [], "pvs": [[6, 0.2, "p"]], "zones": [[1,2,3,4],[5,6,7]]})";
    const auto net = parse_network(text);
    const auto d = build_zone_adjacency(net, 1);
    CHECK(d.data == std::vector<int>{1, 1, 0, 1, 1, 1, 0, 1, 1});
  }
}

TEST_CASE("build_zone_adjacency: reference zones match an independent edge scan") {
  const auto net = load_network(kDataDir + "/feeder14.json");
  for (std::size_t z = 0; z < net.zones().size(); ++z) {
    const auto& zone = net.zones()[z];
    const auto d = build_zone_adjacency(net, z);
    CHECK(d == zone.adjacency);
    const auto edges = induced_edges(net, zone);
    for (std::size_t a = 0; a < d.size; ++a)
      for (std::size_t b = 0; b < d.size; ++b) {
        CHECK(d(a, b) == d(b, a));
        const int expected = (a == b || edges.contains({a, b})) ? 1 : 0;
        CHECK(d(a, b) == expected);
      }
    for (std::size_t k = 0; k < zone.pv_local_indices.size(); ++k) {
      CHECK(zone.pv_local_indices[k] < zone.node_ids.size());
      CHECK(net.pv_agent_at(zone.node_ids[zone.pv_local_indices[k]]) == zone.agents[k]);
    }
  }
  // zone 1: bus 1 feeds bus 5, which feeds 6 and 7
  CHECK(net.zones()[0].node_ids == std::vector<std::size_t>{1, 5, 6, 7});
  CHECK(net.zones()[0].adjacency.data == std::vector<int>{1, 1, 0, 0,  //
                                                          1, 1, 1, 1,  //
                                                          0, 1, 1, 0,  //
                                                          0, 1, 0, 1});
}

TEST_CASE("parent_order") {
  SUBCASE("2-bus") { CHECK(parent_order(parse_network(two_bus_json())) == std::vector<std::size_t>{0, 1}); }
  SUBCASE("path") {
    const std::string text = R"({"base": {"s_base_mva": 1, "v_base_kv": 1}, "buses": 4,
      "branches": [[2,3,0.01,0.01],[0,1,0.01,0.01],[1,2,0.01,0.01]],
      "loads": [], "pvs": [[3, 0.2, "p"]], "zones": [[1,2,3]]})";
    CHECK(parent_order(parse_network(text)) == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("reference: parent before child, every bus once") {
    const auto net = load_network(kDataDir + "/feeder14.json");
    const auto order = parent_order(net);
    REQUIRE(order.size() == net.n_bus());
    std::vector<std::size_t> position(net.n_bus());
    for (std::size_t k = 0; k < order.size(); ++k) position[order[k]] = k;
    CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == net.n_bus());
    for (const auto& b : net.branches()) {
      const auto child = net.parent()[b.to] == b.from ? b.to : b.from;
      CHECK(position[net.parent()[child]] < position[child]);
    }
  }
}

TEST_CASE("tree property: n-1 branches and BFS reaches every bus") {
  const auto net = load_network(kDataDir + "/feeder14.json");
  CHECK(net.branches().size() == net.n_bus() - 1);
  std::vector<std::vector<std::size_t>> adj(net.n_bus());
  for (const auto& b : net.branches()) {
    adj[b.from].push_back(b.to);
    adj[b.to].push_back(b.from);
  }
  std::vector<bool> seen(net.n_bus(), false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 0;
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    ++count;
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        q.push(v);
      }
  }
  CHECK(count == net.n_bus());
}
