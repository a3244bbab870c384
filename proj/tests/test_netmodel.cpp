#include <fstream>
#include <map>
#include <queue>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace gridvolt;
using gvtest::chain;

namespace {

struct CableRow {
  const char* name;
  double r_self, x_self, r_mutual, x_mutual;
};

// Line characteristics table of the source study, LV cable rows.
constexpr CableRow kTable[] = {
    {"ow50", 0.699, 0.149, 0.049, 0.164},  {"ug70", 0.759, 0.243, 0.316, 0.193},
    {"ow95", 0.452, 0.270, 0.049, 0.164},  {"ug150", 0.227, 0.078, 0.070, 0.078},
    {"ug240", 0.072, 0.199, 0.021, 0.048},
};

NetworkErrorKind error_kind(const nlohmann::json& j) {
  try {
    network_from_json(j);
  } catch (const NetworkError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "network was accepted";
  return NetworkErrorKind::invalid_value;
}

nlohmann::json two_bus_json() {
  return nlohmann::json::parse(R"({
    "slack": 0, "transformer_kva": 300,
    "buses": [{"id": 0, "phase": "ABC"}, {"id": 1, "phase": "A", "customer": 0}],
    "lines": [{"from": 0, "to": 1, "length_km": 1.0, "cable": "ow95"}]})");
}

}  // namespace

TEST(CableCatalog, EveryRowMatchesPublishedTable) {
  for (const auto& row : kTable) {
    const auto c = cable_lookup(row.name);
    EXPECT_EQ(c.r_self, row.r_self) << row.name;
    EXPECT_EQ(c.x_self, row.x_self) << row.name;
    EXPECT_EQ(c.r_mutual, row.r_mutual) << row.name;
    EXPECT_EQ(c.x_mutual, row.x_mutual) << row.name;
  }
}

TEST(CableCatalog, UnknownNameListsValidOnes) {
  try {
    cable_lookup("ow999");
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("ow999"), std::string::npos);
    for (const auto& row : kTable) EXPECT_NE(msg.find(row.name), std::string::npos);
  }
}

TEST(CableCatalog, PhaseMatrixHasSelfOnDiagonal) {
  const auto z = cable_lookup("ug70").matrix_per_km();
  EXPECT_EQ(z(1, 1), Complex(0.759, 0.243));
  EXPECT_EQ(z(0, 2), Complex(0.316, 0.193));
  EXPECT_TRUE(z.isApprox(z.transpose()));
}

TEST(CableCatalog, InvalidImpedanceRejected) {
  PhaseImpedance c{"bad", 1.0, 0.1, 0.1, 0.2, 0.0};
  EXPECT_THROW(c.validate(), InputError);  // mutual above self
  c = {"bad", 1.0, -0.1, 0.1, 0.0, 0.0};
  EXPECT_THROW(c.validate(), InputError);
}

TEST(LoadNetwork, TwoBusFile) {
  const Network net = network_from_json(two_bus_json());
  EXPECT_EQ(net.bus_count(), 2u);
  EXPECT_EQ(net.lines().size(), 1u);
  ASSERT_EQ(net.customers().size(), 1u);
  EXPECT_EQ(net.customers()[0].phases, PhaseSet::single(Phase::A));
  EXPECT_EQ(net.lines()[0].cable, cable_lookup("ow95"));
}

TEST(LoadNetwork, DuplicatedLineIsACycle) {
  auto j = two_bus_json();
  j["buses"].push_back({{"id", 2}, {"phase", "ABC"}});
  j["lines"].push_back({{"from", 1}, {"to", 2}, {"length_km", 0.1}, {"cable", "ow95"}, {"phases", "A"}});
  j["lines"].push_back({{"from", 2}, {"to", 1}, {"length_km", 0.1}, {"cable", "ow95"}, {"phases", "A"}});
  j["buses"][2]["phase"] = "A";
  EXPECT_EQ(error_kind(j), NetworkErrorKind::cycle);
}

TEST(LoadNetwork, DistinctDiagnostics) {
  auto dup = two_bus_json();
  dup["buses"].push_back({{"id", 1}, {"phase", "A"}});
  EXPECT_EQ(error_kind(dup), NetworkErrorKind::duplicate_bus);

  auto island = two_bus_json();
  island["buses"].push_back({{"id", 7}, {"phase", "ABC"}});
  EXPECT_EQ(error_kind(island), NetworkErrorKind::disconnected);

  auto cable = two_bus_json();
  cable["lines"][0]["cable"] = "copper9000";
  EXPECT_EQ(error_kind(cable), NetworkErrorKind::unknown_cable);

  auto loop = two_bus_json();
  loop["lines"][0]["to"] = 0;
  EXPECT_EQ(error_kind(loop), NetworkErrorKind::self_loop);

  auto phase = two_bus_json();
  phase["lines"][0]["phases"] = "B";
  EXPECT_EQ(error_kind(phase), NetworkErrorKind::phase_mismatch);

  auto cust = two_bus_json();
  cust["buses"].push_back({{"id", 2}, {"phase", "A"}, {"customer", 0}});
  cust["lines"].push_back({{"from", 1}, {"to", 2}, {"length_km", 0.1}, {"cable", "ow95"}, {"phases", "A"}});
  EXPECT_EQ(error_kind(cust), NetworkErrorKind::duplicate_customer);

  auto slack = two_bus_json();
  slack["slack"] = 5;
  EXPECT_EQ(error_kind(slack), NetworkErrorKind::no_slack);
}

TEST(LoadNetwork, MissingFileNamesPath) {
  try {
    load_network("/nonexistent/feeder.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/feeder.json"), std::string::npos);
  }
}

TEST(LoadNetwork, CustomCableOverridesCatalog) {
  auto j = two_bus_json();
  j["cables"] = {{{"label", "mine"}, {"r_self", 0.3}, {"x_self", 0.1}, {"r_mutual", 0.05}, {"x_mutual", 0.02}}};
  j["lines"][0]["cable"] = "mine";
  const Network net = network_from_json(j);
  EXPECT_EQ(net.lines()[0].cable.r_self, 0.3);
  const Network again = network_from_json(network_to_json(net));
  EXPECT_EQ(again.lines()[0].cable, net.lines()[0].cable);
}

TEST(LoadNetwork, Fixture114CountsMatchIndependentParse) {
  const std::string path = std::string(GRIDVOLT_DATA_DIR) + "/feeder114.json";
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  const auto raw = nlohmann::json::parse(in);
  std::set<long long> ids;
  std::size_t customers = 0;
  for (const auto& b : raw["buses"]) {
    ids.insert(b["id"].get<long long>());
    if (b.contains("customer") && !b["customer"].is_null()) ++customers;
  }

  const Network net = load_network(path);
  EXPECT_EQ(raw["buses"].size(), 114u);
  EXPECT_EQ(raw["lines"].size(), 113u);
  EXPECT_EQ(net.bus_count(), ids.size());
  EXPECT_EQ(net.lines().size(), raw["lines"].size());
  EXPECT_EQ(net.customers().size(), customers);
}

TEST(GenerateFeeder, MinimalCase) {
  const Network net = generate_feeder({2, 1.0, "ow95", 1, 0});
  EXPECT_EQ(net.bus_count(), 2u);
  ASSERT_EQ(net.lines().size(), 1u);
  EXPECT_EQ(net.lines()[0].length_km, 1.0);
  EXPECT_THROW(generate_feeder({1, 1.0, "ow95", 1, 0}), InputError);
}

TEST(GenerateFeeder, DeterministicFromSeed) {
  const FeederSpec spec{30, 0.04, "ow95", 1, 7};
  EXPECT_EQ(network_to_json(generate_feeder(spec)), network_to_json(generate_feeder(spec)));
  FeederSpec other = spec;
  other.seed = 8;
  EXPECT_NE(network_to_json(generate_feeder(spec)), network_to_json(generate_feeder(other)));
}

TEST(GenerateFeeder, ThirtyBusEffectiveImpedanceGrowsAlongSpine) {
  const Network net = generate_feeder({30, 0.04, "ow95", 1, 7});
  EXPECT_EQ(net.bus_count(), 30u);
  EXPECT_EQ(net.lines().size(), 29u);

  // Independent sum of segment self-impedance magnitudes along each path.
  const double seg = std::abs(Complex(0.452, 0.270)) * 0.04;
  std::map<BusId, BusId> parent;
  for (const auto& l : net.lines()) parent[l.to_bus] = l.from_bus;
  for (std::size_t i = 1; i < net.bus_count(); ++i) {
    int hops = 0;
    for (BusId b = net.buses()[i].id; b != net.slack_id(); b = parent.at(b)) ++hops;
    EXPECT_NEAR(net.effective_impedance(i), hops * seg, 1e-12);
    EXPECT_GT(net.effective_impedance(i), net.effective_impedance(net.parent(i)));
  }
  // Spine buses carry ids 1..k consecutively.
  for (BusId id = 2; parent.count(id) && parent.at(id) == id - 1; ++id)
    EXPECT_GT(net.effective_impedance(net.position(id)), net.effective_impedance(net.position(id - 1)));
}

TEST(GenerateFeeder, CustomersRoundRobinOverPhases) {
  const Network net = generate_feeder({13, 0.04, "ow95", 1, 3});
  for (const auto& c : net.customers()) EXPECT_EQ(c.phases, PhaseSet::single(kAllPhases[c.index % 3]));
}

TEST(NetworkInvariants, TreeReachableAndImpedanceOrdered) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network net = generate_feeder({static_cast<int>(5 + seed * 3), 0.03, "ug150", 1 + static_cast<int>(seed % 3), seed});
    EXPECT_EQ(net.lines().size(), net.bus_count() - 1);
    std::vector<bool> seen(net.bus_count(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 0;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      ++count;
      for (auto c : net.children(u)) {
        ASSERT_FALSE(seen[c]);
        seen[c] = true;
        q.push(c);
      }
    }
    EXPECT_EQ(count, net.bus_count());
    EXPECT_EQ(net.effective_impedance(0), 0.0);
    for (std::size_t i = 1; i < net.bus_count(); ++i)
      EXPECT_GT(net.effective_impedance(i), net.effective_impedance(net.parent(i)));
  }
}

TEST(NetworkInvariants, InputOrderDoesNotMatter) {
  auto j = network_to_json(chain(4));
  auto shuffled = j;
  std::reverse(shuffled["buses"].begin(), shuffled["buses"].end());
  std::reverse(shuffled["lines"].begin(), shuffled["lines"].end());
  EXPECT_EQ(network_to_json(network_from_json(shuffled)), j);
}

TEST(NetworkInvariants, BalancedCustomersSpanTheirBus) {
  const Network net = generate_feeder({10, 0.04, "ow95", 1, 1}).balanced_customers();
  for (const auto& c : net.customers()) EXPECT_EQ(c.phases, PhaseSet::all());
}

TEST(NetworkInvariants, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gridvolt_net_rt";
  std::filesystem::create_directories(dir);
  const Network net = generate_feeder({12, 0.05, "ug240", 2, 5});
  save_network(net, dir / "n.json");
  EXPECT_EQ(network_to_json(load_network(dir / "n.json")), network_to_json(net));
}
