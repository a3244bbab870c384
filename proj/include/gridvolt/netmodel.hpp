#pragma once

// Radial three-phase feeder model: cable catalog, validated topology,
// JSON ingestion and a seeded synthetic feeder generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridvolt/core.hpp"

namespace gridvolt {

using Matrix3c = Eigen::Matrix3cd;

/// Per-length phase impedance of a cable type, Ohm/km.
struct PhaseImpedance {
  std::string label;
  double cross_section_mm2{0.0};
  double r_self{0.0};
  double x_self{0.0};
  double r_mutual{0.0};
  double x_mutual{0.0};

  bool operator==(const PhaseImpedance&) const = default;

  void validate() const {
    auto bad = [&](const std::string& what) {
      return InputError("cable '" + label + "': " + what);
    };
    for (double v : {r_self, x_self, r_mutual, x_mutual})
      if (!std::isfinite(v)) throw bad("non-finite impedance value");
    if (r_self <= 0.0 || r_mutual <= 0.0) throw bad("resistances must be positive");
    if (x_self < 0.0 || x_mutual < 0.0) throw bad("reactances must be non-negative");
    if (r_mutual > r_self) throw bad("mutual resistance exceeds self resistance");
  }

  /// 3x3 phase impedance matrix per km (self on the diagonal, mutual elsewhere).
  Matrix3c matrix_per_km() const {
    const Complex self(r_self, x_self);
    const Complex mutual(r_mutual, x_mutual);
    Matrix3c z;
    z.setConstant(mutual);
    z.diagonal().setConstant(self);
    return z;
  }
};

namespace cables {

// Kron-reduced values as published for common LV conductors.
inline const std::vector<PhaseImpedance>& catalog() {
  static const std::vector<PhaseImpedance> rows{
      {"ow50", 50.0, 0.699, 0.149, 0.049, 0.164},
      {"ug70", 70.0, 0.759, 0.243, 0.316, 0.193},
      {"ow95", 95.0, 0.452, 0.270, 0.049, 0.164},
      {"ug150", 150.0, 0.227, 0.078, 0.070, 0.078},
      {"ug240", 240.0, 0.072, 0.199, 0.021, 0.048},
  };
  return rows;
}

inline std::string valid_names(const std::vector<PhaseImpedance>& table) {
  std::string names;
  for (const auto& c : table) {
    if (!names.empty()) names += ", ";
    names += c.label;
  }
  return names;
}

inline const PhaseImpedance& lookup(std::string_view name, const std::vector<PhaseImpedance>& table) {
  for (const auto& c : table)
    if (c.label == name) return c;
  throw InputError("unknown cable '" + std::string(name) + "' (valid: " + valid_names(table) + ")");
}

}  // namespace cables

inline PhaseImpedance cable_lookup(std::string_view name) { return cables::lookup(name, cables::catalog()); }

struct Bus {
  BusId id{0};
  PhaseSet phases{PhaseSet::all()};
  std::optional<int> customer;
};

struct LineSegment {
  BusId from_bus{0};
  BusId to_bus{0};
  double length_km{0.0};
  PhaseImpedance cable;
  PhaseSet phases{PhaseSet::all()};

  /// Series impedance matrix in Ohm; rows/columns of absent phases are zero.
  Matrix3c impedance_ohm() const {
    Matrix3c z = cable.matrix_per_km() * length_km;
    for (Phase p : kAllPhases)
      if (!phases.contains(p)) {
        z.row(index(p)).setZero();
        z.col(index(p)).setZero();
      }
    return z;
  }
};

/// A customer connection point. Multi-phase buses host balanced customers.
struct Customer {
  int index{0};
  std::size_t bus{0};  // position in Network::buses()
  PhaseSet phases;
};

enum class NetworkErrorKind { duplicate_bus, unknown_bus, unknown_cable, self_loop, cycle, disconnected, no_slack, phase_mismatch, duplicate_customer, invalid_value };

class NetworkError : public InputError {
 public:
  NetworkError(NetworkErrorKind kind, const std::string& what) : InputError(what), kind_(kind) {}
  NetworkErrorKind kind() const noexcept { return kind_; }

 private:
  NetworkErrorKind kind_;
};

/// Immutable radial feeder. Buses are stored in breadth-first order from the
/// slack (index 0); children are visited in ascending bus id, so the internal
/// order does not depend on the order buses were supplied in. Line k feeds
/// bus k + 1 and is oriented parent -> child.
class Network {
 public:
  static Network build(std::vector<Bus> buses, std::vector<LineSegment> lines, BusId slack, double transformer_kva,
                       PerUnitBase base = {}) {
    using K = NetworkErrorKind;
    if (!(transformer_kva > 0.0) || !std::isfinite(transformer_kva))
      throw NetworkError(K::invalid_value, "transformer rating must be positive");
    if (!(base.voltage_v > 0.0) || !(base.power_kva > 0.0))
      throw NetworkError(K::invalid_value, "per-unit bases must be positive");

    std::map<BusId, std::size_t> input_pos;
    for (std::size_t i = 0; i < buses.size(); ++i) {
      if (!input_pos.emplace(buses[i].id, i).second)
        throw NetworkError(K::duplicate_bus, "duplicate bus id " + std::to_string(buses[i].id));
      if (buses[i].phases.empty())
        throw NetworkError(K::phase_mismatch, "bus " + std::to_string(buses[i].id) + " has no phases");
    }
    if (!input_pos.contains(slack))
      throw NetworkError(K::no_slack, "slack bus " + std::to_string(slack) + " is not in the bus list");
    {
      std::map<int, BusId> seen;
      for (const auto& b : buses)
        if (b.customer && !seen.emplace(*b.customer, b.id).second)
          throw NetworkError(K::duplicate_customer, "customer index " + std::to_string(*b.customer) + " used twice");
    }

    // Union-find over input positions to diagnose cycles before connectivity.
    std::vector<std::size_t> root(buses.size());
    std::iota(root.begin(), root.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (root[x] != x) x = root[x] = root[root[x]];
      return x;
    };
    std::vector<std::vector<std::size_t>> adjacency(buses.size());
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const auto& l = lines[k];
      auto f = input_pos.find(l.from_bus), t = input_pos.find(l.to_bus);
      if (f == input_pos.end() || t == input_pos.end())
        throw NetworkError(K::unknown_bus, "line " + std::to_string(k) + " references unknown bus " +
                                               std::to_string(f == input_pos.end() ? l.from_bus : l.to_bus));
      if (l.from_bus == l.to_bus)
        throw NetworkError(K::self_loop, "line " + std::to_string(k) + " connects bus " + std::to_string(l.from_bus) +
                                             " to itself");
      if (!(l.length_km > 0.0) || !std::isfinite(l.length_km))
        throw NetworkError(K::invalid_value, "line " + std::to_string(k) + " has non-positive length");
      if (l.phases.empty()) throw NetworkError(K::phase_mismatch, "line " + std::to_string(k) + " has no phases");
      try {
        l.cable.validate();
      } catch (const InputError& e) {
        throw NetworkError(K::invalid_value, e.what());
      }
      const auto a = find(f->second), b = find(t->second);
      if (a == b)
        throw NetworkError(K::cycle, "line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus) +
                                         " closes a cycle; network must be radial");
      root[a] = b;
      adjacency[f->second].push_back(k);
      adjacency[t->second].push_back(k);
    }

    Network net;
    net.base_ = base;
    net.transformer_kva_ = transformer_kva;
    net.slack_id_ = slack;

    // Breadth-first layout from the slack.
    std::vector<bool> visited(buses.size(), false);
    std::vector<std::size_t> order{input_pos.at(slack)};
    std::vector<std::optional<std::size_t>> via_line{std::nullopt};
    visited[order.front()] = true;
    for (std::size_t head = 0; head < order.size(); ++head) {
      const std::size_t u = order[head];
      std::vector<std::pair<BusId, std::size_t>> next;
      for (std::size_t k : adjacency[u]) {
        const auto& l = lines[k];
        const std::size_t v = input_pos.at(l.from_bus) == u ? input_pos.at(l.to_bus) : input_pos.at(l.from_bus);
        if (!visited[v]) next.emplace_back(buses[v].id, k);
      }
      std::sort(next.begin(), next.end());
      for (auto [id, k] : next) {
        const std::size_t v = input_pos.at(id);
        visited[v] = true;
        order.push_back(v);
        via_line.push_back(k);
      }
    }
    if (order.size() != buses.size()) {
      for (std::size_t i = 0; i < buses.size(); ++i)
        if (!visited[i])
          throw NetworkError(K::disconnected, "bus " + std::to_string(buses[i].id) + " is not reachable from slack " +
                                                  std::to_string(slack));
    }

    std::map<BusId, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) {
      net.buses_.push_back(buses[order[i]]);
      pos[buses[order[i]].id] = i;
    }
    net.parent_.assign(order.size(), 0);
    net.children_.assign(order.size(), {});
    net.energized_.assign(order.size(), PhaseSet::all());
    net.effective_impedance_.assign(order.size(), 0.0);
    for (std::size_t i = 1; i < order.size(); ++i) {
      LineSegment l = lines[*via_line[i]];
      const std::size_t child = i;
      const std::size_t parent = pos.at(l.from_bus) == child ? pos.at(l.to_bus) : pos.at(l.from_bus);
      l.from_bus = net.buses_[parent].id;
      l.to_bus = net.buses_[child].id;
      if (!net.energized_[parent].contains(l.phases))
        throw NetworkError(K::phase_mismatch, "line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus) +
                                                  " carries phases " + l.phases.to_string() +
                                                  " not present upstream");
      net.parent_[child] = parent;
      net.children_[parent].push_back(child);
      net.energized_[child] = l.phases;
      net.effective_impedance_[child] =
          net.effective_impedance_[parent] + std::abs(Complex(l.cable.r_self, l.cable.x_self)) * l.length_km;
      net.lines_.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < net.buses_.size(); ++i) {
      const auto& b = net.buses_[i];
      if (!net.energized_[i].contains(b.phases))
        throw NetworkError(K::phase_mismatch, "bus " + std::to_string(b.id) + " connects phases " +
                                                  b.phases.to_string() + " but is fed by " +
                                                  net.energized_[i].to_string());
      if (b.customer) {
        if (i == 0) throw NetworkError(K::invalid_value, "slack bus cannot host a customer");
        net.customers_.push_back({*b.customer, i, b.phases});
      }
    }
    std::sort(net.customers_.begin(), net.customers_.end(),
              [](const Customer& a, const Customer& b) { return a.index < b.index; });
    return net;
  }

  std::size_t bus_count() const noexcept { return buses_.size(); }
  const std::vector<Bus>& buses() const noexcept { return buses_; }
  const std::vector<LineSegment>& lines() const noexcept { return lines_; }
  const std::vector<Customer>& customers() const noexcept { return customers_; }
  BusId slack_id() const noexcept { return slack_id_; }
  double transformer_kva() const noexcept { return transformer_kva_; }
  const PerUnitBase& base() const noexcept { return base_; }

  std::size_t parent(std::size_t bus) const { return parent_.at(bus); }
  const std::vector<std::size_t>& children(std::size_t bus) const { return children_.at(bus); }
  /// Line feeding `bus` (bus > 0).
  const LineSegment& feeder_line(std::size_t bus) const { return lines_.at(bus - 1); }
  /// Phases present at a bus (those carried by its incoming line; all at the slack).
  PhaseSet energized(std::size_t bus) const { return energized_.at(bus); }
  /// Cumulative series self-impedance magnitude from the slack, Ohm.
  double effective_impedance(std::size_t bus) const { return effective_impedance_.at(bus); }

  std::size_t position(BusId id) const {
    for (std::size_t i = 0; i < buses_.size(); ++i)
      if (buses_[i].id == id) return i;
    throw InputError("unknown bus id " + std::to_string(id));
  }

  /// Series impedance of line k in per-unit.
  Matrix3c line_impedance_pu(std::size_t k) const { return lines_.at(k).impedance_ohm() / base_.impedance_ohm(); }

  /// Copy in which every customer connects to all phases energized at its bus,
  /// so customer power splits evenly over the phases.
  Network balanced_customers() const {
    std::vector<Bus> buses = buses_;
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].customer) buses[i].phases = energized_[i];
    return build(std::move(buses), lines_, slack_id_, transformer_kva_, base_);
  }

  /// Single-phase equivalent: every line and customer collapsed onto phase A.
  Network single_phase_equivalent() const {
    std::vector<Bus> buses = buses_;
    std::vector<LineSegment> lines = lines_;
    for (auto& b : buses) b.phases = PhaseSet::single(Phase::A);
    for (auto& l : lines) l.phases = PhaseSet::single(Phase::A);
    return build(std::move(buses), std::move(lines), slack_id_, transformer_kva_, base_);
  }

 private:
  Network() = default;

  std::vector<Bus> buses_;
  std::vector<LineSegment> lines_;
  std::vector<Customer> customers_;
  std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<PhaseSet> energized_;
  std::vector<double> effective_impedance_;
  BusId slack_id_{0};
  double transformer_kva_{0.0};
  PerUnitBase base_;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline PhaseSet parse_phase_set(const std::string& s) {
  if (s == "ABC" || s == "abc" || s == "three-phase" || s == "3") return PhaseSet::all();
  std::uint8_t bits = 0;
  for (char ch : s) {
    switch (ch) {
      case 'A': case 'a': bits |= 1u; break;
      case 'B': case 'b': bits |= 2u; break;
      case 'C': case 'c': bits |= 4u; break;
      default: throw InputError("invalid phase specifier '" + s + "'");
    }
  }
  if (bits == 0) throw InputError("empty phase specifier");
  return PhaseSet(bits);
}

inline std::string phase_set_json(PhaseSet p) { return p == PhaseSet::all() ? "ABC" : p.to_string(); }

inline Network network_from_json(const nlohmann::json& j) {
  try {
    std::vector<PhaseImpedance> table = cables::catalog();
    if (j.contains("cables")) {
      for (const auto& c : j.at("cables")) {
        PhaseImpedance row{c.at("label").get<std::string>(), c.value("cross_section_mm2", 0.0),
                           c.at("r_self").get<double>(),      c.at("x_self").get<double>(),
                           c.at("r_mutual").get<double>(),    c.at("x_mutual").get<double>()};
        row.validate();
        auto it = std::find_if(table.begin(), table.end(), [&](const auto& t) { return t.label == row.label; });
        if (it != table.end()) *it = row;
        else table.push_back(row);
      }
    }
    std::vector<Bus> buses;
    for (const auto& b : j.at("buses")) {
      Bus bus;
      bus.id = b.at("id").get<BusId>();
      bus.phases = parse_phase_set(b.value("phase", std::string("ABC")));
      if (b.contains("customer") && !b.at("customer").is_null()) bus.customer = b.at("customer").get<int>();
      buses.push_back(bus);
    }
    std::vector<LineSegment> lines;
    for (const auto& l : j.at("lines")) {
      LineSegment seg;
      seg.from_bus = l.at("from").get<BusId>();
      seg.to_bus = l.at("to").get<BusId>();
      seg.length_km = l.at("length_km").get<double>();
      const auto name = l.at("cable").get<std::string>();
      try {
        seg.cable = cables::lookup(name, table);
      } catch (const InputError& e) {
        throw NetworkError(NetworkErrorKind::unknown_cable, e.what());
      }
      seg.phases = parse_phase_set(l.value("phases", std::string("ABC")));
      lines.push_back(std::move(seg));
    }
    PerUnitBase base;
    base.voltage_v = j.value("base_voltage_v", 230.0);
    base.power_kva = j.value("base_power_kva", 100.0);
    return Network::build(std::move(buses), std::move(lines), j.at("slack").get<BusId>(),
                          j.value("transformer_kva", 300.0), base);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("network JSON: ") + e.what());
  }
}

inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["slack"] = net.slack_id();
  j["transformer_kva"] = net.transformer_kva();
  j["base_voltage_v"] = net.base().voltage_v;
  j["base_power_kva"] = net.base().power_kva;
  auto& buses = j["buses"] = nlohmann::json::array();
  for (const auto& b : net.buses()) {
    nlohmann::json jb{{"id", b.id}, {"phase", phase_set_json(b.phases)}};
    jb["customer"] = b.customer ? nlohmann::json(*b.customer) : nlohmann::json(nullptr);
    buses.push_back(std::move(jb));
  }
  auto& lines = j["lines"] = nlohmann::json::array();
  std::vector<PhaseImpedance> custom;
  for (const auto& l : net.lines()) {
    lines.push_back({{"from", l.from_bus}, {"to", l.to_bus}, {"length_km", l.length_km}, {"cable", l.cable.label},
                     {"phases", phase_set_json(l.phases)}});
    const auto& cat = cables::catalog();
    const bool stock = std::any_of(cat.begin(), cat.end(), [&](const auto& c) { return c == l.cable; });
    const bool listed = std::any_of(custom.begin(), custom.end(), [&](const auto& c) { return c == l.cable; });
    if (!stock && !listed) custom.push_back(l.cable);
  }
  if (!custom.empty()) {
    auto& cj = j["cables"] = nlohmann::json::array();
    for (const auto& c : custom)
      cj.push_back({{"label", c.label}, {"cross_section_mm2", c.cross_section_mm2}, {"r_self", c.r_self},
                    {"x_self", c.x_self}, {"r_mutual", c.r_mutual}, {"x_mutual", c.x_mutual}});
  }
  return j;
}

inline Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open network file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("network file '" + path.string() + "': " + e.what());
  }
  return network_from_json(j);
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write network file '" + path.string() + "'");
  out << network_to_json(net).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic feeders
// ---------------------------------------------------------------------------

struct FeederSpec {
  int n_buses{30};
  double spacing_km{0.04};
  std::string cable{"ow95"};
  int customers_per_bus{1};
  std::uint64_t seed{0};
  double transformer_kva{300.0};
  double lateral_probability{0.25};
};

/// Spine plus short laterals. Each pole bus carries `customers_per_bus`
/// customers: one on the pole itself, the rest on service buses hanging off
/// it. Customers are assigned to phases A, B, C round-robin. Buses on the spine
/// have ids 1..k in order; lateral buses continue the numbering.
inline Network generate_feeder(const FeederSpec& spec) {
  if (spec.n_buses < 2) throw InputError("generate_feeder: need at least 2 buses");
  if (!(spec.spacing_km > 0.0)) throw InputError("generate_feeder: spacing must be positive");
  if (spec.customers_per_bus < 0) throw InputError("generate_feeder: customers_per_bus must be >= 0");
  const PhaseImpedance cable = cable_lookup(spec.cable);

  std::mt19937_64 rng(spec.seed);
  auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  std::vector<Bus> buses{{0, PhaseSet::all(), std::nullopt}};
  std::vector<LineSegment> lines;
  int next_customer = 0;
  auto add_bus = [&](BusId parent, bool with_customer) {
    const BusId id = static_cast<BusId>(buses.size());
    Bus b{id, PhaseSet::all(), std::nullopt};
    if (with_customer) {
      b.customer = next_customer;
      b.phases = PhaseSet::single(kAllPhases[next_customer % 3]);
      ++next_customer;
    }
    buses.push_back(b);
    lines.push_back({parent, id, spec.spacing_km, cable, PhaseSet::all()});
    return id;
  };

  std::vector<BusId> spine{0};
  const int n = spec.n_buses;
  while (static_cast<int>(buses.size()) < n) {
    // Laterals branch from an existing non-slack spine pole.
    BusId parent = spine.back();
    if (spine.size() > 2 && uniform01() < spec.lateral_probability) {
      const auto pick = 1 + static_cast<std::size_t>(uniform01() * static_cast<double>(spine.size() - 1));
      parent = spine[std::min(pick, spine.size() - 1)];
    }
    const BusId pole = add_bus(parent, spec.customers_per_bus > 0);
    if (parent == spine.back()) spine.push_back(pole);
    for (int c = 1; c < spec.customers_per_bus && static_cast<int>(buses.size()) < n; ++c) add_bus(pole, true);
  }
  return Network::build(std::move(buses), std::move(lines), 0, spec.transformer_kva);
}

}  // namespace gridvolt
