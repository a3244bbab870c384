#pragma once

// PV placement scenarios: clustered near/far from the transformer by
// effective impedance, plus seeded uniform random draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gridvolt/core.hpp"
#include "gridvolt/netmodel.hpp"

namespace gridvolt {

enum class Placement { cluster_near, cluster_far, random };

inline const char* to_string(Placement p) {
  switch (p) {
    case Placement::cluster_near: return "cluster_near";
    case Placement::cluster_far: return "cluster_far";
    case Placement::random: return "random";
  }
  return "?";
}

enum class ControlMode { legacy, autonomous, cic, cic_fair };

inline const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::legacy: return "legacy";
    case ControlMode::autonomous: return "autonomous";
    case ControlMode::cic: return "cic";
    case ControlMode::cic_fair: return "cic-fair";
  }
  return "?";
}

inline ControlMode parse_control_mode(const std::string& s) {
  if (s == "legacy") return ControlMode::legacy;
  if (s == "autonomous") return ControlMode::autonomous;
  if (s == "cic") return ControlMode::cic;
  if (s == "cic-fair" || s == "cic_fair") return ControlMode::cic_fair;
  throw InputError("unknown control mode '" + s + "' (expected legacy, autonomous, cic, cic-fair)");
}

struct Scenario {
  int id{0};
  double penetration{0.0};
  Placement placement{Placement::random};
  ControlMode mode{ControlMode::cic};
  std::vector<int> pv_customers;  // customer indices, ascending
};

/// SplitMix64 step; used to derive independent, platform-stable seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline int pv_count(double penetration, std::size_t customers) {
  return static_cast<int>(std::lround(penetration * static_cast<double>(customers)));
}

/// Scenario 0 puts PV on the customers closest to the transformer (smallest
/// effective impedance), scenario 1 on the farthest, scenarios 2.. on seeded
/// uniform draws without replacement.
inline std::vector<Scenario> generate_scenarios(const Network& net, double penetration, int n_random = 18,
                                                std::uint64_t seed = 0) {
  if (!(penetration > 0.0 && penetration <= 1.0)) throw InputError("penetration must lie in (0, 1]");
  if (n_random < 0) throw InputError("number of random scenarios must be non-negative");
  const auto& customers = net.customers();
  const int k = pv_count(penetration, customers.size());
  if (k == 0) throw InputError("penetration " + std::to_string(penetration) + " places no PV system");

  std::vector<std::size_t> order(customers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return net.effective_impedance(customers[a].bus) < net.effective_impedance(customers[b].bus);
  });
  auto pick = [&](auto first, auto last) {
    std::vector<int> ids;
    for (auto it = first; it != last; ++it) ids.push_back(customers[*it].index);
    std::sort(ids.begin(), ids.end());
    return ids;
  };

  std::vector<Scenario> out;
  out.push_back({0, penetration, Placement::cluster_near, ControlMode::cic, pick(order.begin(), order.begin() + k)});
  out.push_back({1, penetration, Placement::cluster_far, ControlMode::cic, pick(order.end() - k, order.end())});
  const auto pen_key = static_cast<std::uint64_t>(std::llround(penetration * 1e6));
  for (int r = 0; r < n_random; ++r) {
    std::mt19937_64 rng(mix_seed(seed ^ mix_seed(pen_key * 1000003ull + static_cast<std::uint64_t>(r))));
    std::vector<std::size_t> pool(customers.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      const auto remaining = pool.size() - static_cast<std::size_t>(i);
      const auto j = static_cast<std::size_t>(i) +
                     std::min(remaining - 1, static_cast<std::size_t>(static_cast<double>(rng() >> 11) * 0x1.0p-53 *
                                                                       static_cast<double>(remaining)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    out.push_back({2 + r, penetration, Placement::random, ControlMode::cic, pick(pool.begin(), pool.begin() + k)});
  }
  return out;
}

}  // namespace gridvolt
