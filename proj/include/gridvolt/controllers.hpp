#pragma once

// Autonomous Volt/VAr + Volt/Watt droop inverters and legacy unity power
// factor inverters, including the one-at-a-time trip/reconnect sampling.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridvolt/core.hpp"

namespace gridvolt {

/// Droop and trip setpoints in volts (line-to-neutral).
struct DroopSettings {
  double v_min{207.0};
  double v_nom{230.0};
  double v_db{248.0};
  double v_qmin{253.0};
  double v_max_autonomous{265.0};
  double v_max_legacy{260.0};
  double v_trip{257.0};
  double q_min_pu{-0.44};
  double p_pu_at_vmax{0.2};
  int trip_window{10};     // u-up, intervals averaged for the trip test
  int reconnect_delay{5};  // u-down, minimum intervals spent disconnected

  void validate() const {
    const bool ordered = v_min < v_nom && v_nom < v_db && v_db < v_qmin && v_qmin < v_trip &&
                         v_trip <= v_max_legacy && v_max_legacy < v_max_autonomous;
    if (!ordered) throw InputError("droop voltages must satisfy Vmin < Vnom < VDB < VQmin < Vtrip <= Vmax,l < Vmax,a");
    if (!(q_min_pu >= -1.0 && q_min_pu <= 0.0)) throw InputError("q_min_pu must lie in [-1, 0]");
    if (!(p_pu_at_vmax >= 0.0 && p_pu_at_vmax <= 1.0)) throw InputError("p_pu_at_vmax must lie in [0, 1]");
    if (trip_window < 1 || reconnect_delay < 0) throw InputError("trip window must be >= 1, reconnect delay >= 0");
  }
};

inline void from_json(const nlohmann::json& j, DroopSettings& s) {
  s.v_min = j.value("v_min", s.v_min);
  s.v_nom = j.value("v_nom", s.v_nom);
  s.v_db = j.value("v_db", s.v_db);
  s.v_qmin = j.value("v_qmin", s.v_qmin);
  s.v_max_autonomous = j.value("v_max_autonomous", s.v_max_autonomous);
  s.v_max_legacy = j.value("v_max_legacy", s.v_max_legacy);
  s.v_trip = j.value("v_trip", s.v_trip);
  s.q_min_pu = j.value("q_min_pu", s.q_min_pu);
  s.p_pu_at_vmax = j.value("p_pu_at_vmax", s.p_pu_at_vmax);
  s.trip_window = j.value("trip_window", s.trip_window);
  s.reconnect_delay = j.value("reconnect_delay", s.reconnect_delay);
}

inline void to_json(nlohmann::json& j, const DroopSettings& s) {
  j = {{"v_min", s.v_min},
       {"v_nom", s.v_nom},
       {"v_db", s.v_db},
       {"v_qmin", s.v_qmin},
       {"v_max_autonomous", s.v_max_autonomous},
       {"v_max_legacy", s.v_max_legacy},
       {"v_trip", s.v_trip},
       {"q_min_pu", s.q_min_pu},
       {"p_pu_at_vmax", s.p_pu_at_vmax},
       {"trip_window", s.trip_window},
       {"reconnect_delay", s.reconnect_delay}};
}

/// Volt/VAr curve: zero up to V_DB, linear to Q_min at V_Qmin, flat beyond.
inline double volt_var_q(double v, const DroopSettings& s) {
  if (v <= s.v_db) return 0.0;
  if (v >= s.v_qmin) return s.q_min_pu;
  return s.q_min_pu * (v - s.v_db) / (s.v_qmin - s.v_db);
}

/// Volt/Watt curve: 1 up to V_Qmin, linear to P(Vmax) at the autonomous cut-off.
/// At or below V_min the inverter exports nothing (under-voltage limit).
inline double volt_watt_p(double v, const DroopSettings& s) {
  if (v <= s.v_min) return 0.0;
  if (v <= s.v_qmin) return 1.0;
  if (v >= s.v_max_autonomous) return s.p_pu_at_vmax;
  const double slope = (s.p_pu_at_vmax - 1.0) / (s.v_max_autonomous - s.v_qmin);
  return 1.0 + slope * (v - s.v_qmin);
}

enum class InverterKind { autonomous, legacy };

struct InverterState {
  InverterKind kind{InverterKind::autonomous};
  bool on{true};
  std::deque<double> voltage_history;  // most recent last, at most trip_window long
  int off_timer{0};
  double rating_kva{5.5};
  double available_kw{0.0};

  double window_mean() const {
    if (voltage_history.empty()) return 0.0;
    return std::accumulate(voltage_history.begin(), voltage_history.end(), 0.0) /
           static_cast<double>(voltage_history.size());
  }
};

struct InverterOutput {
  double p_kw{0.0};
  double q_kvar{0.0};
};

/// Reactive-priority droop output: Q from Volt/VAr, then P limited by both the
/// remaining kVA headroom and the Volt/Watt curve.
inline InverterOutput injected_power(const InverterState& st, double v, const DroopSettings& s) {
  if (!st.on) return {};
  const double q = volt_var_q(v, s) * st.rating_kva;
  const double headroom_sq = st.rating_kva * st.rating_kva - q * q;
  assert(headroom_sq >= 0.0);
  const double p = std::min(std::sqrt(std::max(headroom_sq, 0.0)), st.available_kw * volt_watt_p(v, s));
  return {p, q};
}

/// Unity power factor: all available power while connected and inside
/// (V_min, V_max,l).
inline InverterOutput legacy_power(const InverterState& st, double v, const DroopSettings& s) {
  const bool inside = v > s.v_min && v < s.v_max_legacy;
  return {st.on && inside ? st.available_kw : 0.0, 0.0};
}

inline double cutoff_voltage(const InverterState& st, const DroopSettings& s) {
  return st.kind == InverterKind::legacy ? s.v_max_legacy : s.v_max_autonomous;
}

enum class TripEventKind { trip_avg, trip_instant, reconnect };

inline const char* to_string(TripEventKind k) {
  switch (k) {
    case TripEventKind::trip_avg: return "trip_avg";
    case TripEventKind::trip_instant: return "trip_instant";
    case TripEventKind::reconnect: return "reconnect";
  }
  return "?";
}

struct TripEvent {
  int t{0};
  std::size_t inverter{0};
  TripEventKind kind{TripEventKind::trip_avg};
  bool operator==(const TripEvent&) const = default;
};

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform_canonical(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Index drawn with probability proportional to `weights` (all positive).
inline std::size_t weighted_choice(std::span<const double> weights, std::mt19937_64& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double target = uniform_canonical(rng) * total;
  double run = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    run += weights[i];
    if (target < run) return i;
  }
  return weights.size() - 1;
}

/// Floor applied to squared voltage distances in the sampling weights, V^2.
inline constexpr double kWeightFloor = 1e-6;

inline double disconnect_weight(double v, double v_max) {
  const double d = v_max - v;
  return 1.0 / std::max(d * d, kWeightFloor);
}

inline double reconnect_weight(double v, double v_nom) {
  const double d = v - v_nom;
  return 1.0 / std::max(d * d, kWeightFloor);
}

/// One interval of the trip/reconnect logic against measured voltages:
///  1. every connected inverter at or above its cut-off voltage disconnects;
///  2. of the connected inverters whose window mean exceeds V_trip, one is
///     disconnected, drawn with weight (V_max - V)^-2;
///  3. of the disconnected inverters whose delay has elapsed and whose voltage
///     is below V_trip, one reconnects, drawn with weight (V - V_nom)^-2.
/// Returns the events of this interval in the order they happened.
inline std::vector<TripEvent> update_trip_state(std::vector<InverterState>& fleet, std::span<const double> measured,
                                                const DroopSettings& s, std::mt19937_64& rng, int t = 0) {
  if (measured.size() != fleet.size()) throw InputError("update_trip_state: one voltage per inverter required");
  std::vector<TripEvent> events;

  for (std::size_t i = 0; i < fleet.size(); ++i) {
    auto& inv = fleet[i];
    inv.voltage_history.push_back(measured[i]);
    while (static_cast<int>(inv.voltage_history.size()) > s.trip_window) inv.voltage_history.pop_front();
    if (!inv.on && inv.off_timer > 0) --inv.off_timer;
  }

  std::vector<bool> just_tripped(fleet.size(), false);
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    auto& inv = fleet[i];
    if (inv.on && measured[i] >= cutoff_voltage(inv, s)) {
      inv.on = false;
      inv.off_timer = s.reconnect_delay;
      just_tripped[i] = true;
      events.push_back({t, i, TripEventKind::trip_instant});
    }
  }

  std::vector<std::size_t> candidates;
  std::vector<double> weights;
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    const auto& inv = fleet[i];
    if (inv.on && inv.window_mean() > s.v_trip) {
      candidates.push_back(i);
      weights.push_back(disconnect_weight(measured[i], cutoff_voltage(inv, s)));
    }
  }
  if (!candidates.empty()) {
    const std::size_t i = candidates[weighted_choice(weights, rng)];
    fleet[i].on = false;
    fleet[i].off_timer = s.reconnect_delay;
    just_tripped[i] = true;
    events.push_back({t, i, TripEventKind::trip_avg});
  }

  candidates.clear();
  weights.clear();
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    const auto& inv = fleet[i];
    if (!inv.on && !just_tripped[i] && inv.off_timer == 0 && measured[i] < s.v_trip) {
      candidates.push_back(i);
      weights.push_back(reconnect_weight(measured[i], s.v_nom));
    }
  }
  if (!candidates.empty()) {
    const std::size_t i = candidates[weighted_choice(weights, rng)];
    fleet[i].on = true;
    events.push_back({t, i, TripEventKind::reconnect});
  }
  return events;
}

}  // namespace gridvolt
