#include <array>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gridvolt/controllers.hpp"

using namespace gridvolt;

namespace {

const DroopSettings kS{};

InverterState inverter(double available_kw, InverterKind kind = InverterKind::autonomous) {
  InverterState st;
  st.kind = kind;
  st.available_kw = available_kw;
  return st;
}

std::vector<InverterState> fleet_of(std::size_t n, InverterKind kind = InverterKind::autonomous) {
  return std::vector<InverterState>(n, inverter(5.0, kind));
}

}  // namespace

TEST(DroopCurves, SetpointTableAnchors) {
  EXPECT_EQ(volt_var_q(207.0, kS), 0.0);
  EXPECT_EQ(volt_watt_p(207.0, kS), 0.0);
  EXPECT_EQ(legacy_power(inverter(5.0, InverterKind::legacy), 207.0, kS).p_kw, 0.0);
  EXPECT_EQ(volt_var_q(230.0, kS), 0.0);
  EXPECT_EQ(volt_watt_p(230.0, kS), 1.0);
  EXPECT_EQ(volt_var_q(248.0, kS), 0.0);
  EXPECT_EQ(volt_var_q(253.0, kS), -0.44);
  EXPECT_EQ(volt_watt_p(253.0, kS), 1.0);
  EXPECT_EQ(legacy_power(inverter(5.0, InverterKind::legacy), 260.0, kS).p_kw, 0.0);
  EXPECT_EQ(volt_var_q(265.0, kS), -0.44);
  EXPECT_EQ(volt_watt_p(265.0, kS), 0.2);
}

TEST(DroopCurves, MidpointsOfLinearSegments) {
  EXPECT_NEAR(volt_var_q(250.5, kS), -0.22, 1e-15);
  EXPECT_NEAR(volt_watt_p(259.0, kS), 0.6, 1e-15);
}

TEST(DroopCurves, TripRowMeansNoOutputOnceTripped) {
  // A tripped inverter produces nothing in either mode.
  auto st = inverter(5.0);
  st.on = false;
  const auto a = injected_power(st, 257.0, kS);
  EXPECT_EQ(a.p_kw, 0.0);
  EXPECT_EQ(a.q_kvar, 0.0);
  st.kind = InverterKind::legacy;
  EXPECT_EQ(legacy_power(st, 257.0, kS).p_kw, 0.0);
}

TEST(DroopCurves, MonotoneAboveUnderVoltageLimit) {
  double q_prev = volt_var_q(207.5, kS), p_prev = volt_watt_p(207.5, kS);
  for (double v = 207.5; v <= 280.0; v += 0.01) {
    const double q = volt_var_q(v, kS), p = volt_watt_p(v, kS);
    EXPECT_LE(q, q_prev + 1e-15) << v;
    EXPECT_LE(p, p_prev + 1e-15) << v;
    q_prev = q;
    p_prev = p;
  }
}

TEST(DroopCurves, ContinuousAtBreakpoints) {
  for (double v : {248.0, 253.0, 265.0}) {
    EXPECT_NEAR(volt_var_q(v - 1e-9, kS), volt_var_q(v + 1e-9, kS), 1e-7) << v;
    EXPECT_NEAR(volt_watt_p(v - 1e-9, kS), volt_watt_p(v + 1e-9, kS), 1e-7) << v;
  }
}

TEST(InjectedPower, ReactivePriorityExamples) {
  const auto st = inverter(5.0);
  auto out = injected_power(st, 250.0, kS);
  EXPECT_NEAR(out.q_kvar, -0.968, 1e-12);
  EXPECT_NEAR(out.p_kw, 5.0, 1e-12);
  out = injected_power(st, 259.0, kS);
  EXPECT_NEAR(out.q_kvar, -2.42, 1e-12);
  EXPECT_NEAR(out.p_kw, 3.0, 1e-12);
}

TEST(InjectedPower, HeadroomBindsWhenAvailableExceedsRating) {
  const auto out = injected_power(inverter(5.5), 253.0, kS);
  EXPECT_NEAR(out.p_kw, std::sqrt(5.5 * 5.5 - 2.42 * 2.42), 1e-12);
}

TEST(InjectedPower, NeverExceedsRating) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(200.0, 275.0), pav(0.0, 8.0);
  for (int k = 0; k < 20000; ++k) {
    const auto out = injected_power(inverter(pav(rng)), v(rng), kS);
    EXPECT_LE(out.p_kw * out.p_kw + out.q_kvar * out.q_kvar, 5.5 * 5.5 + 1e-9);
    EXPECT_GE(out.p_kw, 0.0);
    EXPECT_LE(out.q_kvar, 0.0);
  }
}

TEST(LegacyPower, UnityPowerFactor) {
  auto st = inverter(5.0, InverterKind::legacy);
  const auto out = legacy_power(st, 245.0, kS);
  EXPECT_EQ(out.p_kw, 5.0);
  EXPECT_EQ(out.q_kvar, 0.0);
  st.on = false;
  EXPECT_EQ(legacy_power(st, 245.0, kS).p_kw, 0.0);
}

TEST(DroopSettingsTest, OrderingValidated) {
  EXPECT_NO_THROW(kS.validate());
  DroopSettings s;
  s.v_trip = 261.0;  // above the legacy cut-off
  EXPECT_THROW(s.validate(), InputError);
  s = {};
  s.q_min_pu = 0.1;
  EXPECT_THROW(s.validate(), InputError);
}

TEST(TripState, QuietBelowThresholds) {
  auto fleet = fleet_of(4);
  std::mt19937_64 rng(1);
  const std::vector<double> v(4, 240.0);
  for (int t = 0; t < 20; ++t) EXPECT_TRUE(update_trip_state(fleet, v, kS, rng, t).empty());
  for (const auto& inv : fleet) EXPECT_TRUE(inv.on);
}

TEST(TripState, AllAboveCutoffDisconnectAtOnce) {
  auto fleet = fleet_of(3);
  std::mt19937_64 rng(1);
  const std::vector<double> v{266.0, 266.0, 240.0};
  const auto ev = update_trip_state(fleet, v, kS, rng, 4);
  ASSERT_EQ(ev.size(), 2u);
  for (const auto& e : ev) {
    EXPECT_EQ(e.kind, TripEventKind::trip_instant);
    EXPECT_EQ(e.t, 4);
  }
  EXPECT_FALSE(fleet[0].on);
  EXPECT_FALSE(fleet[1].on);
  EXPECT_TRUE(fleet[2].on);
  EXPECT_EQ(fleet[0].off_timer, kS.reconnect_delay);
}

TEST(TripState, LegacyCutsOffAtLowerVoltage) {
  std::vector<InverterState> fleet{inverter(5.0, InverterKind::legacy), inverter(5.0)};
  std::mt19937_64 rng(1);
  const std::vector<double> v{261.0, 261.0};
  const auto ev = update_trip_state(fleet, v, kS, rng);
  EXPECT_FALSE(fleet[0].on);
  EXPECT_EQ(ev[0].kind, TripEventKind::trip_instant);
  EXPECT_EQ(ev[0].inverter, 0u);
}

TEST(TripState, OneAveragedTripPerInterval) {
  auto fleet = fleet_of(5);
  std::mt19937_64 rng(2);
  const std::vector<double> v(5, 258.0);
  for (int t = 0; t < 5; ++t) {
    const auto ev = update_trip_state(fleet, v, kS, rng, t);
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].kind, TripEventKind::trip_avg);
  }
  for (const auto& inv : fleet) EXPECT_FALSE(inv.on);
}

TEST(TripState, ReconnectAfterDelayOneAtATime) {
  auto fleet = fleet_of(3);
  std::mt19937_64 rng(5);
  for (auto& inv : fleet) {
    inv.on = false;
    inv.off_timer = 2;
  }
  const std::vector<double> low(3, 240.0);
  EXPECT_TRUE(update_trip_state(fleet, low, kS, rng, 0).empty());  // timer 2 -> 1
  int reconnects = 0;
  for (int t = 1; t < 4; ++t) {
    const auto ev = update_trip_state(fleet, low, kS, rng, t);
    ASSERT_EQ(ev.size(), 1u) << t;
    EXPECT_EQ(ev[0].kind, TripEventKind::reconnect);
    ++reconnects;
  }
  EXPECT_EQ(reconnects, 3);
  for (const auto& inv : fleet) EXPECT_TRUE(inv.on);
}

TEST(TripState, NoReconnectWhileAboveTripVoltage) {
  auto fleet = fleet_of(1);
  fleet[0].on = false;
  std::mt19937_64 rng(5);
  const std::vector<double> v{257.5};
  for (int t = 0; t < 10; ++t) EXPECT_TRUE(update_trip_state(fleet, v, kS, rng, t).empty());
}

TEST(TripState, HistoryBoundedByWindow) {
  auto fleet = fleet_of(1);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const std::vector<double> v{230.0 + t * 0.1};
    update_trip_state(fleet, v, kS, rng, t);
    EXPECT_LE(static_cast<int>(fleet[0].voltage_history.size()), kS.trip_window);
  }
  EXPECT_NEAR(fleet[0].window_mean(), 230.0 + 2.45, 1e-9);
}

TEST(TripState, EqualWeightsGiveUniformChoice) {
  std::mt19937_64 rng(2024);
  std::array<int, 3> hits{};
  constexpr int kTrials = 10000;
  const std::vector<double> v(3, 258.0);
  for (int k = 0; k < kTrials; ++k) {
    auto fleet = fleet_of(3);
    const auto ev = update_trip_state(fleet, v, kS, rng);
    ASSERT_EQ(ev.size(), 1u);
    ++hits[ev[0].inverter];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / kTrials, 1.0 / 3.0, 0.02);
}

TEST(TripState, WeightedChoiceMatchesClosedForm) {
  // Disconnect weights (V_max - V)^-2 at three voltages.
  const std::array<double, 3> v{258.0, 261.0, 263.0};
  std::array<double, 3> w{};
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) total += w[i] = 1.0 / ((265.0 - v[i]) * (265.0 - v[i]));
  std::mt19937_64 rng(77);
  std::array<int, 3> hits{};
  constexpr int kTrials = 10000;
  for (int k = 0; k < kTrials; ++k) ++hits[weighted_choice(w, rng)];
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(static_cast<double>(hits[i]) / kTrials, w[i] / total, 0.02);
}

TEST(TripState, WeightsClampedAtSingularity) {
  EXPECT_EQ(disconnect_weight(265.0, 265.0), 1.0 / kWeightFloor);
  EXPECT_EQ(reconnect_weight(230.0, 230.0), 1.0 / kWeightFloor);
  EXPECT_NEAR(reconnect_weight(240.0, 230.0), 0.01, 1e-15);
}

TEST(TripState, EventLogReproducibleFromSeed) {
  auto run = [](std::uint64_t seed) {
    auto fleet = fleet_of(6);
    std::mt19937_64 rng(seed);
    std::mt19937_64 vrng(99);
    std::uniform_real_distribution<double> v(250.0, 262.0);
    std::vector<TripEvent> log;
    for (int t = 0; t < 200; ++t) {
      std::vector<double> m(6);
      for (auto& x : m) x = v(vrng);
      for (const auto& e : update_trip_state(fleet, m, kS, rng, t)) log.push_back(e);
    }
    return log;
  };
  const auto a = run(11);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run(11));
}

TEST(TripState, MeasurementCountChecked) {
  auto fleet = fleet_of(2);
  std::mt19937_64 rng(1);
  const std::vector<double> v{240.0};
  EXPECT_THROW(update_trip_state(fleet, v, kS, rng), InputError);
}
