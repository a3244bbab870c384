#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace gridvolt;

namespace {

// A short midday window keeps full runs cheap.
const Horizon kMidday{12 * 60, 40};

Profiles midday(int households = 6, double pv_peak = 5.0) { return generate_profiles({households, pv_peak, 0.77, 3}, kMidday); }

Scenario scenario(const Network& net, double pen, ControlMode mode, int id = 1) {
  Scenario sc = generate_scenarios(net, pen, 2, 0).at(static_cast<std::size_t>(id));
  sc.mode = mode;
  return sc;
}

DayResult run(const FeederModel& m, const Profiles& p, ControlMode mode, double pen = 0.8, std::uint64_t seed = 0) {
  DaySettings ds;
  ds.mode = mode;
  ds.seed = seed;
  ds.alpha = 1.0;
  return run_day(m, scenario(m.network(), pen, mode), p, ds);
}

}  // namespace

TEST(RunDay, NoPvLeavesModesIndistinguishable) {
  const FeederModel model(generate_feeder({12, 0.05, "ow95", 1, 3}), true);
  const Profiles prof = midday().without_pv();
  const auto base = baseline_losses(model, prof);
  const DayResult leg = run(model, prof, ControlMode::legacy);
  for (ControlMode m : {ControlMode::autonomous, ControlMode::cic, ControlMode::cic_fair}) {
    const DayResult r = run(model, prof, m);
    EXPECT_TRUE(r.events.empty());
    EXPECT_FALSE(r.curtailed);
    for (std::size_t t = 0; t < r.steps(); ++t) {
      EXPECT_EQ(r.curtailment_kw[t], 0.0);
      EXPECT_NEAR((r.v_oracle[t] - leg.v_oracle[t]).cwiseAbs().maxCoeff(), 0.0, 1e-6) << to_string(m);
    }
    const auto u = utilized_power(r, base);
    EXPECT_EQ(u.available_kwh, 0.0);
    EXPECT_EQ(u.utilized_pct, 100.0);
  }
  // Without PV the inverter-free day is the baseline itself.
  for (std::size_t t = 0; t < leg.steps(); ++t) EXPECT_EQ(leg.losses_kw[t], base[t]);
}

TEST(RunDay, BitIdenticalForSameSeed) {
  const FeederModel model(generate_feeder({14, 0.06, "ow50", 1, 4}), false);
  const Profiles prof = midday();
  for (ControlMode m : {ControlMode::legacy, ControlMode::autonomous, ControlMode::cic}) {
    const DayResult a = run(model, prof, m, 0.9, 5), b = run(model, prof, m, 0.9, 5);
    EXPECT_EQ(a.losses_kw, b.losses_kw) << to_string(m);
    EXPECT_EQ(a.p_inj, b.p_inj);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.events, b.events);
    ASSERT_EQ(a.v_oracle.size(), b.v_oracle.size());
    for (std::size_t t = 0; t < a.v_oracle.size(); ++t) EXPECT_EQ(a.v_oracle[t], b.v_oracle[t]);
  }
}

TEST(RunDay, EnergyBookkeepingPerInverter) {
  const FeederModel model(generate_feeder({14, 0.06, "ow50", 1, 4}), true);
  const Profiles prof = midday();
  for (ControlMode m : {ControlMode::legacy, ControlMode::autonomous, ControlMode::cic}) {
    const DayResult r = run(model, prof, m);
    for (std::size_t t = 0; t < r.steps(); ++t) {
      double curt = 0.0, avail = 0.0;
      for (std::size_t i = 0; i < r.pv_customers.size(); ++i) {
        EXPECT_NEAR(r.p_available[t][i], r.p_inj[t][i] + r.p_curt[t][i], 1e-12);
        EXPECT_GE(r.p_curt[t][i], -1e-9);
        EXPECT_LE(r.p_inj[t][i] * r.p_inj[t][i] + r.q[t][i] * r.q[t][i], 5.5 * 5.5 + 1e-6);
        curt += r.p_curt[t][i];
        avail += r.p_available[t][i];
      }
      EXPECT_NEAR(r.curtailment_kw[t], curt, 1e-12);
      EXPECT_NEAR(r.pv_available_kw[t], avail, 1e-12);
    }
  }
}

TEST(RunDay, CoordinatedStepsAreCertified) {
  const FeederModel model(generate_feeder({24, 0.08, "ow50", 1, 4}), true);
  const DayResult r = run(model, midday(), ControlMode::cic, 1.0);
  ASSERT_EQ(r.solver.size(), r.steps());
  EXPECT_TRUE(r.curtailed);
  for (const auto& s : r.solver) {
    EXPECT_EQ(s.status, CicStatus::optimal);
    EXPECT_LE(s.kkt_residual, 1e-6);
  }
  EXPECT_GT(r.sigma.samples, 0u);
  EXPECT_LE(r.sigma.sigma, 3e-2);
}

TEST(RunDay, LinearizationPointStaysInBand) {
  // Heavy export on a weak unbalanced feeder; the point update must not
  // leave the sanity band.
  const FeederModel model(generate_feeder({20, 0.06, "ow50", 1, 9}), false);
  EXPECT_NO_THROW(run(model, midday(8, 5.5), ControlMode::cic, 1.0));
}

TEST(Utilization, Arithmetic) {
  const auto u = utilized_energy(50.0, 2.0, 3.5, 2.5);
  EXPECT_DOUBLE_EQ(u.utilized_kwh, 47.0);
  EXPECT_DOUBLE_EQ(u.utilized_pct, 94.0);
  EXPECT_EQ(utilized_energy(50.0, 0.0, 2.5, 2.5).utilized_pct, 100.0);
  EXPECT_GT(utilized_energy(50.0, 0.0, 1.5, 2.5).utilized_pct, 100.0);
  EXPECT_EQ(utilized_energy(0.0, 0.0, 1.0, 1.0).utilized_pct, 100.0);
}

TEST(Utilization, FromDayResult) {
  DayResult r;
  r.pv_available_kw.assign(60, 3.0);
  r.curtailment_kw.assign(60, 0.6);
  r.losses_kw.assign(60, 0.5);
  const std::vector<double> base(60, 0.2);
  const auto u = utilized_power(r, base);
  EXPECT_NEAR(u.available_kwh, 3.0, 1e-12);
  EXPECT_NEAR(u.utilized_kwh, 3.0 - 0.6 - 0.3, 1e-12);
  EXPECT_NEAR(u.utilized_pct, 70.0, 1e-10);
  const std::vector<double> short_base(59, 0.2);
  EXPECT_THROW(utilized_power(r, short_base), InputError);
}

TEST(HostingCapacityTest, DefinitionsApplied) {
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.6};
  std::vector<std::vector<bool>> flags(4, std::vector<bool>(20, false));
  flags[2][7] = true;
  flags[3].assign(20, true);
  const auto hc = hosting_capacity(grid, flags);
  EXPECT_EQ(hc.cap_min, 0.3);
  EXPECT_EQ(hc.cap_max, 0.6);

  const auto none = hosting_capacity(grid, std::vector<std::vector<bool>>(4, std::vector<bool>(20, false)));
  EXPECT_FALSE(none.cap_min);
  EXPECT_EQ(capacity_json(none.cap_max), "above grid max");
  const std::vector<double> bad{0.2, 0.1};
  EXPECT_THROW(hosting_capacity(bad, std::vector<std::vector<bool>>(2)), InputError);
}

TEST(HostingCapacityTest, MinNeverAboveMax) {
  std::mt19937_64 rng(8);
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<bool>> flags(grid.size(), std::vector<bool>(5));
    for (auto& row : flags)
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = rng() % 3 == 0;
    const auto hc = hosting_capacity(grid, flags);
    if (hc.cap_max) {
      ASSERT_TRUE(hc.cap_min);
      EXPECT_LE(*hc.cap_min, *hc.cap_max);
    }
  }
}

TEST(Sigma, DirectEvaluation) {
  const std::vector<Complex> same{{1.0, 0.1}, {0.98, -0.2}};
  EXPECT_EQ(relative_error_sigma(same, same).sigma, 0.0);
  const std::vector<Complex> model(4, Complex(1.01, 0.0)), oracle(4, Complex(1.0, 0.0));
  const auto s = relative_error_sigma(model, oracle);
  EXPECT_NEAR(s.sigma, 0.01, 1e-15);
  EXPECT_NEAR(s.dv_plus, 0.01, 1e-15);
  EXPECT_EQ(s.dv_minus, 0.0);
  const std::vector<Complex> zero(4, Complex{});
  EXPECT_THROW(relative_error_sigma(model, zero), InputError);
}

TEST(TransformerPeak, LoadsOnlyPeakAtMaxLoad) {
  // One profile for everyone: total demand follows it exactly.
  const FeederModel model(generate_feeder({10, 0.04, "ug150", 1, 2}), true);
  const Profiles prof = generate_profiles({1, 0.0, 0.77, 6}, Horizon{17 * 60, 120});
  const DayResult r = run(model, prof, ControlMode::legacy, 0.5);
  const auto& d = prof.demand_kw[0];
  const auto t_load = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
  EXPECT_EQ(transformer_peak(r), r.slack_kva[t_load]);
}

TEST(TransformerPeak, ExportDayPeaksAtMidday) {
  const FeederModel model(generate_feeder({10, 0.04, "ug150", 1, 2}), true);
  const Profiles prof = generate_profiles({4, 5.0, 0.77, 6}, Horizon{8 * 60, 690});
  DaySettings ds;
  ds.mode = ControlMode::legacy;
  ds.record_voltages = false;
  const DayResult r = run_day(model, scenario(model.network(), 1.0, ControlMode::legacy, 0), prof, ds);
  const auto t = std::max_element(r.slack_kva.begin(), r.slack_kva.end()) - r.slack_kva.begin();
  const int minute = prof.horizon.start_minute + static_cast<int>(t);
  EXPECT_GT(minute, 11 * 60);
  EXPECT_LT(minute, 15 * 60);
  EXPECT_GT(transformer_peak(r), 0.0);
}

TEST(Events, CountsByKind) {
  DayResult r;
  r.events = {{1, 0, TripEventKind::trip_avg}, {2, 1, TripEventKind::trip_instant}, {9, 0, TripEventKind::reconnect},
              {9, 1, TripEventKind::trip_avg}};
  const auto c = count_events(r);
  EXPECT_EQ(c.trip_avg, 2);
  EXPECT_EQ(c.trip_instant, 1);
  EXPECT_EQ(c.reconnect, 1);
}
