#pragma once

// Plot-ready CSV and JSON artifacts.

#include <array>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridvolt/simulate.hpp"
#include "gridvolt/sweep.hpp"

namespace gridvolt {

inline constexpr const char* kDayCsvHeader = "t,bus,phase,v_model,v_oracle,p_inj,p_curt,q,losses_kw,slack_kva";

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string clock(int minute) {
  std::ostringstream os;
  os << std::setfill('0') << std::setw(2) << minute / 60 << ':' << std::setw(2) << minute % 60;
  return os.str();
}

}  // namespace detail

/// One row per step and node. Inverter quantities are attributed to the nodes
/// their customer is connected to, split by phase share. v_model is empty for
/// modes that do not use the linear model.
inline void write_day_csv(std::ostream& os, const FeederModel& model, const DayResult& r) {
  if (r.v_oracle.size() != r.steps()) throw InputError("write_day_csv: result was run without recording voltages");
  const std::size_t n = r.nodes.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> at_node(n);
  for (std::size_t i = 0; i < r.pv_customers.size(); ++i)
    for (const auto& sh : model.shares(model.customer_position(r.pv_customers[i])))
      at_node[static_cast<std::size_t>(sh.node)].push_back({i, sh.weight});

  os << kDayCsvHeader << '\n';
  for (std::size_t t = 0; t < r.steps(); ++t) {
    const std::string tt = detail::clock(r.horizon.start_minute + static_cast<int>(t));
    for (std::size_t k = 0; k < n; ++k) {
      double p = 0.0, pc = 0.0, q = 0.0;
      for (auto [i, w] : at_node[k]) {
        p += w * r.p_inj[t][i];
        pc += w * r.p_curt[t][i];
        q += w * r.q[t][i];
      }
      const auto vm = r.v_model[t][static_cast<Eigen::Index>(k)];
      os << tt << ',' << r.node_bus_ids[k] << ',' << phase_letter(r.nodes[k].phase) << ','
         << (std::isnan(vm.real()) ? std::string{} : detail::fmt(std::abs(vm))) << ','
         << detail::fmt(std::abs(r.v_oracle[t][static_cast<Eigen::Index>(k)])) << ',' << detail::fmt(p) << ','
         << detail::fmt(pc) << ',' << detail::fmt(q) << ',' << detail::fmt(r.losses_kw[t]) << ','
         << detail::fmt(r.slack_kva[t]) << '\n';
    }
  }
}

inline void write_events_csv(std::ostream& os, const DayResult& r) {
  os << "t,inverter,event\n";
  for (const auto& e : r.events)
    os << detail::clock(r.horizon.start_minute + e.t) << ',' << r.pv_customers[e.inverter] << ','
       << to_string(e.kind) << '\n';
}

/// Summary of a single day. Contains no timings, so repeated runs with the
/// same inputs produce identical bytes.
inline nlohmann::json run_summary(const DayResult& r, const Scenario& sc, std::span<const double> baseline_kw,
                                  const std::string& cable) {
  const RunRecord rec = summarize(r, sc, baseline_kw);
  nlohmann::json j = to_json(rec);
  j["cable"] = cable;
  j["balanced"] = r.balanced;
  j["steps"] = r.steps();
  const std::vector<double> grid{r.penetration};
  const HostingCapacity hc = hosting_capacity(grid, {{r.curtailed}});
  j["hosting_capacity"] = {{"cap_min", capacity_json(hc.cap_min)}, {"cap_max", capacity_json(hc.cap_max)}};
  if (!r.solver.empty()) {
    int iters = 0;
    double kkt = 0.0;
    for (const auto& s : r.solver) {
      iters = std::max(iters, s.iterations);
      kkt = std::max(kkt, s.kkt_residual);
    }
    j["solver"] = {{"max_iterations", iters}, {"max_kkt_residual", kkt}};
    j["dv_plus_pu"] = r.sigma.dv_plus;
    j["dv_minus_pu"] = r.sigma.dv_minus;
  }
  return j;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  os << "mode,cable,penetration,scenario,placement,pv_count,available_kwh,curtailment_kwh,loss_increase_kwh,"
        "utilized_pct,peak_kva,sigma,curtailed,trips,reconnects\n";
  for (const auto& r : s.rows)
    os << to_string(r.mode) << ',' << s.cable << ',' << detail::fmt(r.penetration) << ',' << r.scenario_id << ','
       << to_string(r.placement) << ',' << r.pv_count << ',' << detail::fmt(r.util.available_kwh) << ','
       << detail::fmt(r.util.curtailment_kwh) << ','
       << detail::fmt(r.util.losses_kwh - r.util.baseline_losses_kwh) << ',' << detail::fmt(r.util.utilized_pct)
       << ',' << detail::fmt(r.peak_kva) << ',' << detail::fmt(r.sigma) << ',' << (r.curtailed ? 1 : 0) << ','
       << r.events.trip_avg + r.events.trip_instant << ',' << r.events.reconnect << '\n';
}

/// Worst-case model error per phase of one recorded day.
inline std::array<SigmaStats, 3> sigma_by_phase(const DayResult& r, double base_v) {
  std::array<SigmaStats, 3> out{};
  for (std::size_t t = 0; t < r.v_model.size(); ++t)
    for (std::size_t k = 0; k < r.nodes.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      const Complex vm = r.v_model[t][i] / base_v, vo = r.v_oracle[t][i] / base_v;
      if (std::isnan(vm.real())) continue;
      std::array<Complex, 1> a{vm}, b{vo};
      out[index(r.nodes[k].phase)].merge(relative_error_sigma(a, b));
    }
  return out;
}

struct ValidationEntry {
  bool balanced{true};
  double penetration{0.0};
  std::vector<int> scenarios;
  SigmaStats overall;
  std::array<SigmaStats, 3> per_phase{};
  double longest_day_s{0.0};
};

/// Table of model-versus-oracle errors: one column per penetration and
/// network mode, deviations reported in pu and volts.
inline nlohmann::json validation_json(std::span<const ValidationEntry> entries, double base_v) {
  auto stats = [base_v](const SigmaStats& s) {
    return nlohmann::json{{"sigma", s.sigma},
                          {"max_dv_plus_pu", s.dv_plus},
                          {"max_dv_minus_pu", s.dv_minus},
                          {"max_dv_plus_v", s.dv_plus * base_v},
                          {"max_dv_minus_v", s.dv_minus * base_v},
                          {"samples", s.samples}};
  };
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json c = stats(e.overall);
    c["mode"] = e.balanced ? "balanced" : "unbalanced";
    c["penetration"] = e.penetration;
    c["scenarios"] = e.scenarios;
    if (!e.balanced) {
      nlohmann::json ph = nlohmann::json::object();
      for (Phase p : kAllPhases) ph[std::string(1, phase_letter(p))] = stats(e.per_phase[index(p)]);
      c["per_phase"] = ph;
    }
    cols.push_back(c);
  }
  return {{"base_voltage_v", base_v}, {"columns", cols}};
}

}  // namespace gridvolt
