#pragma once

// Quasi-static day simulation for the three control families, and the
// metrics computed from its results.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridvolt/cicopt.hpp"
#include "gridvolt/controllers.hpp"
#include "gridvolt/core.hpp"
#include "gridvolt/linmodel.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/pfsolve.hpp"
#include "gridvolt/profiles.hpp"
#include "gridvolt/scenario.hpp"

namespace gridvolt {

/// Network prepared for repeated simulation: the oracle, the linear model and
/// each customer's node shares. In balanced mode every customer is spread
/// evenly over the phases of its bus. Immutable once built and safe to share
/// between threads.
class FeederModel {
 public:
  FeederModel(const Network& net, bool balanced)
      : net_(balanced ? net.balanced_customers() : net),
        balanced_(balanced),
        oracle_(net_),
        sens_(build_sensitivity(net_)),
        cic_(net_, sens_) {
    for (const auto& c : net_.customers()) shares_.push_back(customer_nodes(net_, sens_.nodes, c));
  }
  FeederModel(const FeederModel&) = delete;
  FeederModel& operator=(const FeederModel&) = delete;

  const Network& network() const noexcept { return net_; }
  bool balanced() const noexcept { return balanced_; }
  const SweepSolver& oracle() const noexcept { return oracle_; }
  const SensitivityMatrices& sensitivity() const noexcept { return sens_; }
  const CicModel& cic_model() const noexcept { return cic_; }
  /// Node shares of the customer at position `c` of Network::customers().
  const std::vector<NodeShare>& shares(std::size_t c) const { return shares_.at(c); }

  std::size_t customer_position(int customer_index) const {
    const auto& cs = net_.customers();
    for (std::size_t i = 0; i < cs.size(); ++i)
      if (cs[i].index == customer_index) return i;
    throw InputError("scenario references unknown customer " + std::to_string(customer_index));
  }

  /// Per-bus per-phase injections (pu) from customer net powers (kW + j kVAr).
  std::vector<PhaseValues> injections(std::span<const Complex> customer_kva) const {
    std::vector<PhaseValues> s(net_.bus_count(), PhaseValues{});
    const double base = net_.base().power_kva;
    for (std::size_t c = 0; c < customer_kva.size(); ++c)
      for (const auto& sh : shares_[c]) {
        const auto& node = sens_.nodes[static_cast<std::size_t>(sh.node)];
        s[node.bus][index(node.phase)] += sh.weight * customer_kva[c] / base;
      }
    return s;
  }

  /// Highest phase voltage magnitude seen by a customer, volts.
  double customer_voltage(std::size_t c, const Eigen::VectorXcd& nodes_pu) const {
    double v = 0.0;
    for (const auto& sh : shares_[c]) v = std::max(v, std::abs(nodes_pu[sh.node]));
    return v * net_.base().voltage_v;
  }

 private:
  Network net_;
  bool balanced_;
  SweepSolver oracle_;
  SensitivityMatrices sens_;
  CicModel cic_;
  std::vector<std::vector<NodeShare>> shares_;
};

struct DaySettings {
  ControlMode mode{ControlMode::cic};
  double alpha{0.0};  // used by cic_fair
  DroopSettings droop{};
  CicSettings cic{};  // v_trip is taken from `droop`
  std::optional<VoltageCap> cap;  // default: Re cap when balanced, magnitude otherwise
  double rating_kva{5.5};
  double eta{0.4};
  std::uint64_t seed{0};
  SweepOptions power_flow{};
  bool record_voltages{true};
  double curtailment_threshold_kw{1e-3};
  std::ostream* diagnostics{nullptr};  // JSON lines, one per CIC solve
};

/// Worst relative and signed magnitude deviations between model and oracle.
struct SigmaStats {
  double sigma{0.0};
  double dv_plus{0.0};   // max(|V| - |V_hat|), pu
  double dv_minus{0.0};  // max(|V_hat| - |V|), pu
  std::size_t samples{0};

  void merge(const SigmaStats& o) {
    sigma = std::max(sigma, o.sigma);
    dv_plus = std::max(dv_plus, o.dv_plus);
    dv_minus = std::max(dv_minus, o.dv_minus);
    samples += o.samples;
  }
};

/// sigma = max |(V_hat - V) / V_hat| over all entries, with the largest
/// positive and negative magnitude deviations of the model.
inline SigmaStats relative_error_sigma(std::span<const Complex> v_model, std::span<const Complex> v_oracle) {
  if (v_model.size() != v_oracle.size()) throw InputError("relative_error_sigma: vectors differ in length");
  SigmaStats s;
  for (std::size_t i = 0; i < v_model.size(); ++i) {
    if (v_oracle[i] == Complex{}) throw InputError("relative_error_sigma: zero oracle voltage");
    s.sigma = std::max(s.sigma, std::abs((v_oracle[i] - v_model[i]) / v_oracle[i]));
    const double d = std::abs(v_model[i]) - std::abs(v_oracle[i]);
    s.dv_plus = std::max(s.dv_plus, d);
    s.dv_minus = std::max(s.dv_minus, -d);
  }
  s.samples = v_model.size();
  return s;
}

struct SolverStep {
  CicStatus status{CicStatus::optimal};
  int iterations{0};
  double kkt_residual{0.0};
  double objective_kw{0.0};
  bool fallback{false};
};

struct DayResult {
  ControlMode mode{ControlMode::cic};
  int scenario_id{0};
  double penetration{0.0};
  bool balanced{true};
  Horizon horizon;
  std::vector<int> pv_customers;  // inverter order

  // Per step.
  std::vector<double> pv_available_kw;
  std::vector<double> curtailment_kw;
  std::vector<double> losses_kw;  // exact, from the oracle
  std::vector<double> slack_kva;
  std::vector<double> max_voltage_v;
  std::vector<SolverStep> solver;  // CIC modes only

  // Per step and inverter.
  std::vector<std::vector<double>> p_available, p_inj, p_curt, q;

  // Per step and node (true frame, volts); filled when recording voltages.
  std::vector<Node> nodes;
  std::vector<BusId> node_bus_ids;
  std::vector<Eigen::VectorXcd> v_model, v_oracle;

  std::vector<TripEvent> events;
  SigmaStats sigma;  // CIC modes only
  std::vector<int> over_trip_longest_run;  // per inverter, consecutive minutes above V_trip
  int over_trip_minutes{0};
  int fallback_steps{0};
  bool curtailed{false};

  std::size_t steps() const { return losses_kw.size(); }
};

namespace detail {

inline std::mt19937_64 day_rng(const DaySettings& cfg, const Scenario& sc) {
  const auto pen_key = static_cast<std::uint64_t>(std::llround(sc.penetration * 1e6));
  return std::mt19937_64(
      mix_seed(cfg.seed ^ mix_seed(pen_key * 7919ull + static_cast<std::uint64_t>(sc.id) * 104729ull +
                                   static_cast<std::uint64_t>(cfg.mode))));
}

}  // namespace detail

/// Simulates one day. Droop and legacy inverters act on the previous
/// minute's measured voltages; coordinated inverters receive the setpoints of
/// one convex program per minute, after which the linearization point and the
/// voltage caps are corrected from the measurement.
inline DayResult run_day(const FeederModel& model, const Scenario& sc, const Profiles& prof, const DaySettings& cfg) {
  prof.validate();
  cfg.droop.validate();
  const Network& net = model.network();
  const auto& customers = net.customers();
  const std::size_t n_cust = customers.size();
  const double vb = net.base().voltage_v;
  const int steps = prof.horizon.steps;
  const bool coordinated = sc.mode == ControlMode::cic || sc.mode == ControlMode::cic_fair;

  std::vector<std::size_t> inv_pos;
  for (int c : sc.pv_customers) inv_pos.push_back(model.customer_position(c));
  const std::size_t n_inv = inv_pos.size();

  DayResult res;
  res.mode = sc.mode;
  res.scenario_id = sc.id;
  res.penetration = sc.penetration;
  res.balanced = model.balanced();
  res.horizon = prof.horizon;
  res.pv_customers = sc.pv_customers;
  res.over_trip_longest_run.assign(n_inv, 0);
  if (cfg.record_voltages) {
    res.nodes = model.sensitivity().nodes.nodes();
    for (const auto& n : res.nodes) res.node_bus_ids.push_back(net.buses()[n.bus].id);
  }

  CicSettings cic = cfg.cic;
  cic.v_trip = cfg.droop.v_trip;
  cic.cap = cfg.cap.value_or(model.balanced() ? VoltageCap::real_part : VoltageCap::magnitude);
  cic.alpha = sc.mode == ControlMode::cic_fair ? cfg.alpha : 0.0;

  std::vector<InverterState> fleet(n_inv);
  for (auto& st : fleet) {
    st.kind = sc.mode == ControlMode::legacy ? InverterKind::legacy : InverterKind::autonomous;
    st.rating_kva = cfg.rating_kva;
  }
  std::vector<double> measured(n_inv, cfg.droop.v_nom);
  std::vector<double> vmax(n_inv, cfg.droop.v_trip);
  std::vector<int> over_run(n_inv, 0);
  LinearizationPoint point = LinearizationPoint::flat(model.sensitivity().nodes.size(), cfg.eta);
  auto rng = detail::day_rng(cfg, sc);

  std::vector<Complex> cust_s(n_cust);
  std::vector<std::pair<double, double>> loads(n_cust);
  for (int t = 0; t < steps; ++t) {
    for (std::size_t c = 0; c < n_cust; ++c) {
      loads[c] = {prof.demand(static_cast<std::size_t>(customers[c].index), t),
                  prof.reactive_demand(static_cast<std::size_t>(customers[c].index), t)};
      cust_s[c] = Complex(-loads[c].first, -loads[c].second);
    }
    std::vector<double> p_av(n_inv), p_out(n_inv), p_c(n_inv), q(n_inv);
    for (std::size_t i = 0; i < n_inv; ++i) p_av[i] = prof.pv(static_cast<std::size_t>(sc.pv_customers[i]), t);

    std::optional<CicSolution> cic_sol;
    if (coordinated) {
      std::vector<CoordinatedCustomer> fleet_in;
      for (std::size_t i = 0; i < n_inv; ++i)
        fleet_in.push_back({sc.pv_customers[i], p_av[i], loads[inv_pos[i]].first, loads[inv_pos[i]].second,
                            cfg.rating_kva, vmax[i]});
      const CicProblem prob = assemble(model.cic_model(), fleet_in, loads, point, cic, cfg.droop.q_min_pu);
      CicSolution sol = solve_cic(prob);
      SolverStep diag{sol.status, sol.iterations, sol.kkt_residual, sol.objective_kw, false};
      if (sol.status != CicStatus::optimal && !(sol.status == CicStatus::max_iter &&
                                                 max_constraint_violation(prob, sol) <= 1e-6)) {
        sol = cic_fallback(prob, sol.status);
        diag.fallback = true;
        ++res.fallback_steps;
      }
      if (cfg.diagnostics) {
        nlohmann::json j = to_json(sol);
        j["t"] = t;
        j["scenario"] = sc.id;
        j["fallback"] = diag.fallback;
        *cfg.diagnostics << j.dump() << '\n';
      }
      res.solver.push_back(diag);
      for (std::size_t i = 0; i < n_inv; ++i) {
        const double pav = prob.inverters[i].p_av_kw;
        p_c[i] = sol.p_curt_kw[i] + (p_av[i] - pav);  // output above the rating is lost as well
        p_out[i] = pav - sol.p_curt_kw[i];
        q[i] = sol.q_kvar[i];
      }
      cic_sol = std::move(sol);
    } else {
      for (std::size_t i = 0; i < n_inv; ++i) fleet[i].available_kw = p_av[i];
      for (const auto& e : update_trip_state(fleet, measured, cfg.droop, rng, t)) res.events.push_back(e);
      for (std::size_t i = 0; i < n_inv; ++i) {
        const InverterOutput out =
            sc.mode == ControlMode::legacy ? legacy_power(fleet[i], measured[i], cfg.droop) : injected_power(fleet[i], measured[i], cfg.droop);
        p_out[i] = out.p_kw;
        q[i] = out.q_kvar;
        p_c[i] = p_av[i] - out.p_kw;
      }
    }
    for (std::size_t i = 0; i < n_inv; ++i) cust_s[inv_pos[i]] += Complex(p_out[i], q[i]);

    const VoltageSolution pf = model.oracle().solve(model.injections(cust_s), cfg.power_flow);
    const Eigen::VectorXcd v_hat = node_voltages_pu(net, model.sensitivity().nodes, pf);

    double curt = 0.0, avail = 0.0;
    for (std::size_t i = 0; i < n_inv; ++i) {
      curt += p_c[i];
      avail += p_av[i];
      if (p_c[i] > cfg.curtailment_threshold_kw) res.curtailed = true;
    }
    res.pv_available_kw.push_back(avail);
    res.curtailment_kw.push_back(curt);
    res.losses_kw.push_back(line_losses_exact(net, pf));
    res.slack_kva.push_back(slack_apparent_power(pf));
    res.max_voltage_v.push_back(v_hat.size() ? v_hat.cwiseAbs().maxCoeff() * vb : vb);
    res.p_available.push_back(p_av);
    res.p_inj.push_back(p_out);
    res.p_curt.push_back(p_c);
    res.q.push_back(q);

    for (std::size_t i = 0; i < n_inv; ++i) {
      measured[i] = model.customer_voltage(inv_pos[i], v_hat);
      over_run[i] = measured[i] > cfg.droop.v_trip ? over_run[i] + 1 : 0;
      if (over_run[i] > 0) ++res.over_trip_minutes;
      res.over_trip_longest_run[i] = std::max(res.over_trip_longest_run[i], over_run[i]);
    }

    if (cic_sol) {
      res.sigma.merge(relative_error_sigma(std::span<const Complex>(cic_sol->v_model.data(), cic_sol->v_model.size()),
                                           std::span<const Complex>(v_hat.data(), v_hat.size())));
      point = update_vnom(point, v_hat, cic_sol->v_model);
      for (std::size_t i = 0; i < n_inv; ++i) vmax[i] = update_vmax(vmax[i], measured[i], cfg.droop.v_trip);
    }
    if (cfg.record_voltages) {
      Eigen::VectorXcd vo(v_hat.size()), vm(v_hat.size());
      for (Eigen::Index k = 0; k < v_hat.size(); ++k) {
        const Complex rot = phase_rotor(res.nodes[static_cast<std::size_t>(k)].phase) * vb;
        vo[k] = v_hat[k] * rot;
        vm[k] = cic_sol ? cic_sol->v_model[k] * rot : Complex(std::nan(""), std::nan(""));
      }
      res.v_oracle.push_back(std::move(vo));
      res.v_model.push_back(std::move(vm));
    }
  }
  return res;
}

/// Exact line losses per step with demand only (no PV), kW.
inline std::vector<double> baseline_losses(const FeederModel& model, const Profiles& prof,
                                           const SweepOptions& pf_opt = {}) {
  prof.validate();
  const auto& customers = model.network().customers();
  std::vector<double> out;
  std::vector<Complex> s(customers.size());
  for (int t = 0; t < prof.horizon.steps; ++t) {
    for (std::size_t c = 0; c < customers.size(); ++c) {
      const auto k = static_cast<std::size_t>(customers[c].index);
      s[c] = Complex(-prof.demand(k, t), -prof.reactive_demand(k, t));
    }
    out.push_back(line_losses_exact(model.network(), model.oracle().solve(model.injections(s), pf_opt)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Utilization {
  double available_kwh{0.0};
  double curtailment_kwh{0.0};
  double losses_kwh{0.0};
  double baseline_losses_kwh{0.0};
  double utilized_kwh{0.0};
  double utilized_pct{100.0};
};

/// Available PV minus curtailment minus the loss increase over the no-PV day.
/// A day without available PV counts as fully utilized.
inline Utilization utilized_energy(double available_kwh, double curtailment_kwh, double losses_kwh,
                                   double baseline_losses_kwh) {
  Utilization u{available_kwh, curtailment_kwh, losses_kwh, baseline_losses_kwh, 0.0, 100.0};
  u.utilized_kwh = available_kwh - curtailment_kwh - (losses_kwh - baseline_losses_kwh);
  if (available_kwh > 0.0) u.utilized_pct = 100.0 * u.utilized_kwh / available_kwh;
  return u;
}

inline Utilization utilized_power(const DayResult& r, std::span<const double> baseline_losses_kw) {
  if (baseline_losses_kw.size() != r.steps()) throw InputError("utilized_power: baseline covers a different horizon");
  constexpr double h = 1.0 / 60.0;  // one-minute steps, kW -> kWh
  double av = 0.0, cu = 0.0, lo = 0.0, ba = 0.0;
  for (std::size_t t = 0; t < r.steps(); ++t) {
    av += r.pv_available_kw[t] * h;
    cu += r.curtailment_kw[t] * h;
    lo += r.losses_kw[t] * h;
    ba += baseline_losses_kw[t] * h;
  }
  return utilized_energy(av, cu, lo, ba);
}

inline double transformer_peak(const DayResult& r) {
  double peak = 0.0;
  for (double s : r.slack_kva) peak = std::max(peak, s);
  return peak;
}

/// Lowest grid penetration with curtailment in some scenario (cap_min) and in
/// every scenario (cap_max); empty when never reached on the grid.
struct HostingCapacity {
  std::optional<double> cap_min;
  std::optional<double> cap_max;
};

inline HostingCapacity hosting_capacity(std::span<const double> grid, const std::vector<std::vector<bool>>& curtailed) {
  if (grid.size() != curtailed.size()) throw InputError("hosting_capacity: one flag row per penetration level");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InputError("hosting_capacity: penetration grid must be increasing");
  HostingCapacity hc;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& row = curtailed[i];
    if (row.empty()) continue;
    const bool any = std::any_of(row.begin(), row.end(), [](bool b) { return b; });
    const bool all = std::all_of(row.begin(), row.end(), [](bool b) { return b; });
    if (any && !hc.cap_min) hc.cap_min = grid[i];
    if (all && !hc.cap_max) hc.cap_max = grid[i];
  }
  return hc;
}

inline nlohmann::json capacity_json(const std::optional<double>& c) {
  return c ? nlohmann::json(*c) : nlohmann::json("above grid max");
}

struct EventCounts {
  int trip_avg{0}, trip_instant{0}, reconnect{0};
};

inline EventCounts count_events(const DayResult& r) {
  EventCounts c;
  for (const auto& e : r.events) {
    if (e.kind == TripEventKind::trip_avg) ++c.trip_avg;
    else if (e.kind == TripEventKind::trip_instant) ++c.trip_instant;
    else ++c.reconnect;
  }
  return c;
}

}  // namespace gridvolt
