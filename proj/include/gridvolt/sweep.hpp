#pragma once

// Parallel scenario sweeps over penetration levels and control modes.

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridvolt/simulate.hpp"

namespace gridvolt {

inline std::vector<double> default_penetration_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 10; ++k) g.push_back(k / 10.0);
  return g;
}

struct SweepConfig {
  std::vector<double> grid{default_penetration_grid()};
  int n_random{18};
  std::uint64_t scenario_seed{0};
  std::vector<ControlMode> modes{ControlMode::legacy, ControlMode::autonomous, ControlMode::cic};
  DaySettings day{};
  unsigned jobs{0};  // 0: hardware concurrency
};

/// Metrics of one day run; one row of the sweep table.
struct RunRecord {
  ControlMode mode{ControlMode::cic};
  double penetration{0.0};
  int scenario_id{0};
  Placement placement{Placement::random};
  int pv_count{0};
  Utilization util;
  double peak_kva{0.0};
  double sigma{0.0};
  int longest_over_trip{0};
  int fallback_steps{0};
  bool curtailed{false};
  EventCounts events;
};

inline RunRecord summarize(const DayResult& r, const Scenario& sc, std::span<const double> baseline_kw) {
  RunRecord rec;
  rec.mode = r.mode;
  rec.penetration = r.penetration;
  rec.scenario_id = r.scenario_id;
  rec.placement = sc.placement;
  rec.pv_count = static_cast<int>(r.pv_customers.size());
  rec.util = utilized_power(r, baseline_kw);
  rec.peak_kva = transformer_peak(r);
  rec.sigma = r.sigma.sigma;
  for (int run : r.over_trip_longest_run) rec.longest_over_trip = std::max(rec.longest_over_trip, run);
  rec.fallback_steps = r.fallback_steps;
  rec.curtailed = r.curtailed;
  rec.events = count_events(r);
  return rec;
}

inline nlohmann::json to_json(const RunRecord& r) {
  return {{"mode", to_string(r.mode)},
          {"penetration", r.penetration},
          {"scenario", r.scenario_id},
          {"placement", to_string(r.placement)},
          {"pv_count", r.pv_count},
          {"available_kwh", r.util.available_kwh},
          {"curtailment_kwh", r.util.curtailment_kwh},
          {"losses_kwh", r.util.losses_kwh},
          {"baseline_losses_kwh", r.util.baseline_losses_kwh},
          {"utilized_kwh", r.util.utilized_kwh},
          {"utilized_pct", r.util.utilized_pct},
          {"peak_kva", r.peak_kva},
          {"sigma", r.sigma},
          {"longest_over_trip_min", r.longest_over_trip},
          {"fallback_steps", r.fallback_steps},
          {"curtailed", r.curtailed},
          {"events", {{"trip_avg", r.events.trip_avg},
                      {"trip_instant", r.events.trip_instant},
                      {"reconnect", r.events.reconnect}}}};
}

/// Mean CIC minus autonomous curtailment and loss increase at one penetration.
struct ModeDifference {
  double penetration{0.0};
  double curtailment_kwh{0.0};
  double loss_increase_kwh{0.0};
  double utilized_pct{0.0};
};

struct SweepResult {
  std::string cable;
  bool balanced{true};
  std::vector<double> grid;
  std::vector<ControlMode> modes;
  std::vector<RunRecord> rows;  // ordered by (mode, penetration, scenario)
  std::map<ControlMode, HostingCapacity> capacity;
  std::vector<ModeDifference> differences;  // empty unless both cic and autonomous ran

  /// Mean utilized percentage of one mode at one penetration.
  double mean_utilized(ControlMode m, double penetration) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.mode == m && r.penetration == penetration) {
        sum += r.util.utilized_pct;
        ++n;
      }
    return n ? sum / n : 0.0;
  }
};

/// Runs `task(i)` for i in [0, n) on up to `jobs` threads. The first
/// exception thrown by any task is rethrown after all workers stop.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& task) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < jobs; ++k) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

inline std::vector<ModeDifference> mode_differences(const SweepResult& s) {
  std::vector<ModeDifference> out;
  const bool have = std::count(s.modes.begin(), s.modes.end(), ControlMode::cic) &&
                    std::count(s.modes.begin(), s.modes.end(), ControlMode::autonomous);
  if (!have) return out;
  for (double pen : s.grid) {
    ModeDifference d{pen, 0.0, 0.0, 0.0};
    int n_cic = 0, n_aut = 0;
    for (const auto& r : s.rows) {
      if (r.penetration != pen) continue;
      const double sign = r.mode == ControlMode::cic ? 1.0 : r.mode == ControlMode::autonomous ? -1.0 : 0.0;
      if (sign == 0.0) continue;
      (sign > 0 ? n_cic : n_aut) += 1;
      d.curtailment_kwh += sign * r.util.curtailment_kwh;
      d.loss_increase_kwh += sign * (r.util.losses_kwh - r.util.baseline_losses_kwh);
      d.utilized_pct += sign * r.util.utilized_pct;
    }
    if (n_cic == 0 || n_cic != n_aut) continue;
    d.curtailment_kwh /= n_cic;
    d.loss_increase_kwh /= n_cic;
    d.utilized_pct /= n_cic;
    out.push_back(d);
  }
  return out;
}

/// Every (mode, penetration, scenario) day on one feeder. Scenario sets are
/// shared by all modes. Results do not depend on the number of threads.
inline SweepResult run_sweep(const FeederModel& model, const Profiles& prof, const SweepConfig& cfg,
                             const std::string& cable_label = {}) {
  if (cfg.grid.empty()) throw InputError("sweep: empty penetration grid");
  for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
    if (!(cfg.grid[i] > 0.0 && cfg.grid[i] <= 1.0)) throw InputError("sweep: penetration levels must lie in (0, 1]");
    if (i && !(cfg.grid[i] > cfg.grid[i - 1])) throw InputError("sweep: penetration grid must be increasing");
  }
  if (cfg.modes.empty()) throw InputError("sweep: no control modes");

  const auto baseline = baseline_losses(model, prof, cfg.day.power_flow);
  std::vector<std::vector<Scenario>> sets;
  for (double pen : cfg.grid) sets.push_back(generate_scenarios(model.network(), pen, cfg.n_random, cfg.scenario_seed));

  struct Task {
    std::size_t mode, level, scenario;
  };
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < cfg.modes.size(); ++m)
    for (std::size_t l = 0; l < sets.size(); ++l)
      for (std::size_t s = 0; s < sets[l].size(); ++s) tasks.push_back({m, l, s});

  std::vector<RunRecord> rows(tasks.size());
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    const Task& tk = tasks[i];
    Scenario sc = sets[tk.level][tk.scenario];
    sc.mode = cfg.modes[tk.mode];
    DaySettings ds = cfg.day;
    ds.mode = sc.mode;
    ds.record_voltages = false;
    ds.diagnostics = nullptr;
    rows[i] = summarize(run_day(model, sc, prof, ds), sc, baseline);
  });

  SweepResult res;
  res.cable = cable_label;
  res.balanced = model.balanced();
  res.grid = cfg.grid;
  res.modes = cfg.modes;
  res.rows = std::move(rows);
  for (std::size_t m = 0; m < cfg.modes.size(); ++m) {
    std::vector<std::vector<bool>> flags(cfg.grid.size());
    for (const auto& r : res.rows) {
      if (r.mode != cfg.modes[m]) continue;
      const auto l = static_cast<std::size_t>(std::find(cfg.grid.begin(), cfg.grid.end(), r.penetration) - cfg.grid.begin());
      flags[l].push_back(r.curtailed);
    }
    res.capacity[cfg.modes[m]] = hosting_capacity(cfg.grid, flags);
  }
  res.differences = mode_differences(res);
  return res;
}

inline nlohmann::json to_json(const SweepResult& s) {
  nlohmann::json j;
  j["cable"] = s.cable;
  j["balanced"] = s.balanced;
  j["grid"] = s.grid;
  nlohmann::json cap = nlohmann::json::object();
  for (ControlMode m : s.modes) {
    const auto& hc = s.capacity.at(m);
    cap[to_string(m)] = {{"cap_min", capacity_json(hc.cap_min)}, {"cap_max", capacity_json(hc.cap_max)}};
  }
  j["hosting_capacity"] = cap;
  nlohmann::json means = nlohmann::json::object();
  for (ControlMode m : s.modes) {
    nlohmann::json per = nlohmann::json::array();
    for (double pen : s.grid) per.push_back({{"penetration", pen}, {"utilized_pct", s.mean_utilized(m, pen)}});
    means[to_string(m)] = per;
  }
  j["mean_utilized"] = means;
  nlohmann::json diff = nlohmann::json::array();
  for (const auto& d : s.differences)
    diff.push_back({{"penetration", d.penetration},
                    {"curtailment_kwh", d.curtailment_kwh},
                    {"loss_increase_kwh", d.loss_increase_kwh},
                    {"utilized_pct", d.utilized_pct}});
  j["cic_minus_autonomous"] = diff;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back(to_json(r));
  j["runs"] = rows;
  return j;
}

}  // namespace gridvolt
