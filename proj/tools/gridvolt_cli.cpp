#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gridvolt/gridvolt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gridvolt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;

// Values as given on the command line; unset options fall back to the
// config file, then to the defaults in RunConfig.
struct Flags {
  std::string config;
  std::optional<std::string> network, profiles, pv, mode, cable, out, cap, diagnostics;
  std::optional<double> alpha, spacing;
  std::vector<double> penetration;
  std::optional<int> scenarios, scenario, buses, customers_per_bus, households;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  bool balanced{false}, unbalanced{false};
};

struct RunConfig {
  std::string network;
  std::string profiles;
  std::string pv;
  std::string mode;  // empty: cic for run, the three families for sweep
  std::string cable;  // empty: keep the network's cables
  std::string out{"out"};
  std::string cap;    // empty: per network mode
  std::string diagnostics;
  double alpha{0.1};
  double spacing_km{0.04};
  std::vector<double> penetration;
  std::optional<int> scenarios;  // default 18; validate uses the two clustered ones only
  int scenario{2};
  int buses{30};
  int customers_per_bus{1};
  int households{30};
  std::uint64_t seed{1};
  unsigned jobs{0};
  std::optional<bool> balanced;
  DroopSettings droop{};
  qcqp::Settings solver{};
  double rating_kva{5.5};
};

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw InputError("cannot open config file '" + f.config + "'");
    json j;
    try {
      in >> j;
      take(j, "network", c.network);
      take(j, "profiles", c.profiles);
      take(j, "pv", c.pv);
      take(j, "mode", c.mode);
      take(j, "cable", c.cable);
      take(j, "out", c.out);
      take(j, "cap", c.cap);
      take(j, "diagnostics", c.diagnostics);
      take(j, "alpha", c.alpha);
      take(j, "spacing", c.spacing_km);
      if (j.contains("penetration")) {
        const auto& p = j.at("penetration");
        c.penetration = p.is_array() ? p.get<std::vector<double>>() : std::vector<double>{p.get<double>()};
      }
      if (j.contains("scenarios")) c.scenarios = j.at("scenarios").get<int>();
      take(j, "scenario", c.scenario);
      take(j, "buses", c.buses);
      take(j, "customers_per_bus", c.customers_per_bus);
      take(j, "households", c.households);
      take(j, "seed", c.seed);
      take(j, "jobs", c.jobs);
      take(j, "rating_kva", c.rating_kva);
      if (j.contains("balanced")) c.balanced = j.at("balanced").get<bool>();
      if (j.contains("droop")) c.droop = j.at("droop").get<DroopSettings>();
      if (j.contains("solver")) {
        const auto& s = j.at("solver");
        take(s, "tol", c.solver.tol);
        take(s, "certify_tol", c.solver.certify_tol);
        take(s, "max_iter", c.solver.max_iter);
      }
    } catch (const json::exception& e) {
      throw InputError("config file '" + f.config + "': " + e.what());
    }
  }
  if (f.network) c.network = *f.network;
  if (f.profiles) c.profiles = *f.profiles;
  if (f.pv) c.pv = *f.pv;
  if (f.mode) c.mode = *f.mode;
  if (f.cable) c.cable = *f.cable;
  if (f.out) c.out = *f.out;
  if (f.cap) c.cap = *f.cap;
  if (f.diagnostics) c.diagnostics = *f.diagnostics;
  if (f.alpha) c.alpha = *f.alpha;
  if (f.spacing) c.spacing_km = *f.spacing;
  if (!f.penetration.empty()) c.penetration = f.penetration;
  if (f.scenarios) c.scenarios = *f.scenarios;
  if (f.scenario) c.scenario = *f.scenario;
  if (f.buses) c.buses = *f.buses;
  if (f.customers_per_bus) c.customers_per_bus = *f.customers_per_bus;
  if (f.households) c.households = *f.households;
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.balanced) c.balanced = true;
  if (f.unbalanced) c.balanced = false;

  if (c.alpha < 0.0) throw InputError("--alpha must be non-negative");
  if (c.scenarios.value_or(0) < 0) throw InputError("--scenarios must be non-negative");
  for (double p : c.penetration)
    if (!(p > 0.0 && p <= 1.0)) throw InputError("penetration levels must lie in (0, 1]");
  if (!c.cap.empty() && c.cap != "re" && c.cap != "magnitude") throw InputError("--cap must be 're' or 'magnitude'");
  c.droop.validate();
  return c;
}

Network with_cable(const Network& net, const std::string& cable) {
  json j = network_to_json(net);
  cable_lookup(cable);  // reject unknown names up front
  for (auto& l : j["lines"]) l["cable"] = cable;
  return network_from_json(j);
}

Network load_or_generate(const RunConfig& c) {
  Network net = [&] {
    if (!c.network.empty()) return load_network(c.network);
    FeederSpec spec;
    spec.n_buses = c.buses;
    spec.spacing_km = c.spacing_km;
    spec.cable = c.cable.empty() ? "ow95" : c.cable;
    spec.customers_per_bus = c.customers_per_bus;
    spec.seed = c.seed;
    return generate_feeder(spec);
  }();
  if (!c.cable.empty() && !c.network.empty()) net = with_cable(net, c.cable);
  return net;
}

std::string cable_label(const Network& net) {
  std::string label;
  for (const auto& l : net.lines()) {
    if (label.empty()) label = l.cable.label;
    else if (label != l.cable.label) return "mixed";
  }
  return label;
}

Profiles load_profiles(const RunConfig& c) {
  SyntheticSpec spec;
  spec.households = c.households;
  spec.seed = c.seed;
  Profiles p = generate_profiles(spec);
  if (!c.profiles.empty()) p.demand_kw = read_series_csv(fs::path(c.profiles), p.horizon, "profiles");
  if (!c.pv.empty()) p.pv_kw = read_series_csv(fs::path(c.pv), p.horizon, "pv");
  p.validate();
  return p;
}

DaySettings day_settings(const RunConfig& c, ControlMode mode) {
  DaySettings d;
  d.mode = mode;
  d.alpha = c.alpha;
  d.droop = c.droop;
  d.cic.solver = c.solver;
  d.rating_kva = c.rating_kva;
  d.seed = c.seed;
  if (c.cap == "re") d.cap = VoltageCap::real_part;
  else if (c.cap == "magnitude") d.cap = VoltageCap::magnitude;
  return d;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw InputError("cannot write '" + p.string() + "'");
  return os;
}

int cmd_run(const RunConfig& c) {
  const Network net = load_or_generate(c);
  const Profiles prof = load_profiles(c);
  const ControlMode mode = parse_control_mode(c.mode.empty() ? "cic" : c.mode);
  const double pen = c.penetration.empty() ? 0.5 : c.penetration.front();
  if (c.penetration.size() > 1) spdlog::warn("run uses only the first penetration level ({})", pen);
  const bool balanced = c.balanced.value_or(true);
  const fs::path dir = output_dir(c);

  FeederModel model(net, balanced);
  const auto set = generate_scenarios(model.network(), pen, c.scenarios.value_or(18), c.seed);
  if (c.scenario < 0 || c.scenario >= static_cast<int>(set.size()))
    throw InputError("--scenario " + std::to_string(c.scenario) + " is outside 0.." + std::to_string(set.size() - 1));
  Scenario sc = set[static_cast<std::size_t>(c.scenario)];
  sc.mode = mode;

  DaySettings ds = day_settings(c, mode);
  std::ofstream diag;
  if (!c.diagnostics.empty()) {
    diag = open_out(c.diagnostics);
    ds.diagnostics = &diag;
  }
  spdlog::info("run: mode {} penetration {} scenario {} ({}), {} PV customers, {}", to_string(mode), pen, sc.id,
               to_string(sc.placement), sc.pv_customers.size(), balanced ? "balanced" : "unbalanced");
  const DayResult r = run_day(model, sc, prof, ds);
  const auto base = baseline_losses(model, prof, ds.power_flow);
  if (r.fallback_steps) spdlog::warn("{} steps fell back to full curtailment", r.fallback_steps);

  {
    auto os = open_out(dir / "day.csv");
    write_day_csv(os, model, r);
  }
  {
    auto os = open_out(dir / "events.csv");
    write_events_csv(os, r);
  }
  const json summary = run_summary(r, sc, base, cable_label(net));
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
  spdlog::info("utilized {:.3f}% of {:.2f} kWh; results in {}", summary["utilized_pct"].get<double>(),
               summary["available_kwh"].get<double>(), dir.string());
  return 0;
}

std::vector<ControlMode> sweep_modes(const RunConfig& c) {
  if (c.mode.empty()) return {ControlMode::legacy, ControlMode::autonomous, ControlMode::cic};
  std::vector<ControlMode> out;
  std::stringstream ss(c.mode);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_control_mode(item));
  return out;
}

int cmd_sweep(const RunConfig& c) {
  const Network net = load_or_generate(c);
  const Profiles prof = load_profiles(c);
  const fs::path dir = output_dir(c);
  FeederModel model(net, c.balanced.value_or(true));

  SweepConfig sc;
  if (!c.penetration.empty()) sc.grid = c.penetration;
  sc.n_random = c.scenarios.value_or(18);
  sc.scenario_seed = c.seed;
  sc.modes = sweep_modes(c);
  sc.day = day_settings(c, ControlMode::cic);
  sc.jobs = c.jobs;
  spdlog::info("sweep: {} levels x {} scenarios x {} modes", sc.grid.size(), sc.n_random + 2, sc.modes.size());
  const SweepResult res = run_sweep(model, prof, sc, cable_label(net));
  {
    auto os = open_out(dir / "sweep.csv");
    write_sweep_csv(os, res);
  }
  open_out(dir / "summary.json") << to_json(res).dump(2) << '\n';
  for (ControlMode m : res.modes) {
    const auto& hc = res.capacity.at(m);
    spdlog::info("{}: cap_min {} cap_max {}", to_string(m), capacity_json(hc.cap_min).dump(),
                 capacity_json(hc.cap_max).dump());
  }
  return 0;
}

int cmd_validate(const RunConfig& c) {
  const Network net = load_or_generate(c);
  const Profiles prof = load_profiles(c);
  const fs::path dir = output_dir(c);
  const std::vector<double> levels = c.penetration.empty() ? std::vector<double>{0.3, 0.6, 0.9} : c.penetration;
  std::vector<bool> modes{true, false};
  if (c.balanced) modes = {*c.balanced};
  const int n_random = c.scenarios.value_or(0);

  std::vector<ValidationEntry> entries;
  for (bool balanced : modes) {
    FeederModel model(net, balanced);
    for (double pen : levels) {
      ValidationEntry e;
      e.balanced = balanced;
      e.penetration = pen;
      for (Scenario sc : generate_scenarios(model.network(), pen, n_random, c.seed)) {
        sc.mode = ControlMode::cic;
        const DayResult r = run_day(model, sc, prof, day_settings(c, ControlMode::cic));
        const auto ph = sigma_by_phase(r, net.base().voltage_v);
        for (int k = 0; k < 3; ++k) e.per_phase[static_cast<std::size_t>(k)].merge(ph[static_cast<std::size_t>(k)]);
        e.overall.merge(r.sigma);
        e.scenarios.push_back(sc.id);
      }
      spdlog::info("validate {} {}: sigma {:.3e}", balanced ? "balanced" : "unbalanced", pen, e.overall.sigma);
      entries.push_back(e);
    }
  }
  open_out(dir / "validation.json") << validation_json(entries, net.base().voltage_v).dump(2) << '\n';
  return 0;
}

int cmd_gen_network(const RunConfig& c) {
  RunConfig g = c;
  g.network.clear();
  const Network net = load_or_generate(g);
  const fs::path dir = output_dir(c);
  save_network(net, dir / "network.json");
  spdlog::info("network: {} buses, {} customers -> {}", net.bus_count(), net.customers().size(),
               (dir / "network.json").string());
  return 0;
}

int cmd_gen_profiles(const RunConfig& c) {
  SyntheticSpec spec;
  spec.households = c.households;
  spec.seed = c.seed;
  const Profiles p = generate_profiles(spec);
  const fs::path dir = output_dir(c);
  {
    auto os = open_out(dir / "demand.csv");
    write_series_csv(os, p.demand_kw, p.horizon);
  }
  {
    auto os = open_out(dir / "pv.csv");
    write_series_csv(os, p.pv_kw, p.horizon);
  }
  spdlog::info("profiles: {} households -> {}", spec.households, dir.string());
  return 0;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("gridvolt");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("GRIDVOLT_LOG")) {
    const auto lvl = spdlog::level::from_str(env);
    if (lvl == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("GRIDVOLT_LOG='{}' is not a log level; keeping info", env);
    else
      spdlog::set_level(lvl);
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Time-series LV feeder simulation with legacy, droop and coordinated inverter control"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* s) {
    s->add_option("--config", f.config, "JSON config; flags given on the command line take precedence");
    s->add_option("--network", f.network, "Network JSON (default: generated feeder)");
    s->add_option("--profiles", f.profiles, "Demand CSV: timestamp,customer_id,p_kw");
    s->add_option("--pv", f.pv, "PV availability CSV, same shape (default: clear-sky)");
    s->add_option("--mode", f.mode, "legacy | autonomous | cic | cic-fair");
    s->add_option("--alpha", f.alpha, "Fairness weight for cic-fair");
    s->add_option("--cable", f.cable, "Cable for every line (ow50, ug70, ow95, ug150, ug240)");
    s->add_option("--penetration", f.penetration, "PV penetration level(s) in (0, 1]")->delimiter(',');
    s->add_option("--scenarios", f.scenarios, "Number of random placement scenarios");
    s->add_option("--seed", f.seed, "Seed for generated inputs, scenarios and trip sampling");
    s->add_option("--out", f.out, "Output directory");
    s->add_option("--jobs", f.jobs, "Worker threads (default: available cores)");
    auto* b = s->add_flag("--balanced", f.balanced, "Customers spread over all phases of their bus");
    auto* u = s->add_flag("--unbalanced", f.unbalanced, "Single-phase customers");
    b->excludes(u);
    s->add_option("--buses", f.buses, "Generated feeder size");
    s->add_option("--spacing", f.spacing, "Generated feeder pole spacing, km");
    s->add_option("--customers-per-bus", f.customers_per_bus, "Customers per generated pole");
    s->add_option("--households", f.households, "Number of synthetic profiles");
    s->add_option("--cap", f.cap, "Voltage cap of the coordinated program: re | magnitude");
  };
  auto* run = app.add_subcommand("run", "Simulate one day for one scenario");
  common(run);
  run->add_option("--scenario", f.scenario, "Scenario id (0 near, 1 far, 2.. random)");
  run->add_option("--diagnostics", f.diagnostics, "Write per-solve diagnostics as JSON lines");
  auto* sweep = app.add_subcommand("sweep", "Penetration x scenario x mode sweep with hosting capacity");
  common(sweep);
  auto* validate = app.add_subcommand("validate", "Linear model error against the power-flow oracle");
  common(validate);
  auto* gen_net = app.add_subcommand("gen-network", "Write a generated feeder as JSON");
  common(gen_net);
  auto* gen_prof = app.add_subcommand("gen-profiles", "Write synthetic demand and PV CSVs");
  common(gen_prof);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const RunConfig c = resolve(f);
    if (run->parsed()) return cmd_run(c);
    if (sweep->parsed()) return cmd_sweep(c);
    if (validate->parsed()) return cmd_validate(c);
    if (gen_net->parsed()) return cmd_gen_network(c);
    if (gen_prof->parsed()) return cmd_gen_profiles(c);
  } catch (const SimulationError& e) {
    spdlog::error("simulation: {}", e.what());
    return kExitSimulation;
  } catch (const InputError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("simulation: {}", e.what());
    return kExitSimulation;
  }
  return 0;
}
