#pragma once

// Demand and PV availability time series: cubic-spline interpolation of
// half-hourly data, CSV ingestion, and a synthetic generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridvolt/core.hpp"

namespace gridvolt {

/// Simulated day: `steps` one-minute intervals from `start_minute` after midnight.
struct Horizon {
  int start_minute{8 * 60};
  int steps{690};  // 08:00 up to 19:30

  int end_minute() const { return start_minute + steps; }
};

struct Interpolated {
  std::vector<double> values;
  bool linear_fallback{false};
};

/// Natural cubic spline through equally spaced knots, sampled every minute
/// from the first to the last knot inclusive. Knot values are reproduced
/// exactly and negative samples are clamped to zero. Fewer than four knots
/// fall back to linear interpolation (flagged in the result).
inline Interpolated interpolate_profile(const std::vector<double>& knots, int spacing_minutes = 30) {
  if (knots.empty()) throw InputError("interpolate_profile: no knots");
  if (spacing_minutes < 1) throw InputError("interpolate_profile: knot spacing must be at least one minute");
  for (double k : knots)
    if (!std::isfinite(k)) throw InputError("interpolate_profile: non-finite knot value");
  const std::size_t n = knots.size();
  const double h = spacing_minutes;
  Interpolated out;
  out.values.resize((n - 1) * static_cast<std::size_t>(spacing_minutes) + 1);

  std::vector<double> m(n, 0.0);  // second derivatives, zero at both ends
  if (n < 4) {
    out.linear_fallback = true;
  } else {
    // Tridiagonal system for interior second derivatives (Thomas algorithm).
    const std::size_t k = n - 2;
    std::vector<double> diag(k, 4.0), rhs(k);
    for (std::size_t i = 0; i < k; ++i) rhs[i] = 6.0 * (knots[i + 2] - 2.0 * knots[i + 1] + knots[i]) / (h * h);
    for (std::size_t i = 1; i < k; ++i) {
      const double w = 1.0 / diag[i - 1];
      diag[i] -= w;
      rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i-- > 0;) m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
  }

  if (n == 1) {
    out.values[0] = std::max(knots[0], 0.0);
    return out;
  }
  for (std::size_t s = 0; s < out.values.size(); ++s) {
    const std::size_t seg = std::min(s / static_cast<std::size_t>(spacing_minutes), n - 2);
    const double t = static_cast<double>(s) - static_cast<double>(seg) * h;
    if (t == 0.0) {
      out.values[s] = knots[seg];
    } else if (t == h) {
      out.values[s] = knots[seg + 1];
    } else {
      const double a = (h - t) / h, b = t / h;
      double v = a * knots[seg] + b * knots[seg + 1];
      if (!out.linear_fallback)
        v += ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0;
      out.values[s] = v;
    }
    out.values[s] = std::max(out.values[s], 0.0);
  }
  return out;
}

/// Per-minute demand and PV availability for a set of profiles. Customer i
/// uses profile i mod (number of profiles).
struct Profiles {
  Horizon horizon;
  std::vector<std::vector<double>> demand_kw;
  std::vector<std::vector<double>> pv_kw;
  double q_ratio{0.328};

  double demand(std::size_t customer, int t) const {
    return demand_kw[customer % demand_kw.size()][static_cast<std::size_t>(t)];
  }
  double reactive_demand(std::size_t customer, int t) const { return q_ratio * demand(customer, t); }
  double pv(std::size_t customer, int t) const { return pv_kw[customer % pv_kw.size()][static_cast<std::size_t>(t)]; }

  void validate() const {
    if (horizon.steps < 1) throw InputError("profiles: empty horizon");
    if (demand_kw.empty() || pv_kw.empty()) throw InputError("profiles: need at least one demand and one PV series");
    for (const auto* set : {&demand_kw, &pv_kw})
      for (const auto& series : *set) {
        if (static_cast<int>(series.size()) != horizon.steps)
          throw InputError("profiles: series length " + std::to_string(series.size()) + " differs from horizon " +
                           std::to_string(horizon.steps));
        for (double v : series)
          if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("profiles: values must be finite and non-negative");
      }
    if (!(q_ratio >= 0.0)) throw InputError("profiles: reactive ratio must be non-negative");
  }

  /// Same demand, no PV anywhere.
  Profiles without_pv() const {
    Profiles p = *this;
    for (auto& s : p.pv_kw) std::fill(s.begin(), s.end(), 0.0);
    return p;
  }
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Minutes after midnight of "HH:MM", "HH:MM:SS", or an ISO date-time such as
/// "2012-01-15 13:30" / "2012-01-15T13:30:00". A bare integer is read as minutes.
inline int parse_time_of_day(std::string s) {
  auto trim = [](std::string& x) {
    x.erase(0, x.find_first_not_of(" \t\r\""));
    x.erase(x.find_last_not_of(" \t\r\"") + 1);
  };
  trim(s);
  if (const auto sep = s.find_first_of("T "); sep != std::string::npos) s = s.substr(sep + 1);
  int hh = 0, mm = 0, ss = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (s.find(':') == std::string::npos) {
    if (!(in >> mm) || !in.eof()) throw InputError("unreadable timestamp '" + s + "'");
    return mm;
  }
  in >> hh >> c1 >> mm;
  if (!in || c1 != ':') throw InputError("unreadable timestamp '" + s + "'");
  if (in >> c2 >> ss && c2 != ':') throw InputError("unreadable timestamp '" + s + "'");
  if (hh < 0 || hh > 24 || mm < 0 || mm > 59) throw InputError("timestamp out of range '" + s + "'");
  return hh * 60 + mm;
}

/// Reads `timestamp, customer_id, p_kw` rows. Series at 30-minute resolution
/// are spline-interpolated; 1-minute series are used as they are. Each series
/// must cover the horizon. Returned series are ordered by customer id.
inline std::vector<std::vector<double>> read_series_csv(std::istream& in, const Horizon& horizon,
                                                        const std::string& what = "profiles") {
  std::map<long, std::map<int, double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 3) throw InputError(what + " line " + std::to_string(lineno) + ": expected 3 columns");
    if (lineno == 1 && cells[0].find("timestamp") != std::string::npos) continue;
    try {
      const int minute = parse_time_of_day(cells[0]);
      const long id = std::stol(cells[1]);
      const double p = std::stod(cells[2]);
      if (!std::isfinite(p) || p < 0.0) throw InputError("negative or non-finite power");
      if (!rows[id].emplace(minute, p).second) throw InputError("duplicate timestamp");
    } catch (const std::logic_error&) {
      throw InputError(what + " line " + std::to_string(lineno) + ": unreadable value");
    } catch (const InputError& e) {
      throw InputError(what + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (rows.empty()) throw InputError(what + ": no data rows");

  std::vector<std::vector<double>> out;
  for (const auto& [id, series] : rows) {
    std::vector<int> minutes;
    std::vector<double> values;
    for (auto [m, v] : series) {
      minutes.push_back(m);
      values.push_back(v);
    }
    const std::string who = what + " customer " + std::to_string(id);
    if (minutes.size() < 2) throw InputError(who + ": need at least two samples");
    const int step = minutes[1] - minutes[0];
    for (std::size_t i = 1; i < minutes.size(); ++i)
      if (minutes[i] - minutes[i - 1] != step) throw InputError(who + ": irregular sampling interval");
    if (step != 1 && step != 30) throw InputError(who + ": sampling interval must be 1 or 30 minutes");
    std::vector<double> minute_values = step == 1 ? values : interpolate_profile(values, 30).values;
    const int first = minutes.front();
    if (first > horizon.start_minute || first + static_cast<int>(minute_values.size()) < horizon.end_minute())
      throw InputError(who + ": series does not cover the simulated horizon");
    const auto off = static_cast<std::ptrdiff_t>(horizon.start_minute - first);
    out.emplace_back(minute_values.begin() + off, minute_values.begin() + off + horizon.steps);
  }
  return out;
}

inline std::vector<std::vector<double>> read_series_csv(const std::filesystem::path& path, const Horizon& horizon,
                                                        const std::string& what = "profiles") {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + what + " file '" + path.string() + "'");
  return read_series_csv(in, horizon, what);
}

inline void write_series_csv(std::ostream& os, const std::vector<std::vector<double>>& series, const Horizon& horizon) {
  os << "timestamp,customer_id,p_kw\n";
  char buf[64];
  for (std::size_t c = 0; c < series.size(); ++c)
    for (std::size_t t = 0; t < series[c].size(); ++t) {
      const int m = horizon.start_minute + static_cast<int>(t);
      std::snprintf(buf, sizeof buf, "%02d:%02d,%zu,%.6f\n", m / 60, m % 60, c, series[c][t]);
      os << buf;
    }
}

// ---------------------------------------------------------------------------
// Synthetic profiles
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int households{30};
  double pv_peak_kw{5.0};
  double mean_demand_kw{0.77};
  std::uint64_t seed{0};
};

/// Clear-sky PV availability: a sine bump between sunrise and sunset.
inline double clear_sky_pv(double minute_of_day, double peak_kw, double sunrise = 6.0 * 60, double sunset = 20.0 * 60) {
  if (minute_of_day <= sunrise || minute_of_day >= sunset) return 0.0;
  return peak_kw * std::sin(std::numbers::pi * (minute_of_day - sunrise) / (sunset - sunrise));
}

/// Half-hourly two-peak household demand (morning and evening) with seeded
/// per-household variation, interpolated to minutes and scaled so the mean over
/// the horizon equals `mean_demand_kw`. PV is identical clear-sky output for
/// every household.
inline Profiles generate_profiles(const SyntheticSpec& spec, const Horizon& horizon = {}) {
  if (spec.households < 1) throw InputError("generate_profiles: need at least one household");
  if (!(spec.pv_peak_kw >= 0.0) || !(spec.mean_demand_kw >= 0.0)) throw InputError("generate_profiles: negative level");
  std::mt19937_64 rng(spec.seed);
  auto u = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  Profiles p;
  p.horizon = horizon;
  const int first_knot = horizon.start_minute / 30 * 30;
  const int last_knot = (horizon.end_minute() + 29) / 30 * 30;
  const int offset = horizon.start_minute - first_knot;
  for (int h = 0; h < spec.households; ++h) {
    const double morning = 7.5 * 60 + 60.0 * u(), evening = 18.5 * 60 + 60.0 * u();
    const double base = 0.25 + 0.3 * u(), amp_m = 0.6 + 0.8 * u(), amp_e = 1.0 + 1.2 * u();
    std::vector<double> knots;
    for (int m = first_knot; m <= last_knot; m += 30) {
      const double dm = (m - morning) / 70.0, de = (m - evening) / 90.0;
      const double noise = 0.15 * (u() - 0.5);
      knots.push_back(std::max(0.05, base + amp_m * std::exp(-dm * dm) + amp_e * std::exp(-de * de) + noise));
    }
    const auto minutes = interpolate_profile(knots, 30).values;
    std::vector<double> series(minutes.begin() + offset, minutes.begin() + offset + horizon.steps);
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    for (double& v : series) v *= spec.mean_demand_kw / mean;
    p.demand_kw.push_back(std::move(series));
  }
  std::vector<double> pv(static_cast<std::size_t>(horizon.steps));
  for (int t = 0; t < horizon.steps; ++t) pv[static_cast<std::size_t>(t)] = clear_sky_pv(horizon.start_minute + t, spec.pv_peak_kw);
  p.pv_kw.assign(static_cast<std::size_t>(spec.households), pv);
  return p;
}

}  // namespace gridvolt
