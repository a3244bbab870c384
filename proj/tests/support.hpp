#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "gridvolt/gridvolt.hpp"

namespace gvtest {

using gridvolt::Bus;
using gridvolt::BusId;
using gridvolt::Complex;
using gridvolt::LineSegment;
using gridvolt::Network;
using gridvolt::Phase;
using gridvolt::PhaseSet;

// Slack plus one customer bus behind `km` of `cable`, all on `phases`.
inline Network two_bus(const char* cable = "ow95", double km = 1.0, PhaseSet phases = PhaseSet::single(Phase::A)) {
  std::vector<Bus> buses{{0, PhaseSet::all(), std::nullopt}, {1, phases, 0}};
  std::vector<LineSegment> lines{{0, 1, km, gridvolt::cable_lookup(cable), phases}};
  return Network::build(buses, lines, 0, 300.0);
}

// Slack, then buses 1..n in a chain; each non-slack bus carries one customer.
inline Network chain(int n, const char* cable = "ow95", double km = 0.1, PhaseSet phases = PhaseSet::single(Phase::A)) {
  std::vector<Bus> buses{{0, PhaseSet::all(), std::nullopt}};
  std::vector<LineSegment> lines;
  for (int i = 1; i <= n; ++i) {
    buses.push_back({i, phases, i - 1});
    lines.push_back({i - 1, i, km, gridvolt::cable_lookup(cable), phases});
  }
  return Network::build(buses, lines, 0, 300.0);
}

// Scalar fixed point V = V0 - z conj(S / V) for a single segment, volts and ohm.
// S is the power drawn at the far end (negative for injection), VA.
inline Complex two_bus_fixed_point(Complex z_ohm, Complex s_load_va, double v0 = 230.0) {
  Complex v = v0;
  for (int i = 0; i < 500; ++i) v = v0 - z_ohm * std::conj(s_load_va / v);
  return v;
}

}  // namespace gvtest
