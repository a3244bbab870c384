#pragma once

// Three-phase unbalanced power flow for radial feeders by backward/forward
// sweep with constant-power loads and full 3x3 segment coupling.

#include <array>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gridvolt/core.hpp"
#include "gridvolt/netmodel.hpp"

namespace gridvolt {

using PhaseValues = std::array<Complex, 3>;

/// Complex power at a bus, kW + j kVAr per phase. Injection into the network is positive.
struct PowerInjection {
  BusId bus{0};
  PhaseValues s_kva{};
};

struct VoltageSolution {
  /// Phasors in volts, indexed like Network::buses(); absent phases are zero.
  std::vector<PhaseValues> voltage_v;
  /// Current entering each bus from its parent, amperes. Entry 0 holds the
  /// total current leaving the slack.
  std::vector<PhaseValues> branch_current_a;
  int iterations{0};
  double max_mismatch_pu{0.0};
};

struct SweepOptions {
  double tol_pu{1e-8};
  int max_iter{100};
};

inline PhaseValues slack_reference(const PerUnitBase& base) {
  return {base.voltage_v * phase_rotor(Phase::A), base.voltage_v * phase_rotor(Phase::B),
          base.voltage_v * phase_rotor(Phase::C)};
}

/// Reusable sweep engine; keeps per-unit segment impedances for repeated solves
/// on one network. Stateless between calls.
class SweepSolver {
 public:
  explicit SweepSolver(const Network& net) : net_(&net) {
    z_pu_.reserve(net.lines().size());
    for (std::size_t k = 0; k < net.lines().size(); ++k) {
      Matrix3c z = net.line_impedance_pu(k);
      if (z.norm() == 0.0)
        throw SimulationError("segment " + std::to_string(net.lines()[k].from_bus) + "-" +
                              std::to_string(net.lines()[k].to_bus) + " has zero impedance");
      z_pu_.push_back(z);
    }
  }

  const Network& network() const noexcept { return *net_; }

  /// `s_pu` holds the per-unit complex injection per bus (network order) and phase.
  VoltageSolution solve(std::span<const PhaseValues> s_pu, const SweepOptions& opt = {}) const {
    const Network& net = *net_;
    const std::size_t n = net.bus_count();
    if (s_pu.size() != n) throw InputError("injection vector does not match bus count");
    if (!(opt.tol_pu > 0.0)) throw InputError("power flow tolerance must be positive");

    std::vector<PhaseValues> v(n), v_next(n), current_inj(n), branch(n);
    for (std::size_t i = 0; i < n; ++i)
      for (Phase p : kAllPhases) {
        const bool live = net.energized(i).contains(p);
        v[i][index(p)] = live ? phase_rotor(p) : Complex{};
        if (!live && s_pu[i][index(p)] != Complex{})
          throw InputError("injection on absent phase " + std::string(1, phase_letter(p)) + " at bus " +
                           std::to_string(net.buses()[i].id));
      }
    v_next[0] = v[0];

    VoltageSolution out;
    double mismatch = 0.0;
    for (int it = 1; it <= opt.max_iter; ++it) {
      injection_currents(s_pu, v, current_inj);
      backward(current_inj, branch);
      for (std::size_t i = 1; i < n; ++i) {
        const Eigen::Vector3cd j(branch[i][0], branch[i][1], branch[i][2]);
        const Eigen::Vector3cd drop = z_pu_[i - 1] * j;
        const auto& up = v_next[net.parent(i)];
        for (Phase p : kAllPhases) {
          const int k = index(p);
          v_next[i][k] = net.energized(i).contains(p) ? up[k] - drop[k] : Complex{};
        }
      }
      mismatch = 0.0;
      for (std::size_t i = 1; i < n; ++i)
        for (int k = 0; k < 3; ++k)
          mismatch = std::max(mismatch, std::abs((v_next[i][k] - v[i][k]) * std::conj(current_inj[i][k])));
      v.swap(v_next);
      v_next[0] = v[0];
      out.iterations = it;
      if (mismatch <= opt.tol_pu) break;
    }
    if (!(mismatch <= opt.tol_pu))
      throw SimulationError("power flow did not converge in " + std::to_string(opt.max_iter) +
                            " iterations (mismatch " + std::to_string(mismatch) + " pu)");

    injection_currents(s_pu, v, current_inj);
    backward(current_inj, branch);
    const double vb = net.base().voltage_v, ib = net.base().current_a();
    out.voltage_v.resize(n);
    out.branch_current_a.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) {
        out.voltage_v[i][k] = v[i][k] * vb;
        out.branch_current_a[i][k] = branch[i][k] * ib;
      }
    out.max_mismatch_pu = mismatch;
    return out;
  }

  /// Dense per-unit injection array from a sparse list in kW/kVAr.
  std::vector<PhaseValues> to_per_unit(std::span<const PowerInjection> injections) const {
    std::vector<PhaseValues> s(net_->bus_count(), PhaseValues{});
    const double base = net_->base().power_kva;
    for (const auto& inj : injections) {
      const std::size_t i = net_->position(inj.bus);
      for (int k = 0; k < 3; ++k) {
        if (!std::isfinite(inj.s_kva[k].real()) || !std::isfinite(inj.s_kva[k].imag()))
          throw InputError("non-finite injection at bus " + std::to_string(inj.bus));
        s[i][k] += inj.s_kva[k] / base;
      }
    }
    return s;
  }

 private:
  void injection_currents(std::span<const PhaseValues> s, const std::vector<PhaseValues>& v,
                          std::vector<PhaseValues>& out) const {
    for (std::size_t i = 0; i < v.size(); ++i)
      for (int k = 0; k < 3; ++k)
        out[i][k] = (i == 0 || v[i][k] == Complex{}) ? Complex{} : std::conj(s[i][k] / v[i][k]);
  }

  // Branch current into each bus = current drawn by its subtree. BFS order
  // means children always come after parents, so a reverse pass suffices.
  void backward(const std::vector<PhaseValues>& inj, std::vector<PhaseValues>& branch) const {
    const Network& net = *net_;
    for (std::size_t i = 0; i < inj.size(); ++i)
      for (int k = 0; k < 3; ++k) branch[i][k] = -inj[i][k];
    branch[0] = PhaseValues{};
    for (std::size_t i = inj.size(); i-- > 1;)
      for (int k = 0; k < 3; ++k) branch[net.parent(i)][k] += branch[i][k];
  }

  const Network* net_;
  std::vector<Matrix3c> z_pu_;
};

inline VoltageSolution solve_power_flow(const Network& net, std::span<const PowerInjection> injections,
                                        double tol_pu = 1e-8, int max_iter = 100) {
  SweepSolver solver(net);
  const auto s = solver.to_per_unit(injections);
  return solver.solve(s, {tol_pu, max_iter});
}

/// Conductance matrix Re{Z^-1} of a segment restricted to its phases, Siemens.
inline Eigen::Matrix3d segment_conductance(const LineSegment& line) {
  const Matrix3c z = line.impedance_ohm();
  std::vector<int> live;
  for (Phase p : kAllPhases)
    if (line.phases.contains(p)) live.push_back(index(p));
  const auto m = static_cast<Eigen::Index>(live.size());
  Eigen::MatrixXcd sub(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = z(live[a], live[b]);
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(sub);
  if (!lu.isInvertible())
    throw SimulationError("segment " + std::to_string(line.from_bus) + "-" + std::to_string(line.to_bus) +
                          " has a singular impedance matrix");
  const Eigen::MatrixXcd y = lu.inverse();
  Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) g(live[a], live[b]) = y(a, b).real();
  return g;
}

/// Active losses from voltages alone: sum over segments of dV^H Re{Y} dV.
/// For a single conductor this is Re{y*} * |V_m - V_n|^2. Returns kW.
inline double line_losses_exact(const Network& net, const VoltageSolution& sol) {
  double watts = 0.0;
  for (std::size_t i = 1; i < net.bus_count(); ++i) {
    const auto& line = net.feeder_line(i);
    const Eigen::Matrix3d g = segment_conductance(line);
    const auto& a = sol.voltage_v[net.parent(i)];
    const auto& b = sol.voltage_v[i];
    Eigen::Vector3cd dv;
    for (int k = 0; k < 3; ++k) dv[k] = line.phases.contains(kAllPhases[k]) ? a[k] - b[k] : Complex{};
    watts += (dv.adjoint() * g.cast<Complex>() * dv)(0).real();
  }
  return watts / 1e3;
}

/// Complex three-phase power delivered by the transformer into the feeder, kVA.
inline Complex slack_power(const VoltageSolution& sol) {
  Complex s{};
  for (int k = 0; k < 3; ++k) s += sol.voltage_v[0][k] * std::conj(sol.branch_current_a[0][k]);
  return s / 1e3;
}

/// Magnitude of the transformer's three-phase power, direction-agnostic, kVA.
inline double slack_apparent_power(const VoltageSolution& sol) { return std::abs(slack_power(sol)); }

inline void write_voltage_csv(std::ostream& os, const Network& net, const VoltageSolution& sol) {
  os << "bus,phase,re_v,im_v,magnitude_v\n";
  for (std::size_t i = 0; i < net.bus_count(); ++i)
    for (Phase p : kAllPhases) {
      if (!net.energized(i).contains(p)) continue;
      const Complex v = sol.voltage_v[i][index(p)];
      os << net.buses()[i].id << ',' << phase_letter(p) << ',' << v.real() << ',' << v.imag() << ',' << std::abs(v)
         << '\n';
    }
}

}  // namespace gridvolt
