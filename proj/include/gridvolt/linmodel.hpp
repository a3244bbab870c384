#pragma once

// Linearized voltage model: bus impedance sensitivities, balanced and
// Park-rotated unbalanced voltage changes, and linearization-point tracking.
//
// Per-phase quantities live in each phase's own rotating frame, so the
// nominal voltage of every phase is close to 1 + 0j pu. A quantity in the
// Cartesian frame is recovered by multiplying with phase_rotor(phase).

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gridvolt/core.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/pfsolve.hpp"

namespace gridvolt {

/// A (bus, phase) pair of the reduced network (slack excluded).
struct Node {
  std::size_t bus{0};
  Phase phase{Phase::A};
  bool operator==(const Node&) const = default;
};

/// Ordering of the non-slack nodes: bus order of the network, then phase.
class NodeIndex {
 public:
  NodeIndex() = default;
  explicit NodeIndex(const Network& net) : lookup_(net.bus_count(), {-1, -1, -1}) {
    for (std::size_t b = 1; b < net.bus_count(); ++b)
      for (Phase p : kAllPhases)
        if (net.energized(b).contains(p)) {
          lookup_[b][index(p)] = static_cast<int>(nodes_.size());
          nodes_.push_back({b, p});
        }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& operator[](std::size_t k) const { return nodes_[k]; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  /// Position of a node, or -1 when the phase is absent or the bus is the slack.
  int find(std::size_t bus, Phase p) const { return lookup_.at(bus)[index(p)]; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::array<int, 3>> lookup_;
};

/// Real and imaginary parts of the inverse reduced bus admittance matrix, pu.
struct SensitivityMatrices {
  Eigen::MatrixXd r;
  Eigen::MatrixXd x;
  NodeIndex nodes;
};

inline SensitivityMatrices build_sensitivity(const Network& net) {
  NodeIndex idx(net);
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t child = 1; child < net.bus_count(); ++child) {
    const std::size_t parent = net.parent(child);
    const auto& line = net.feeder_line(child);
    const Matrix3c z = net.line_impedance_pu(child - 1);
    std::vector<Phase> live;
    for (Phase p : kAllPhases)
      if (line.phases.contains(p)) live.push_back(p);
    const auto m = static_cast<Eigen::Index>(live.size());
    Eigen::MatrixXcd zs(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) zs(a, b) = z(index(live[a]), index(live[b]));
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(zs);
    if (!lu.isInvertible()) throw SimulationError("singular segment impedance feeding bus " +
                                                  std::to_string(net.buses()[child].id));
    const Eigen::MatrixXcd ys = lu.inverse();
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        const int ca = idx.find(child, live[a]), cb = idx.find(child, live[b]);
        y(ca, cb) += ys(a, b);
        if (parent != 0) {
          const int pa = idx.find(parent, live[a]), pb = idx.find(parent, live[b]);
          y(pa, pb) += ys(a, b);
          y(pa, cb) -= ys(a, b);
          y(ca, pb) -= ys(a, b);
        }
      }
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(y);
  if (n > 0 && !lu.isInvertible()) throw SimulationError("reduced admittance matrix is singular");
  const Eigen::MatrixXcd z = n > 0 ? Eigen::MatrixXcd(lu.inverse()) : Eigen::MatrixXcd(0, 0);
  // Symmetrize away round-off so downstream quadratic forms stay symmetric.
  return {0.5 * (z.real() + z.real().transpose()), 0.5 * (z.imag() + z.imag().transpose()), std::move(idx)};
}

/// Rotation between two phase frames: D = [cos t, sin t; -sin t, cos t].
struct ParkFrame {
  double theta{0.0};

  /// Frame that maps a voltage change caused on `source` into the frame of `target`.
  static ParkFrame between(Phase target, Phase source) {
    return {std::remainder(phase_angle(target) - phase_angle(source), 2.0 * std::numbers::pi)};
  }

  Eigen::Matrix2d d() const {
    const double c = std::cos(theta), s = std::sin(theta);
    Eigen::Matrix2d m;
    m << c, s, -s, c;
    return m;
  }
};

/// Voltage response [dRe; dIm] of node `target` to a unit rotated-frame
/// power-current [p; q] at node `source`: D(theta) [R X; X -R].
inline Eigen::Matrix2d response_block(double r, double x, const ParkFrame& frame) {
  Eigen::Matrix2d m;
  m << r, x, x, -r;
  return frame.d() * m;
}

/// Maps a raw injection [p; q] at a node to [p~; q~] = (p + jq) / V_nom.
inline Eigen::Matrix2d normalization_block(Complex vnom) {
  const Complex w = 1.0 / vnom;
  Eigen::Matrix2d m;
  m << w.real(), -w.imag(), w.imag(), w.real();
  return m;
}

/// Eqs. of the balanced linear model on a single-phase network:
/// dRe_n = sum_m (R_nm p_m + X_nm q_m), dIm_n = sum_m (X_nm p_m - R_nm q_m),
/// with p, q the signed net injections (generation minus demand). With
/// `normalize`, each injection is first divided by the nominal voltage of
/// its own node.
inline Eigen::VectorXcd delta_v_balanced(const Eigen::VectorXcd& s_pu, const SensitivityMatrices& sens, bool normalize,
                                         const Eigen::VectorXcd& vnom = {}) {
  const auto n = sens.r.rows();
  if (s_pu.size() != n) throw InputError("injection vector has " + std::to_string(s_pu.size()) + " entries, model has " +
                                         std::to_string(n));
  if (normalize && vnom.size() != 0 && vnom.size() != n) throw InputError("nominal voltage vector size mismatch");
  Eigen::VectorXcd s = s_pu;
  if (normalize && vnom.size() == n) s = s.cwiseQuotient(vnom);
  const Eigen::VectorXd p = s.real(), q = s.imag();
  Eigen::VectorXcd dv(n);
  dv.real() = sens.r * p + sens.x * q;
  dv.imag() = sens.x * p - sens.r * q;
  return dv;
}

/// Unbalanced voltage change accumulated line by line. For phase i of node n:
///   [dRe; dIm] = sum over lines on the path to n, sum over phases j,
///                D(theta_ij) [R^ij P + X^ij Q; X^ij P - R^ij Q]
/// where P + jQ is the rotated-frame power flowing through that line on
/// phase j. `s_pu` is indexed by bus (network order) and phase, in each
/// phase's own frame. Returns one entry per node of NodeIndex(net).
inline Eigen::VectorXcd delta_v_unbalanced(const Network& net, std::span<const PhaseValues> s_pu, bool normalize,
                                           const Eigen::VectorXcd& vnom = {}) {
  const NodeIndex idx(net);
  if (s_pu.size() != net.bus_count()) throw InputError("injection array does not match bus count");
  if (normalize && vnom.size() != 0 && vnom.size() != static_cast<Eigen::Index>(idx.size()))
    throw InputError("nominal voltage vector size mismatch");

  // Power carried by each line (indexed by the child bus) per phase.
  std::vector<PhaseValues> through(net.bus_count(), PhaseValues{});
  for (std::size_t b = 1; b < net.bus_count(); ++b)
    for (Phase p : kAllPhases) {
      const int k = idx.find(b, p);
      Complex s = s_pu[b][index(p)];
      if (k < 0) {
        if (s != Complex{}) throw InputError("injection on absent phase at bus " + std::to_string(net.buses()[b].id));
        continue;
      }
      if (normalize && vnom.size() != 0) s /= vnom[k];
      through[b][index(p)] = s;
    }
  for (std::size_t b = net.bus_count(); b-- > 2;)
    for (int k = 0; k < 3; ++k) through[net.parent(b)][k] += through[b][k];

  std::vector<std::array<Eigen::Vector2d, 3>> dv(net.bus_count());
  for (auto& a : dv) a.fill(Eigen::Vector2d::Zero());
  for (std::size_t b = 1; b < net.bus_count(); ++b) {
    const Matrix3c z = net.line_impedance_pu(b - 1);
    const auto& line = net.feeder_line(b);
    for (Phase i : kAllPhases) {
      if (!line.phases.contains(i)) continue;
      Eigen::Vector2d acc = dv[net.parent(b)][index(i)];
      for (Phase j : kAllPhases) {
        if (!line.phases.contains(j)) continue;
        const Complex zij = z(index(i), index(j));
        const Complex t = through[b][index(j)];
        acc += response_block(zij.real(), zij.imag(), ParkFrame::between(i, j)) * Eigen::Vector2d(t.real(), t.imag());
      }
      dv[b][index(i)] = acc;
    }
  }
  Eigen::VectorXcd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& v = dv[idx[k].bus][index(idx[k].phase)];
    out[static_cast<Eigen::Index>(k)] = Complex(v[0], v[1]);
  }
  return out;
}

/// Same quantity as delta_v_unbalanced, evaluated through the inverse
/// admittance matrix instead of the line-by-line accumulation.
inline Eigen::VectorXcd delta_v_sensitivity(const SensitivityMatrices& sens, const Eigen::VectorXcd& s_nodes,
                                            bool normalize, const Eigen::VectorXcd& vnom = {}) {
  const auto n = static_cast<Eigen::Index>(sens.nodes.size());
  if (s_nodes.size() != n) throw InputError("injection vector size mismatch");
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    Complex s = s_nodes[m];
    if (s == Complex{}) continue;
    if (normalize && vnom.size() == n) s /= vnom[m];
    const Eigen::Vector2d pq(s.real(), s.imag());
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto frame = ParkFrame::between(sens.nodes[static_cast<std::size_t>(k)].phase,
                                            sens.nodes[static_cast<std::size_t>(m)].phase);
      const Eigen::Vector2d d = response_block(sens.r(k, m), sens.x(k, m), frame) * pq;
      out[k] += Complex(d[0], d[1]);
    }
  }
  return out;
}

/// All response blocks at once: a 2n x 2n real matrix whose (target, source)
/// block is response_block(R, X, frame). Rows and columns interleave the real
/// and imaginary parts of each node.
inline Eigen::MatrixXd response_matrix(const SensitivityMatrices& sens) {
  const auto n = static_cast<Eigen::Index>(sens.nodes.size());
  Eigen::MatrixXd m(2 * n, 2 * n);
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index j = 0; j < n; ++j)
      m.block<2, 2>(2 * k, 2 * j) = response_block(
          sens.r(k, j), sens.x(k, j),
          ParkFrame::between(sens.nodes[static_cast<std::size_t>(k)].phase, sens.nodes[static_cast<std::size_t>(j)].phase));
  return m;
}

/// |V| = sqrt(Re^2 + Im^2).
inline double recover_magnitude(Complex v) { return std::sqrt(v.real() * v.real() + v.imag() * v.imag()); }

/// Angle of V from the real axis, radians (tan = Im/Re).
inline double recover_angle(Complex v) { return std::atan2(v.imag(), v.real()); }

/// Nominal point of the linearization, per node in rotated-frame pu, and the
/// damping step of its measurement-driven update.
struct LinearizationPoint {
  Eigen::VectorXcd vnom;
  double eta{0.4};

  static LinearizationPoint flat(std::size_t nodes, double eta = 0.4) {
    return {Eigen::VectorXcd::Constant(static_cast<Eigen::Index>(nodes), Complex(1.0, 0.0)), eta};
  }

  void validate() const {
    if (!(eta > 0.0 && eta <= 1.0)) throw InputError("damping factor must lie in (0, 1]");
    for (Eigen::Index k = 0; k < vnom.size(); ++k) {
      const double m = std::abs(vnom[k]);
      if (!(m >= 0.8 && m <= 1.2))
        throw SimulationError("linearization voltage " + std::to_string(m) + " pu left the [0.8, 1.2] sanity band");
    }
  }
};

/// V_nom <- V_nom + eta (V_measured - V_model), element-wise.
inline LinearizationPoint update_vnom(const LinearizationPoint& point, const Eigen::VectorXcd& measured,
                                      const Eigen::VectorXcd& model) {
  if (measured.size() != point.vnom.size() || model.size() != point.vnom.size())
    throw InputError("update_vnom: vectors differ in length");
  LinearizationPoint next{point.vnom + point.eta * (measured - model), point.eta};
  next.validate();
  return next;
}

/// Oracle voltages of every node, rotated into each phase's frame, pu.
inline Eigen::VectorXcd node_voltages_pu(const Network& net, const NodeIndex& idx, const VoltageSolution& sol) {
  Eigen::VectorXcd v(static_cast<Eigen::Index>(idx.size()));
  const double vb = net.base().voltage_v;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& node = idx[k];
    v[static_cast<Eigen::Index>(k)] = sol.voltage_v[node.bus][index(node.phase)] / vb / phase_rotor(node.phase);
  }
  return v;
}

}  // namespace gridvolt
