#pragma once

// Coordinated inverter control: one timestep's convex program. Decisions are
// each inverter's active power curtailment P_c >= 0 and lagging reactive
// support Q_c <= 0; voltages follow the linearized model, so line losses are a
// convex quadratic in the decisions.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridvolt/core.hpp"
#include "gridvolt/linmodel.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/pfsolve.hpp"
#include "gridvolt/qcqp.hpp"

namespace gridvolt {

enum class VoltageCap { real_part, magnitude };

struct CicSettings {
  double curtailment_weight{1.0};
  double loss_weight{1.0};
  double alpha{0.0};  // fairness weight, kW per unit variance of curtailment ratios
  VoltageCap cap{VoltageCap::real_part};
  bool normalize{true};
  double v_trip{257.0};
  qcqp::Settings solver{};
};

/// A node of the linear model and the share of a customer's power it carries.
struct NodeShare {
  int node{0};
  double weight{1.0};
};

struct CicInverter {
  int customer{0};
  std::vector<NodeShare> nodes;
  double p_av_kw{0.0};
  double p_d_kw{0.0};
  double q_d_kvar{0.0};
  double rating_kva{5.5};
  double q_min_pu{-0.44};
  double v_max_v{257.0};

  /// Upper curtailment bound: the excess P_av - P_d, or zero without excess.
  double curtailment_bound() const { return std::max(p_av_kw - p_d_kw, 0.0); }
  double q_lower() const { return q_min_pu * rating_kva; }
};

/// Per-unit line loss form of one segment: rows pick parent-minus-child
/// voltage drops, `m` is the real 2k x 2k matrix of dV^H G' dV in the
/// rotated phase frames.
struct LossTerm {
  std::vector<std::pair<int, int>> rows;  // (parent node or -1 for slack, child node) per live phase
  Eigen::MatrixXd m;
};

inline std::vector<LossTerm> loss_terms(const Network& net, const NodeIndex& idx) {
  std::vector<LossTerm> out;
  const double zb = net.base().impedance_ohm();
  for (std::size_t b = 1; b < net.bus_count(); ++b) {
    const auto& line = net.feeder_line(b);
    const Eigen::Matrix3d g = segment_conductance(line) * zb;
    std::vector<Phase> live;
    for (Phase ph : kAllPhases)
      if (line.phases.contains(ph)) live.push_back(ph);
    LossTerm t;
    const auto k = static_cast<Eigen::Index>(live.size());
    t.m = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const std::size_t parent = net.parent(b);
      t.rows.emplace_back(parent == 0 ? -1 : idx.find(parent, live[i]), idx.find(b, live[i]));
      for (Eigen::Index j = 0; j < k; ++j) {
        const Complex gp = g(index(live[i]), index(live[j])) *
                           std::polar(1.0, phase_angle(live[j]) - phase_angle(live[i]));
        t.m(2 * i, 2 * j) = gp.real();
        t.m(2 * i, 2 * j + 1) = -gp.imag();
        t.m(2 * i + 1, 2 * j) = gp.imag();
        t.m(2 * i + 1, 2 * j + 1) = gp.real();
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Timestep-independent data of a feeder: sensitivities, their rotated
/// response matrix and the loss forms. Build once, share across steps.
struct CicModel {
  const Network* network{nullptr};
  const SensitivityMatrices* sensitivity{nullptr};
  Eigen::MatrixXd response;
  std::vector<LossTerm> losses;

  CicModel() = default;
  CicModel(const Network& net, const SensitivityMatrices& sens)
      : network(&net), sensitivity(&sens), response(response_matrix(sens)), losses(loss_terms(net, sens.nodes)) {}
};

struct CicProblem {
  const CicModel* model{nullptr};
  const Network* network{nullptr};
  const SensitivityMatrices* sensitivity{nullptr};
  LinearizationPoint point;
  std::vector<CicInverter> inverters;
  /// Uncontrolled injections per node (rotated frame), pu: loads of customers
  /// without coordinated inverters and any uncontrolled generation.
  Eigen::VectorXcd fixed_s_pu;
  CicSettings settings;
};

enum class CicStatus { optimal, infeasible, max_iter };

inline const char* to_string(CicStatus s) {
  switch (s) {
    case CicStatus::optimal: return "optimal";
    case CicStatus::infeasible: return "infeasible";
    case CicStatus::max_iter: return "max-iter";
  }
  return "?";
}

struct CicSolution {
  CicStatus status{CicStatus::optimal};
  std::vector<double> p_curt_kw;
  std::vector<double> q_kvar;
  Eigen::VectorXcd v_model;  // per node, rotated frame, pu
  double objective_kw{0.0};
  double curtailment_kw{0.0};
  double losses_kw{0.0};
  double fairness_kw{0.0};
  double kkt_residual{0.0};
  int iterations{0};
  std::vector<std::string> violated;
};

// ---------------------------------------------------------------------------

/// Customer with a coordinated inverter, as seen by the assembler.
struct CoordinatedCustomer {
  int customer{0};
  double p_av_kw{0.0};
  double p_d_kw{0.0};
  double q_d_kvar{0.0};
  double rating_kva{5.5};
  double v_max_v{257.0};
};

/// Node shares of a customer: single-phase customers sit on one node,
/// multi-phase customers split their power evenly over their phases.
inline std::vector<NodeShare> customer_nodes(const Network& net, const NodeIndex& idx, const Customer& c) {
  std::vector<NodeShare> out;
  const double w = 1.0 / static_cast<double>(c.phases.size());
  for (Phase p : kAllPhases)
    if (c.phases.contains(p)) {
      const int k = idx.find(c.bus, p);
      if (k < 0) throw InputError("customer " + std::to_string(c.index) + " sits on an absent phase");
      out.push_back({k, w});
    }
  (void)net;
  return out;
}

/// Builds a timestep program. `loads` lists P_d, Q_d (kW, kVAr) for every
/// customer of the network, in Network::customers() order.
inline CicProblem assemble(const CicModel& model, std::span<const CoordinatedCustomer> fleet,
                           std::span<const std::pair<double, double>> loads, const LinearizationPoint& point,
                           const CicSettings& settings, double q_min_pu = -0.44) {
  const Network& net = *model.network;
  const SensitivityMatrices& sens = *model.sensitivity;
  if (loads.size() != net.customers().size()) throw InputError("assemble: one load entry per customer required");
  if (point.vnom.size() != static_cast<Eigen::Index>(sens.nodes.size()))
    throw InputError("assemble: linearization point does not match the model");
  if (!(settings.alpha >= 0.0)) throw InputError("assemble: fairness weight must be non-negative");
  CicProblem prob;
  prob.model = &model;
  prob.network = &net;
  prob.sensitivity = &sens;
  prob.point = point;
  prob.settings = settings;
  prob.fixed_s_pu = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(sens.nodes.size()));

  std::vector<bool> coordinated(net.customers().size(), false);
  for (const auto& f : fleet) {
    for (double v : {f.p_av_kw, f.p_d_kw, f.q_d_kvar, f.rating_kva, f.v_max_v})
      if (!std::isfinite(v)) throw InputError("assemble: non-finite input for customer " + std::to_string(f.customer));
    if (f.rating_kva < 0.0) throw InputError("assemble: negative inverter rating for customer " + std::to_string(f.customer));
    if (f.p_av_kw < 0.0 || f.p_d_kw < 0.0) throw InputError("assemble: negative power for customer " + std::to_string(f.customer));
    if (f.v_max_v > settings.v_trip + 1e-9)
      throw InputError("assemble: V_max above V_trip for customer " + std::to_string(f.customer));
    auto it = std::find_if(net.customers().begin(), net.customers().end(),
                           [&](const Customer& c) { return c.index == f.customer; });
    if (it == net.customers().end()) throw InputError("assemble: unknown customer " + std::to_string(f.customer));
    coordinated[static_cast<std::size_t>(it - net.customers().begin())] = true;
    CicInverter inv;
    inv.customer = f.customer;
    inv.nodes = customer_nodes(net, sens.nodes, *it);
    inv.p_av_kw = std::min(f.p_av_kw, f.rating_kva);  // AC output cannot exceed the rating
    inv.p_d_kw = f.p_d_kw;
    inv.q_d_kvar = f.q_d_kvar;
    inv.rating_kva = f.rating_kva;
    inv.q_min_pu = q_min_pu;
    inv.v_max_v = f.v_max_v;
    prob.inverters.push_back(std::move(inv));
  }
  const double base = net.base().power_kva;
  for (std::size_t i = 0; i < net.customers().size(); ++i) {
    if (coordinated[i]) continue;
    const auto [pd, qd] = loads[i];
    if (!std::isfinite(pd) || !std::isfinite(qd)) throw InputError("assemble: non-finite load");
    for (const auto& share : customer_nodes(net, sens.nodes, net.customers()[i]))
      prob.fixed_s_pu[share.node] += share.weight * Complex(-pd, -qd) / base;
  }
  return prob;
}

/// Fairness term alpha / C * sum (r_h - mean r)^2 with r_h = P_h / excess_h,
/// over customers with positive excess.
struct FairnessValue {
  double value{0.0};
  std::vector<std::size_t> excluded;
};

inline FairnessValue fairness_penalty(std::span<const double> curtailment, std::span<const double> excess, double alpha) {
  if (curtailment.size() != excess.size()) throw InputError("fairness_penalty: size mismatch");
  FairnessValue out;
  std::vector<double> ratios;
  for (std::size_t i = 0; i < excess.size(); ++i) {
    if (excess[i] > 0.0) ratios.push_back(curtailment[i] / excess[i]);
    else out.excluded.push_back(i);
  }
  if (ratios.empty() || alpha == 0.0) return out;
  double mean = 0.0;
  for (double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  double var = 0.0;
  for (double r : ratios) var += (r - mean) * (r - mean);
  out.value = alpha * var / static_cast<double>(ratios.size());
  return out;
}

/// V_max <- V_max - (V_measured - V_trip) when the measurement exceeds V_trip.
inline double update_vmax(double v_max, double v_measured, double v_trip) {
  return v_measured > v_trip ? v_max - (v_measured - v_trip) : v_max;
}

/// Affine voltage map V = v0 + A x of a timestep; rows interleave Re and Im
/// of each node (rotated frame, pu), columns are decision variables in kW/kVAr.
struct VoltageMap {
  Eigen::VectorXd v0;
  Eigen::MatrixXd a;

  Eigen::VectorXcd evaluate(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd v = x.size() ? Eigen::VectorXd(v0 + a * x) : v0;
    Eigen::VectorXcd out(v.size() / 2);
    for (Eigen::Index k = 0; k < out.size(); ++k) out[k] = Complex(v[2 * k], v[2 * k + 1]);
    return out;
  }
};

namespace detail {

struct Layout {
  struct Var {
    std::size_t inverter;
    bool reactive;
  };
  std::vector<Var> vars;
  std::vector<int> p_var, q_var;  // -1 when the variable is fixed at zero
};

inline Layout layout(const CicProblem& p) {
  Layout l;
  for (std::size_t c = 0; c < p.inverters.size(); ++c) {
    const auto& inv = p.inverters[c];
    l.p_var.push_back(inv.curtailment_bound() > 0.0 ? static_cast<int>(l.vars.size()) : -1);
    if (l.p_var.back() >= 0) l.vars.push_back({c, false});
    l.q_var.push_back(inv.q_lower() < 0.0 ? static_cast<int>(l.vars.size()) : -1);
    if (l.q_var.back() >= 0) l.vars.push_back({c, true});
  }
  return l;
}

inline VoltageMap voltage_map(const CicProblem& p, const Layout& l) {
  const auto n = static_cast<Eigen::Index>(p.sensitivity->nodes.size());
  const double base = p.network->base().power_kva;
  const bool norm = p.settings.normalize;

  // Net injection per node at zero decisions.
  Eigen::VectorXcd s0 = p.fixed_s_pu;
  for (const auto& inv : p.inverters)
    for (const auto& sh : inv.nodes)
      s0[sh.node] += sh.weight * Complex(inv.p_av_kw - inv.p_d_kw, -inv.q_d_kvar) / base;

  const Eigen::MatrixXd& resp = p.model->response;
  auto scaled = [&](Eigen::Index node, const Eigen::Vector2d& raw) -> Eigen::Vector2d {
    return norm ? Eigen::Vector2d(normalization_block(p.point.vnom[node]) * raw) : raw;
  };
  Eigen::VectorXd s_stack(2 * n), vnom(2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    s_stack.segment<2>(2 * k) = scaled(k, Eigen::Vector2d(s0[k].real(), s0[k].imag()));
    vnom.segment<2>(2 * k) = Eigen::Vector2d(p.point.vnom[k].real(), p.point.vnom[k].imag());
  }
  VoltageMap map;
  map.v0 = vnom + resp * s_stack;
  map.a = Eigen::MatrixXd::Zero(2 * n, static_cast<Eigen::Index>(l.vars.size()));
  for (std::size_t v = 0; v < l.vars.size(); ++v) {
    const auto& inv = p.inverters[l.vars[v].inverter];
    for (const auto& sh : inv.nodes) {
      // Curtailment removes active injection; Q_c adds reactive injection.
      const Eigen::Vector2d raw = l.vars[v].reactive ? Eigen::Vector2d(0.0, sh.weight / base)
                                                     : Eigen::Vector2d(-sh.weight / base, 0.0);
      map.a.col(static_cast<Eigen::Index>(v)).noalias() += resp.middleCols<2>(2 * sh.node) * scaled(sh.node, raw);
    }
  }
  return map;
}

/// Voltage drop rows E x + e0 of a loss term.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> drop_rows(const LossTerm& t, const VoltageMap& map) {
  const auto k = static_cast<Eigen::Index>(t.rows.size());
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(2 * k, map.a.cols());
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(2 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto [par, child] = t.rows[static_cast<std::size_t>(i)];
    if (par >= 0) {
      e.middleRows(2 * i, 2) += map.a.middleRows(2 * par, 2);
      e0.segment(2 * i, 2) += map.v0.segment(2 * par, 2);
    } else {
      e0[2 * i] += 1.0;  // slack held at 1 + 0j in every phase frame
    }
    e.middleRows(2 * i, 2) -= map.a.middleRows(2 * child, 2);
    e0.segment(2 * i, 2) -= map.v0.segment(2 * child, 2);
  }
  return {std::move(e), std::move(e0)};
}

}  // namespace detail

/// Line losses of the linear model at decision vector x, kW.
inline double model_losses_kw(const CicProblem& p, const VoltageMap& map, const Eigen::VectorXd& x) {
  double loss = 0.0;
  for (const auto& t : p.model->losses) {
    auto [e, e0] = detail::drop_rows(t, map);
    const Eigen::VectorXd d = x.size() ? Eigen::VectorXd(e * x + e0) : e0;
    loss += d.dot(t.m * d);
  }
  return loss * p.network->base().power_kva;
}

/// The convex program in solver form plus the bookkeeping to map it back.
struct CicProgram {
  qcqp::Problem qp;
  detail::Layout layout;
  VoltageMap map;
  double loss_constant_kw{0.0};
};

inline CicProgram build_program(const CicProblem& p) {
  CicProgram prog;
  prog.layout = detail::layout(p);
  prog.map = detail::voltage_map(p, prog.layout);
  const auto& l = prog.layout;
  const auto nv = static_cast<Eigen::Index>(l.vars.size());
  const double base = p.network->base().power_kva;
  const double vb = p.network->base().voltage_v;
  const auto& cfg = p.settings;

  auto& qp = prog.qp;
  qp.H = Eigen::MatrixXd::Zero(nv, nv);
  qp.c = Eigen::VectorXd::Zero(nv);
  qp.x0 = Eigen::VectorXd::Zero(nv);

  for (const auto& t : p.model->losses) {
    auto [e, e0] = detail::drop_rows(t, prog.map);
    const Eigen::MatrixXd me = t.m * e;
    const double w = cfg.loss_weight * base;
    qp.H.noalias() += 2.0 * w * e.transpose() * me;
    qp.c.noalias() += 2.0 * w * me.transpose() * e0;
    prog.loss_constant_kw += base * e0.dot(t.m * e0);
  }
  qp.c0 = cfg.loss_weight * prog.loss_constant_kw;

  std::vector<int> fair_vars;
  std::vector<double> fair_excess;
  for (std::size_t c = 0; c < p.inverters.size(); ++c) {
    const auto& inv = p.inverters[c];
    const int pv = l.p_var[c], qv = l.q_var[c];
    const std::string tag = "customer " + std::to_string(inv.customer);
    if (pv >= 0) {
      qp.c[pv] += cfg.curtailment_weight;
      qp.x0[pv] = 0.5 * inv.curtailment_bound();
      qp.constraints.push_back(qcqp::Constraint::linear({pv}, {-1.0}, 0.0, tag + " P_c >= 0"));
      qp.constraints.push_back(qcqp::Constraint::linear({pv}, {1.0}, -inv.curtailment_bound(), tag + " P_c <= excess"));
      fair_vars.push_back(pv);
      fair_excess.push_back(inv.curtailment_bound());
    }
    if (qv >= 0) {
      qp.x0[qv] = 0.5 * inv.q_lower();
      qp.constraints.push_back(qcqp::Constraint::linear({qv}, {1.0}, 0.0, tag + " Q_c <= 0"));
      qp.constraints.push_back(qcqp::Constraint::linear({qv}, {-1.0}, inv.q_lower(), tag + " Q_c >= Qmin"));
    }
    if (inv.rating_kva > 0.0 && (pv >= 0 || qv >= 0)) {
      // (P_av - P_c)^2 + Q_c^2 <= S^2, scaled by 1/S^2.
      qcqp::Constraint cone;
      const double s = inv.rating_kva;
      std::vector<std::pair<int, Eigen::Vector2d>> cols;
      if (pv >= 0) cols.emplace_back(pv, Eigen::Vector2d(-1.0 / s, 0.0));
      if (qv >= 0) cols.emplace_back(qv, Eigen::Vector2d(0.0, 1.0 / s));
      cone.F.resize(2, static_cast<Eigen::Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) {
        cone.quad_idx.push_back(cols[k].first);
        cone.F.col(static_cast<Eigen::Index>(k)) = cols[k].second;
      }
      cone.f = Eigen::Vector2d(inv.p_av_kw / s, 0.0);
      cone.b = -1.0;
      cone.label = tag + " apparent power";
      qp.constraints.push_back(std::move(cone));
    }
    // Phases of a balanced customer often see identical voltages; their caps
    // would be duplicate rows, so only distinct ones are kept.
    std::vector<int> capped;
    for (const auto& sh : inv.nodes) {
      const Eigen::Index r = 2 * sh.node;
      const bool duplicate = std::any_of(capped.begin(), capped.end(), [&](int k) {
        const Eigen::Index q = 2 * k;
        return (prog.map.a.middleRows<2>(r) - prog.map.a.middleRows<2>(q)).lpNorm<Eigen::Infinity>() <= 1e-12 &&
               (prog.map.v0.segment<2>(r) - prog.map.v0.segment<2>(q)).lpNorm<Eigen::Infinity>() <= 1e-12;
      });
      if (!duplicate) capped.push_back(sh.node);
    }
    for (int node : capped) {
      const Eigen::Index re = 2 * node, im = re + 1;
      const std::string label = tag + " V_max";
      if (cfg.cap == VoltageCap::real_part) {
        // Re{V} (volts) - V_max <= 0.
        qcqp::Constraint c;
        for (Eigen::Index v = 0; v < nv; ++v)
          if (prog.map.a(re, v) != 0.0) {
            c.lin_idx.push_back(static_cast<int>(v));
            c.lin_val.push_back(vb * prog.map.a(re, v));
          }
        c.b = vb * prog.map.v0[re] - inv.v_max_v;
        c.soft = true;
        c.label = label;
        qp.constraints.push_back(std::move(c));
      } else {
        // (|V|^2 - V_max^2) / (2 V_max) <= 0, volts.
        qcqp::Constraint c;
        const double k = vb / std::sqrt(2.0 * inv.v_max_v);
        c.F.resize(2, nv);
        c.F.row(0) = k * prog.map.a.row(re);
        c.F.row(1) = k * prog.map.a.row(im);
        c.f = Eigen::Vector2d(k * prog.map.v0[re], k * prog.map.v0[im]);
        for (Eigen::Index v = 0; v < nv; ++v) c.quad_idx.push_back(static_cast<int>(v));
        c.b = -0.5 * inv.v_max_v;
        c.soft = true;
        c.label = label;
        if (nv == 0) {
          c.quad_idx.clear();
          c.b += c.f.squaredNorm();
        }
        qp.constraints.push_back(std::move(c));
      }
    }
  }

  if (cfg.alpha > 0.0 && !fair_vars.empty()) {
    // alpha/C * r'(I - 11'/C) r with r = P / excess.
    const auto cnt = static_cast<Eigen::Index>(fair_vars.size());
    const double inv_c = 1.0 / static_cast<double>(cnt);
    Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(cnt, cnt) - Eigen::MatrixXd::Constant(cnt, cnt, inv_c);
    for (Eigen::Index a = 0; a < cnt; ++a)
      for (Eigen::Index b = 0; b < cnt; ++b)
        qp.H(fair_vars[static_cast<std::size_t>(a)], fair_vars[static_cast<std::size_t>(b)]) +=
            2.0 * cfg.alpha * inv_c * centering(a, b) / (fair_excess[static_cast<std::size_t>(a)] *
                                                           fair_excess[static_cast<std::size_t>(b)]);
  }
  qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();
  return prog;
}

/// Decision vector (kW, kVAr per variable) from per-inverter setpoints.
inline Eigen::VectorXd pack_decisions(const CicProgram& prog, std::span<const double> p_curt, std::span<const double> q) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(prog.layout.vars.size()));
  for (std::size_t v = 0; v < prog.layout.vars.size(); ++v) {
    const auto& var = prog.layout.vars[v];
    x[static_cast<Eigen::Index>(v)] = var.reactive ? q[var.inverter] : p_curt[var.inverter];
  }
  return x;
}

/// Fills the solution fields implied by setpoints (voltages, objective parts).
inline void evaluate_setpoints(const CicProblem& p, const CicProgram& prog, CicSolution& sol) {
  const Eigen::VectorXd x = pack_decisions(prog, sol.p_curt_kw, sol.q_kvar);
  sol.v_model = prog.map.evaluate(x);
  sol.curtailment_kw = 0.0;
  for (double v : sol.p_curt_kw) sol.curtailment_kw += v;
  sol.losses_kw = model_losses_kw(p, prog.map, x);
  std::vector<double> excess;
  for (const auto& inv : p.inverters) excess.push_back(inv.curtailment_bound());
  sol.fairness_kw = fairness_penalty(sol.p_curt_kw, excess, p.settings.alpha).value;
  sol.objective_kw = p.settings.curtailment_weight * sol.curtailment_kw + p.settings.loss_weight * sol.losses_kw +
                     sol.fairness_kw;
}

inline CicSolution solve_cic(const CicProblem& p) {
  if (!p.model) throw InputError("solve_cic: problem is not assembled");
  const CicProgram prog = build_program(p);
  CicSolution sol;
  sol.p_curt_kw.assign(p.inverters.size(), 0.0);
  sol.q_kvar.assign(p.inverters.size(), 0.0);

  const auto nv = prog.qp.size();
  qcqp::Result r;
  if (nv > 0 || !prog.qp.constraints.empty()) {
    r = qcqp::solve(prog.qp, p.settings.solver);
  } else {
    r.status = qcqp::Status::optimal;
  }
  sol.iterations = r.iterations;
  sol.kkt_residual = r.certificate.kkt_residual();
  sol.status = r.status == qcqp::Status::optimal    ? CicStatus::optimal
               : r.status == qcqp::Status::infeasible ? CicStatus::infeasible
                                                      : CicStatus::max_iter;
  for (std::size_t i : r.violated) sol.violated.push_back(prog.qp.constraints[i].label);

  if (r.x.size() == nv)
    for (std::size_t v = 0; v < prog.layout.vars.size(); ++v) {
      const auto& var = prog.layout.vars[v];
      const auto& inv = p.inverters[var.inverter];
      const double val = r.x[static_cast<Eigen::Index>(v)];
      if (var.reactive) sol.q_kvar[var.inverter] = std::clamp(val, inv.q_lower(), 0.0);
      else sol.p_curt_kw[var.inverter] = std::clamp(val, 0.0, inv.curtailment_bound());
    }
  evaluate_setpoints(p, prog, sol);
  return sol;
}

/// Safe-side setpoints used when no certified optimum exists: every inverter
/// curtails its whole excess and absorbs as much reactive power as its rating
/// and Q bound allow.
inline CicSolution cic_fallback(const CicProblem& p, CicStatus status) {
  const CicProgram prog = build_program(p);
  CicSolution sol;
  sol.status = status;
  for (const auto& inv : p.inverters) {
    const double pc = inv.curtailment_bound();
    const double pout = inv.p_av_kw - pc;
    const double room = std::sqrt(std::max(inv.rating_kva * inv.rating_kva - pout * pout, 0.0));
    sol.p_curt_kw.push_back(pc);
    sol.q_kvar.push_back(-std::min(-inv.q_lower(), room));
  }
  evaluate_setpoints(p, prog, sol);
  return sol;
}

/// Independent constraint check of a solution against the problem data.
/// Returns the largest violation (kW, kVA, or volts depending on the row).
inline double max_constraint_violation(const CicProblem& p, const CicSolution& s) {
  const double vb = p.network->base().voltage_v;
  double worst = 0.0;
  for (std::size_t c = 0; c < p.inverters.size(); ++c) {
    const auto& inv = p.inverters[c];
    const double pc = s.p_curt_kw[c], q = s.q_kvar[c];
    worst = std::max({worst, -pc, pc - inv.curtailment_bound(), q, inv.q_lower() - q});
    const double pout = inv.p_av_kw - pc;
    worst = std::max(worst, std::sqrt(pout * pout + q * q) - inv.rating_kva);
    for (const auto& sh : inv.nodes) {
      const Complex v = s.v_model[sh.node] * vb;
      const double measure = p.settings.cap == VoltageCap::real_part ? v.real() : std::abs(v);
      worst = std::max(worst, measure - inv.v_max_v);
    }
  }
  return worst;
}

inline nlohmann::json to_json(const CicSolution& s) {
  return {{"status", to_string(s.status)},
          {"objective_kw", s.objective_kw},
          {"curtailment_kw", s.curtailment_kw},
          {"losses_kw", s.losses_kw},
          {"fairness_kw", s.fairness_kw},
          {"kkt_residual", s.kkt_residual},
          {"iterations", s.iterations},
          {"violated", s.violated}};
}

}  // namespace gridvolt
