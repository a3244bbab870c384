#pragma once

// Primal-dual interior-point method for small dense convex QCQPs
//
//   minimize    1/2 x'Hx + c'x + c0
//   subject to  g_i(x) = ||F_i x_[S_i] + f_i||^2 + a_i'x + b_i <= 0
//
// with H positive semidefinite. Inequalities are handled with slacks, so the
// iteration may start from an infeasible point. Directions use Mehrotra's
// predictor-corrector with a residual-norm backtracking line search. When the
// iteration cannot reach feasibility, a phase-one problem that relaxes the
// constraints marked `soft` decides whether the instance is infeasible.

#include <algorithm>
#include <cstdlib>
#include <cstdio>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gridvolt::qcqp {

struct Constraint {
  // Linear part a'x over the listed variables.
  std::vector<int> lin_idx;
  std::vector<double> lin_val;
  double b{0.0};
  // Quadratic part ||F x[quad_idx] + f||^2.
  std::vector<int> quad_idx;
  Eigen::MatrixXd F;
  Eigen::VectorXd f;
  bool soft{false};
  std::string label;

  bool quadratic() const { return !quad_idx.empty(); }

  double value(const Eigen::VectorXd& x) const {
    double v = b;
    for (std::size_t k = 0; k < lin_idx.size(); ++k) v += lin_val[k] * x[lin_idx[k]];
    if (quadratic()) v += residual(x).squaredNorm();
    return v;
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& x) const {
    Eigen::VectorXd xs(static_cast<Eigen::Index>(quad_idx.size()));
    for (std::size_t k = 0; k < quad_idx.size(); ++k) xs[static_cast<Eigen::Index>(k)] = x[quad_idx[k]];
    return F * xs + f;
  }

  /// Adds scale * gradient into `g`.
  void add_gradient(const Eigen::VectorXd& x, double scale, Eigen::VectorXd& g) const {
    for (std::size_t k = 0; k < lin_idx.size(); ++k) g[lin_idx[k]] += scale * lin_val[k];
    if (quadratic()) {
      const Eigen::VectorXd gq = 2.0 * F.transpose() * residual(x);
      for (std::size_t k = 0; k < quad_idx.size(); ++k) g[quad_idx[k]] += scale * gq[static_cast<Eigen::Index>(k)];
    }
  }

  /// Adds scale * Hessian (2 F'F on the quadratic support) into `h`.
  void add_hessian(double scale, Eigen::MatrixXd& h) const {
    if (!quadratic()) return;
    const Eigen::MatrixXd fq = 2.0 * scale * (F.transpose() * F);
    for (std::size_t r = 0; r < quad_idx.size(); ++r)
      for (std::size_t c = 0; c < quad_idx.size(); ++c)
        h(quad_idx[r], quad_idx[c]) += fq(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  /// Support of the gradient (may contain duplicates; callers accumulate).
  std::vector<int> support() const {
    std::vector<int> s = lin_idx;
    s.insert(s.end(), quad_idx.begin(), quad_idx.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  }

  static Constraint linear(std::vector<int> idx, std::vector<double> val, double b, std::string label = {}) {
    Constraint c;
    c.lin_idx = std::move(idx);
    c.lin_val = std::move(val);
    c.b = b;
    c.label = std::move(label);
    return c;
  }
};

struct Problem {
  Eigen::MatrixXd H;
  Eigen::VectorXd c;
  double c0{0.0};
  std::vector<Constraint> constraints;
  Eigen::VectorXd x0;  // optional starting point

  Eigen::Index size() const { return c.size(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + c.dot(x) + c0; }
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const { return H * x + c; }
};

enum class Status { optimal, infeasible, max_iter };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::infeasible: return "infeasible";
    case Status::max_iter: return "max-iter";
  }
  return "?";
}

struct Settings {
  double tol{1e-10};          // internal stopping tolerance
  double certify_tol{1e-6};   // KKT residual required to report `optimal`
  int max_iter{120};
  double step_fraction{0.995};
  bool allow_phase_one{true};
};

struct Certificate {
  double stationarity{0.0};
  double primal_violation{0.0};
  double complementarity{0.0};
  double kkt_residual() const { return std::max({stationarity, primal_violation, complementarity}); }
};

struct Result {
  Status status{Status::max_iter};
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  double objective{0.0};
  int iterations{0};
  Certificate certificate;
  std::vector<std::size_t> violated;  // soft constraints violated at the phase-one optimum
};

/// KKT residuals of (x, lambda) evaluated from the problem data alone.
inline Certificate certify(const Problem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  Certificate cert;
  Eigen::VectorXd grad = p.objective_gradient(x);
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    const double l = lambda[static_cast<Eigen::Index>(i)];
    const double g = p.constraints[i].value(x);
    p.constraints[i].add_gradient(x, l, grad);
    cert.primal_violation = std::max(cert.primal_violation, g);
    cert.complementarity = std::max(cert.complementarity, std::abs(l * g));
  }
  cert.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  return cert;
}

namespace detail {

struct Residuals {
  Eigen::VectorXd dual;    // grad f + J' lambda
  Eigen::VectorXd primal;  // g + s
  Eigen::VectorXd g;
  double norm() const { return std::sqrt(dual.squaredNorm() + primal.squaredNorm()); }
};

inline Residuals residuals(const Problem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& lambda) {
  const auto m = static_cast<Eigen::Index>(p.constraints.size());
  Residuals r;
  r.dual = p.objective_gradient(x);
  r.g.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& con = p.constraints[static_cast<std::size_t>(i)];
    r.g[i] = con.value(x);
    con.add_gradient(x, lambda[i], r.dual);
  }
  r.primal = r.g + s;
  return r;
}

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv, double fraction) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -fraction * v[i] / dv[i]);
  return alpha;
}

inline Result solve_impl(const Problem& p, const Settings& opt);

inline Result phase_one(const Problem& p, const Settings& opt) {
  // minimize w  s.t. soft g_i(x) - w <= 0, hard g_i(x) <= 0, -w - 1 <= 0.
  const Eigen::Index n = p.size();
  Problem q;
  q.H = Eigen::MatrixXd::Zero(n + 1, n + 1);
  q.c = Eigen::VectorXd::Zero(n + 1);
  q.c[n] = 1.0;
  for (const auto& con : p.constraints) {
    Constraint c = con;
    if (con.soft) {
      c.lin_idx.push_back(static_cast<int>(n));
      c.lin_val.push_back(-1.0);
    }
    q.constraints.push_back(std::move(c));
  }
  q.constraints.push_back(Constraint::linear({static_cast<int>(n)}, {-1.0}, -1.0, "phase-one floor"));
  Settings o = opt;
  o.allow_phase_one = false;
  return solve_impl(q, o);
}

inline Result solve_impl(const Problem& p, const Settings& opt) {
  const Eigen::Index n = p.size();
  const auto m = static_cast<Eigen::Index>(p.constraints.size());
  Result res;
  Eigen::VectorXd x = p.x0.size() == n ? p.x0 : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd s(m), lambda = Eigen::VectorXd::Ones(m);
  for (Eigen::Index i = 0; i < m; ++i) s[i] = std::max(-p.constraints[static_cast<std::size_t>(i)].value(x), 1.0);

  std::vector<std::vector<int>> supports;
  supports.reserve(p.constraints.size());
  for (const auto& con : p.constraints) supports.push_back(con.support());
  std::vector<Eigen::Index> dense_rows, dense_curv;

  const double scale_d = 1.0 + (n ? p.c.lpNorm<Eigen::Infinity>() : 0.0);
  double best_norm = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    Residuals r = residuals(p, x, s, lambda);
    const double mu = m ? s.dot(lambda) / static_cast<double>(m) : 0.0;
    if (r.dual.lpNorm<Eigen::Infinity>() <= opt.tol * scale_d &&
        (m == 0 || (r.primal.lpNorm<Eigen::Infinity>() <= opt.tol && mu <= opt.tol))) {
      break;
    }
    // Rounding floor: no 10% gain in several iterations at an already
    // certifiable point.
    const double norm = r.norm() + mu;
    if (norm < 0.9 * best_norm) {
      best_norm = norm;
      since_best = 0;
    } else if (++since_best >= 8 && certify(p, x, lambda).kkt_residual() <= 1e-2 * opt.certify_tol) {
      break;
    }
    if (m && lambda.maxCoeff() > 1e12) break;  // diverging multipliers: treat as infeasible

    // Reduced Newton matrix H_L + J' diag(lambda/s) J, constraint gradients as rows of J.
    Eigen::MatrixXd K = p.H;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, n);
    Eigen::VectorXd gi(n);
    dense_curv.clear();
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& con = p.constraints[static_cast<std::size_t>(i)];
      if (con.quad_idx.size() > 8) dense_curv.push_back(i);
      else con.add_hessian(lambda[i], K);
      gi.setZero();
      con.add_gradient(x, 1.0, gi);
      J.row(i) = gi.transpose();
    }
    const Eigen::VectorXd w = lambda.cwiseQuotient(s);
    // Rows with a short support (boxes, small cones) are added entry by entry;
    // the remaining dense rows go through one matrix product.
    dense_rows.clear();
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& sup = supports[static_cast<std::size_t>(i)];
      if (sup.size() > 8) {
        dense_rows.push_back(i);
        continue;
      }
      for (int a : sup)
        for (int b : sup) K(a, b) += w[i] * J(i, a) * J(i, b);
    }
    Eigen::Index quad_rows = 0;
    for (Eigen::Index i : dense_curv) quad_rows += p.constraints[static_cast<std::size_t>(i)].F.rows();
    if (!dense_rows.empty() || quad_rows > 0) {
      // Stack sqrt(w) J rows and sqrt(2 lambda) F rows: one rank update adds both.
      const auto d = static_cast<Eigen::Index>(dense_rows.size());
      Eigen::MatrixXd jd = Eigen::MatrixXd::Zero(d + quad_rows, n);
      for (Eigen::Index k = 0; k < d; ++k) jd.row(k) = std::sqrt(w[dense_rows[static_cast<std::size_t>(k)]]) *
                                                       J.row(dense_rows[static_cast<std::size_t>(k)]);
      Eigen::Index row = d;
      for (Eigen::Index i : dense_curv) {
        const auto& con = p.constraints[static_cast<std::size_t>(i)];
        const double sc = std::sqrt(2.0 * std::max(lambda[i], 0.0));
        for (std::size_t c = 0; c < con.quad_idx.size(); ++c)
          jd.block(row, con.quad_idx[c], con.F.rows(), 1) += sc * con.F.col(static_cast<Eigen::Index>(c));
        row += con.F.rows();
      }
      K.selfadjointView<Eigen::Lower>().rankUpdate(jd.transpose());
      K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
    }
    K.diagonal().array() += 1e-12;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success) break;

    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& ds, Eigen::VectorXd& dl) {
      const Eigen::VectorXd coef = (lambda.cwiseProduct(r.primal) - rc).cwiseQuotient(s);
      dx = ldlt.solve(-r.dual - J.transpose() * coef);
      const Eigen::VectorXd jdx = J * dx;
      ds = -r.primal - jdx;
      dl = (lambda.cwiseProduct(jdx + r.primal) - rc).cwiseQuotient(s);
    };

    Eigen::VectorXd dx, ds, dl;
    // Predictor.
    Eigen::VectorXd rc = s.cwiseProduct(lambda);
    direction(rc, dx, ds, dl);
    double sigma = 0.1;
    if (m) {
      const double a_aff = std::min(max_step(s, ds, 1.0), max_step(lambda, dl, 1.0));
      const double mu_aff = (s + a_aff * ds).dot(lambda + a_aff * dl) / static_cast<double>(m);
      sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 0.0, 1.0);
      // Corrector.
      rc = s.cwiseProduct(lambda) + ds.cwiseProduct(dl) - Eigen::VectorXd::Constant(m, sigma * mu);
      direction(rc, dx, ds, dl);
    }

    Eigen::VectorXd xn, sn, ln;
    // Backtracking on the residual norm at complementarity target `target`;
    // returns the accepted step, or 0 when none decreases the merit.
    auto search = [&](double target) {
      auto merit = [&](const Residuals& rr, const Eigen::VectorXd& ss, const Eigen::VectorXd& ll) {
        double comp = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) comp += std::pow(ss[i] * ll[i] - target, 2);
        return std::sqrt(rr.dual.squaredNorm() + rr.primal.squaredNorm() + comp);
      };
      const double merit0 = merit(r, s, lambda);
      double alpha = m ? std::min(max_step(s, ds, opt.step_fraction), max_step(lambda, dl, opt.step_fraction)) : 1.0;
      for (int bt = 0; bt < 40; ++bt) {
        xn = x + alpha * dx;
        sn = s + alpha * ds;
        ln = lambda + alpha * dl;
        if (merit(residuals(p, xn, sn, ln), sn, ln) <= (1.0 - 1e-4 * alpha) * merit0) return alpha;
        alpha *= 0.5;
      }
      return 0.0;
    };
    // The corrector term is not a descent direction for the merit in
    // general. When it makes little progress, a plain Newton step towards a
    // more central target is taken instead.
    if (search(sigma * mu) < 0.1 && m) {
      const double target = std::max(sigma, 0.5) * mu;
      rc = s.cwiseProduct(lambda) - Eigen::VectorXd::Constant(m, target);
      direction(rc, dx, ds, dl);
      search(target);
    }
    x = std::move(xn);
    s = std::move(sn);
    lambda = std::move(ln);
  }

  res.iterations = it;
  res.x = x;
  res.lambda = lambda;
  res.objective = p.objective(x);
  res.certificate = certify(p, x, lambda);
  if (res.certificate.kkt_residual() <= opt.certify_tol) {
    res.status = Status::optimal;
    return res;
  }
  res.status = Status::max_iter;
  if (opt.allow_phase_one && std::any_of(p.constraints.begin(), p.constraints.end(), [](auto& c) { return c.soft; })) {
    const Result p1 = phase_one(p, opt);
    const double w = p1.x[n];
    if (w > 1e-7) {
      res.status = Status::infeasible;
      const Eigen::VectorXd xp = p1.x.head(n);
      for (std::size_t i = 0; i < p.constraints.size(); ++i)
        if (p.constraints[i].soft && p.constraints[i].value(xp) > 1e-9) res.violated.push_back(i);
      res.x = xp;
      res.iterations += p1.iterations;
    }
  }
  return res;
}

}  // namespace detail

inline Result solve(const Problem& p, const Settings& opt = {}) { return detail::solve_impl(p, opt); }

}  // namespace gridvolt::qcqp
