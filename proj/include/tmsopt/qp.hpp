#pragma once

// Dense convex QP by a primal-dual interior-point method (Mehrotra
// predictor-corrector):
//
//   minimize   0.5 x'Hx + c'x
//   subject to A x <= b,  lb <= x <= ub   (infinite bounds allowed)
//
// The Newton systems are reduced to the normal equations
// (H + A'(Z/S)A + bound terms) dx = r and solved by Cholesky.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tmsopt {

struct QuadraticProgram {
  Eigen::MatrixXd H;
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
};

enum class QpStatus { optimal, iteration_limit, numerical_failure };

struct QpOptions {
  int max_iterations = 80;
  double tolerance = 1e-9;  // scaled KKT residual
  double step_fraction = 0.995;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd z;  // multipliers of A x <= b
  double objective = 0.0;
  int iterations = 0;
  double kkt_error = 0.0;  // scaled residual of the returned iterate
  QpStatus status = QpStatus::iteration_limit;
};

namespace detail {

// Largest step in (0, 1] keeping v + a dv >= 0 (componentwise, masked).
inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace detail

inline QpResult solve_qp(const QuadraticProgram& qp, const QpOptions& opt = {},
                         const Eigen::VectorXd* x_start = nullptr) {
  using Eigen::VectorXd;
  const Eigen::Index n = qp.H.rows();
  const Eigen::Index m = qp.A.rows();
  const double inf = std::numeric_limits<double>::infinity();

  VectorXd lb = qp.lb.size() == n ? qp.lb : VectorXd::Constant(n, -inf);
  VectorXd ub = qp.ub.size() == n ? qp.ub : VectorXd::Constant(n, inf);
  // finite-bound masks (1 where present)
  VectorXd has_l(n), has_u(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    has_l[i] = std::isfinite(lb[i]) ? 1.0 : 0.0;
    has_u[i] = std::isfinite(ub[i]) ? 1.0 : 0.0;
    if (has_l[i] == 0) lb[i] = 0.0;
    if (has_u[i] == 0) ub[i] = 0.0;
  }

  VectorXd x = x_start ? *x_start : VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // strictly inside finite boxes
    if (has_l[i] > 0 && has_u[i] > 0) {
      const double w = ub[i] - lb[i];
      x[i] = std::clamp(x[i], lb[i] + 0.01 * w, ub[i] - 0.01 * w);
    } else if (has_l[i] > 0) {
      x[i] = std::max(x[i], lb[i] + 1.0);
    } else if (has_u[i] > 0) {
      x[i] = std::min(x[i], ub[i] - 1.0);
    }
  }

  VectorXd s = (qp.b - qp.A * x).cwiseMax(1.0);
  VectorXd z = VectorXd::Ones(m);
  VectorXd tl = ((x - lb).array() * has_l.array()).matrix().cwiseMax(1e-2);
  VectorXd tu = ((ub - x).array() * has_u.array()).matrix().cwiseMax(1e-2);
  VectorXd zl = has_l;
  VectorXd zu = has_u;
  const double n_comp = static_cast<double>(m) + has_l.sum() + has_u.sum();

  QpResult res;
  const double scale_p = 1.0 + (m > 0 ? qp.b.lpNorm<Eigen::Infinity>() : 0.0);

  Eigen::MatrixXd K(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt;
  double best_kkt = std::numeric_limits<double>::infinity();
  VectorXd best_x = x;
  VectorXd best_z = z;
  int stall = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    // residuals; bound slacks are masked where absent
    const VectorXd rd = qp.H * x + qp.c + qp.A.transpose() * z - zl + zu;
    const VectorXd rp = qp.A * x + s - qp.b;
    const VectorXd rpl = ((x - lb - tl).array() * has_l.array()).matrix();
    const VectorXd rpu = ((ub - x - tu).array() * has_u.array()).matrix();
    const double comp = s.dot(z) + tl.dot(zl) + tu.dot(zu);
    const double mu = n_comp > 0 ? comp / n_comp : 0.0;
    const double err_p = std::max({rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0,
                                   rpl.lpNorm<Eigen::Infinity>(), rpu.lpNorm<Eigen::Infinity>()});
    const double scale_d =
        1.0 + std::max({qp.c.lpNorm<Eigen::Infinity>(), (qp.H * x).lpNorm<Eigen::Infinity>(),
                        m > 0 ? (qp.A.transpose() * z).lpNorm<Eigen::Infinity>() : 0.0});
    const double kkt =
        std::max({rd.lpNorm<Eigen::Infinity>() / scale_d, err_p / scale_p, mu});
    if (kkt < best_kkt) {
      best_kkt = kkt;
      best_x = x;
      best_z = z;
      stall = 0;
    } else {
      ++stall;
    }
    if (kkt <= opt.tolerance) break;
    // the normal equations lose accuracy once the barrier is tiny
    if (stall >= 3 && mu < 1e-3 * opt.tolerance) break;

    const VectorXd dz_s = z.cwiseQuotient(s);
    const VectorXd dl = (zl.cwiseQuotient(tl).array() * has_l.array()).matrix();
    const VectorXd du = (zu.cwiseQuotient(tu).array() * has_u.array()).matrix();
    K = qp.H;
    if (m > 0) K.noalias() += qp.A.transpose() * dz_s.asDiagonal() * qp.A;
    K.diagonal() += dl + du;
    const double reg = 1e-13 * std::max(1.0, K.diagonal().cwiseAbs().maxCoeff());
    K.diagonal().array() += reg;
    llt.compute(K);
    if (llt.info() != Eigen::Success) {
      res.status = QpStatus::numerical_failure;
      break;
    }

    struct Dir {
      VectorXd x, s, z, tl, tu, zl, zu;
    };
    // Solves the Newton system for complementarity targets rc (rows),
    // rcl, rcu (bounds).
    const auto direction = [&](const VectorXd& rc, const VectorXd& rcl, const VectorXd& rcu) {
      Dir d;
      VectorXd rhs = -rd;
      if (m > 0) rhs -= qp.A.transpose() * ((-rc + z.cwiseProduct(rp)).cwiseQuotient(s));
      for (Eigen::Index i = 0; i < n; ++i) {
        if (has_l[i] > 0) rhs[i] -= (rcl[i] + zl[i] * rpl[i]) / tl[i];
        if (has_u[i] > 0) rhs[i] -= (-rcu[i] - zu[i] * rpu[i]) / tu[i];
      }
      d.x = llt.solve(rhs);
      d.x += llt.solve(rhs - K * d.x);  // one refinement step
      d.s = -rp - qp.A * d.x;
      d.z = (-rc - z.cwiseProduct(d.s)).cwiseQuotient(s);
      d.tl = ((d.x + rpl).array() * has_l.array()).matrix();
      d.tu = ((-d.x + rpu).array() * has_u.array()).matrix();
      d.zl = VectorXd::Zero(n);
      d.zu = VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (has_l[i] > 0) d.zl[i] = (-rcl[i] - zl[i] * d.tl[i]) / tl[i];
        if (has_u[i] > 0) d.zu[i] = (-rcu[i] - zu[i] * d.tu[i]) / tu[i];
      }
      return d;
    };
    const auto step_len = [&](const Dir& d) {
      double a = std::min({detail::max_step(s, d.s), detail::max_step(z, d.z),
                           detail::max_step(tl, d.tl), detail::max_step(tu, d.tu),
                           detail::max_step(zl, d.zl), detail::max_step(zu, d.zu)});
      return a;
    };

    const VectorXd rc0 = s.cwiseProduct(z);
    const VectorXd rcl0 = tl.cwiseProduct(zl);
    const VectorXd rcu0 = tu.cwiseProduct(zu);
    const Dir aff = direction(rc0, rcl0, rcu0);
    const double a_aff = step_len(aff);
    const double mu_aff =
        n_comp > 0 ? ((s + a_aff * aff.s).dot(z + a_aff * aff.z) +
                      (tl + a_aff * aff.tl).dot(zl + a_aff * aff.zl) +
                      (tu + a_aff * aff.tu).dot(zu + a_aff * aff.zu)) /
                         n_comp
                   : 0.0;
    const double sigma = mu > 0 ? std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3) : 0.0;
    const VectorXd rc = rc0 + aff.s.cwiseProduct(aff.z) - VectorXd::Constant(m, sigma * mu);
    const VectorXd rcl =
        ((rcl0 + aff.tl.cwiseProduct(aff.zl)).array() - sigma * mu).matrix().cwiseProduct(has_l);
    const VectorXd rcu =
        ((rcu0 + aff.tu.cwiseProduct(aff.zu)).array() - sigma * mu).matrix().cwiseProduct(has_u);
    const Dir d = direction(rc, rcl, rcu);
    const double a = std::min(1.0, opt.step_fraction * step_len(d));

    x += a * d.x;
    s += a * d.s;
    z += a * d.z;
    tl += a * d.tl;
    tu += a * d.tu;
    zl += a * d.zl;
    zu += a * d.zu;
    // keep absent-bound slots inert
    for (Eigen::Index i = 0; i < n; ++i) {
      if (has_l[i] == 0) tl[i] = 1.0, zl[i] = 0.0;
      if (has_u[i] == 0) tu[i] = 1.0, zu[i] = 0.0;
    }
    res.iterations = it + 1;
  }
  if (res.status != QpStatus::numerical_failure || std::isfinite(best_kkt)) {
    res.status =
        best_kkt <= 100.0 * opt.tolerance ? QpStatus::optimal : QpStatus::iteration_limit;
  }
  res.x = best_x;
  res.z = best_z;
  res.kkt_error = best_kkt;
  res.objective = 0.5 * x.dot(qp.H * x) + qp.c.dot(x);
  return res;
}

}  // namespace tmsopt
