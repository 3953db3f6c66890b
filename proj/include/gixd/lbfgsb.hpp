#pragma once

// Bound-constrained limited-memory BFGS for small smooth problems.
//
// Each iteration fixes the variables that sit on a bound with the gradient
// pushing outward, builds the two-loop L-BFGS direction on the remaining
// ones, and backtracks along the projected path x(t) = P(x + t d) until the
// Armijo condition holds. Curvature pairs failing s.y > eps |s||y| are
// skipped so the implicit Hessian stays positive definite.

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace gixd {

struct LbfgsbOptions {
  int max_iterations = 500;
  int memory = 10;
  double pg_tol = 1e-8;      // infinity norm of the projected gradient
  double f_rel_tol = 0.0;    // optional relative decrease stop
  double armijo = 1e-4;
};

struct LbfgsbResult {
  Eigen::VectorXd x;
  double f = 0;
  Eigen::VectorXd gradient;
  double projected_gradient_norm = 0;
  int iterations = 0;
  bool converged = false;
};

using Objective = std::function<double(const Eigen::VectorXd &, Eigen::VectorXd &)>;

inline Eigen::VectorXd project_box(const Eigen::VectorXd &x, const Eigen::VectorXd &lo,
                                   const Eigen::VectorXd &hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

/// x - P(x - g): zero exactly at a bound-constrained stationary point.
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd &x, const Eigen::VectorXd &g,
                                          const Eigen::VectorXd &lo, const Eigen::VectorXd &hi) {
  return x - project_box(x - g, lo, hi);
}

inline LbfgsbResult lbfgsb_minimize(const Objective &f, Eigen::VectorXd x, const Eigen::VectorXd &lo,
                                    const Eigen::VectorXd &hi, const LbfgsbOptions &opt = {}) {
  const Eigen::Index n = x.size();
  x = project_box(x, lo, hi);
  Eigen::VectorXd g(n), g_new(n);
  double fx = f(x, g);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;  // (s, y)
  LbfgsbResult out;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd pg = projected_gradient(x, g, lo, hi);
    out.projected_gradient_norm = pg.lpNorm<Eigen::Infinity>();
    if (out.projected_gradient_norm < opt.pg_tol) {
      out.converged = true;
      break;
    }
    out.iterations = it + 1;

    // variables held on their bounds this iteration
    Eigen::VectorXd free = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if ((x[i] <= lo[i] && g[i] > 0) || (x[i] >= hi[i] && g[i] < 0))
        free[i] = 0;

    Eigen::VectorXd q = g.cwiseProduct(free);
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      const auto &[s, y] = mem[k];
      const double rho = 1.0 / y.cwiseProduct(free).dot(s.cwiseProduct(free));
      alpha[k] = std::isfinite(rho) ? rho * s.cwiseProduct(free).dot(q) : 0.0;
      q -= alpha[k] * y.cwiseProduct(free);
    }
    if (!mem.empty()) {
      const auto &[s, y] = mem.back();
      const double yy = y.cwiseProduct(free).squaredNorm();
      const double gamma = yy > 0 ? s.cwiseProduct(free).dot(y.cwiseProduct(free)) / yy : 1.0;
      q *= gamma > 0 && std::isfinite(gamma) ? gamma : 1.0;
    } else {
      // first step: unit-length move in the steepest-descent direction
      const double gn = q.norm();
      if (gn > 0)
        q /= std::max(gn, 1.0);
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const auto &[s, y] = mem[k];
      const double rho = 1.0 / y.cwiseProduct(free).dot(s.cwiseProduct(free));
      const double beta = std::isfinite(rho) ? rho * y.cwiseProduct(free).dot(q) : 0.0;
      q += s.cwiseProduct(free) * (alpha[k] - beta);
    }
    Eigen::VectorXd d = -q;
    if (!(d.dot(g) < 0)) {
      d = -g.cwiseProduct(free);
      mem.clear();
    }

    double t = 1.0;
    Eigen::VectorXd x_new(n);
    double f_new = fx;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = project_box(x + t * d, lo, hi);
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + opt.armijo * g.dot(x_new - x)) {
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved || x_new == x) {
      // no representable descent left along the projected path
      out.converged = out.projected_gradient_norm < std::sqrt(opt.pg_tol);
      break;
    }
    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    const double f_old = fx;
    x = x_new;
    fx = f_new;
    g = g_new;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      mem.emplace_back(s, y);
      if (static_cast<int>(mem.size()) > opt.memory)
        mem.pop_front();
    }
    if (opt.f_rel_tol > 0 && f_old - fx <= opt.f_rel_tol * std::max({std::abs(f_old), std::abs(fx), 1.0})) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.f = fx;
  out.gradient = g;
  out.projected_gradient_norm = projected_gradient(x, g, lo, hi).lpNorm<Eigen::Infinity>();
  if (out.projected_gradient_norm < opt.pg_tol)
    out.converged = true;
  return out;
}

}  // namespace gixd
