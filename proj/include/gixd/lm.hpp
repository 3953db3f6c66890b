#pragma once

// Levenberg-Marquardt for small dense least-squares problems.

#include <Eigen/Dense>
#include <cmath>
#include <functional>

namespace gixd {

struct LmOptions {
  int max_iterations = 200;
  double x_tol = 1e-12;   // relative step size
  double f_tol = 1e-15;   // relative reduction of the cost
  double g_tol = 1e-14;   // infinity norm of J^T r, scaled by the cost
  double lambda0 = 1e-3;
};

struct LmResult {
  Eigen::VectorXd x;
  Eigen::MatrixXd jacobian;  // at x
  Eigen::VectorXd residual;  // at x
  double cost = 0.0;         // 0.5 |r|^2
  int iterations = 0;
  bool converged = false;
};

/// Minimizes 0.5 |r(x)|^2. `model` fills r and J (rows = samples) at x.
/// Damping follows Marquardt: (J^T J + lambda diag(J^T J)) dx = -J^T r, with
/// lambda shrunk by 10 after an accepted step and grown by 10 otherwise.
inline LmResult levenberg_marquardt(
    const std::function<void(const Eigen::VectorXd &, Eigen::VectorXd &, Eigen::MatrixXd &)> &model,
    Eigen::VectorXd x, const LmOptions &opt = {}) {
  Eigen::VectorXd r, r_new;
  Eigen::MatrixXd J, J_new;
  model(x, r, J);
  double cost = 0.5 * r.squaredNorm();
  double lambda = opt.lambda0;
  LmResult out;
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it + 1;
    const Eigen::MatrixXd A = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= opt.g_tol * std::max(1.0, cost)) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd M = A;
      for (Eigen::Index i = 0; i < M.rows(); ++i)
        M(i, i) += lambda * std::max(A(i, i), 1e-300);
      const Eigen::VectorXd dx = M.ldlt().solve(-g);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e30)
          break;
        continue;
      }
      const Eigen::VectorXd x_new = x + dx;
      model(x_new, r_new, J_new);
      const double cost_new = 0.5 * r_new.squaredNorm();
      if (std::isfinite(cost_new) && cost_new <= cost) {
        const double reduction = cost - cost_new;
        const bool small_step = dx.norm() <= opt.x_tol * (x.norm() + opt.x_tol);
        x = x_new;
        r.swap(r_new);
        J.swap(J_new);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (small_step || reduction <= opt.f_tol * cost) {
          cost = cost_new;
          out.converged = true;
          break;
        }
        cost = cost_new;
      } else {
        lambda *= 10.0;
        if (lambda > 1e30)
          break;
      }
    }
    if (!accepted) {
      // no step lowers the cost any more: stationary to machine precision
      out.converged = true;
      break;
    }
    if (out.converged)
      break;
  }
  out.x = x;
  out.jacobian = J;
  out.residual = r;
  out.cost = cost;
  return out;
}

}  // namespace gixd
