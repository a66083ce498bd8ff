#include "msms/optimizer.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace msms {

Eigen::MatrixXd numeric_hessian(const ValueGradient& fg, const Eigen::VectorXd& x, double step) {
  const auto n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd gp(n), gm(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double hj = step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += hj;
    xm[j] -= hj;
    fg(xp, gp);
    fg(xm, gm);
    h.col(j) = (gp - gm) / (2.0 * hj);
  }
  return 0.5 * (h + h.transpose());
}

namespace {

double sup_norm(const Eigen::VectorXd& g) { return g.size() ? g.cwiseAbs().maxCoeff() : 0.0; }

// Inverse of -H after flooring its eigenvalues, so the ascent direction is
// well defined even away from the optimum.
Eigen::MatrixXd safe_inverse_neg(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-h);
  Eigen::VectorXd ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    ev[i] = 1.0 / std::max(std::abs(ev[i]), 1e-8 * top);
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

OptimizerResult maximize_bfgs(const ValueGradient& fg, Eigen::VectorXd x0,
                              const OptimizerOptions& options) {
  OptimizerResult res;
  const auto n = x0.size();
  Eigen::VectorXd g(n);
  res.x = std::move(x0);
  res.f = fg(res.x, g);
  ++res.evaluations;
  if (!std::isfinite(res.f)) {
    res.message = "non-finite objective at the starting values";
    res.gradient = g;
    return res;
  }
  res.trace.push_back(res.f);

  auto converged = [&](double f, const Eigen::VectorXd& grad) {
    return sup_norm(grad) <= options.tol * (1.0 + std::abs(f));
  };
  // Predicted gain of a full quasi-Newton step; unlike sup|g| it does not
  // depend on how the parameters are scaled.
  auto small_decrement = [&](double f, const Eigen::VectorXd& grad, const Eigen::MatrixXd& hi) {
    return 0.5 * grad.dot(hi * grad) <= options.decrement_tol * (1.0 + std::abs(f));
  };

  auto initial_inverse = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    if (n <= options.numeric_start_limit) {
      const auto h = numeric_hessian(fg, x);
      res.evaluations += static_cast<int>(2 * n);
      if (h.allFinite()) return safe_inverse_neg(h);
    }
    const double scale = 1.0 / std::max(1.0, g.norm());
    return Eigen::MatrixXd::Identity(n, n) * scale;
  };

  if (converged(res.f, g)) {
    res.converged = true;
    res.gradient = g;
    res.message = "converged";
    return res;
  }

  Eigen::MatrixXd hinv = initial_inverse(res.x);
  bool restarted = false;
  int flat_steps = 0;
  Eigen::VectorXd g_new(n);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    Eigen::VectorXd dir = hinv * g;
    if (dir.dot(g) <= 0.0) {
      // Lost ascent; fall back to steepest ascent for this step.
      hinv = Eigen::MatrixXd::Identity(n, n) / std::max(1.0, g.norm());
      dir = hinv * g;
    }
    const double slope = dir.dot(g);
    double step = 1.0;
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = fg(x_new, g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new >= res.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!restarted) {
        // One restart from a fresh curvature estimate before giving up.
        hinv = initial_inverse(res.x);
        restarted = true;
        continue;
      }
      res.message = "line search failed to improve the objective";
      break;
    }
    restarted = false;
    const double gain = f_new - res.f;
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g - g_new;  // gradient change of -f
    res.x = std::move(x_new);
    res.f = f_new;
    g = g_new;
    res.trace.push_back(res.f);
    res.iterations = iter + 1;
    if (options.on_iteration) options.on_iteration(res.iterations, res.f, sup_norm(g));
    if (converged(res.f, g)) {
      res.converged = true;
      res.message = "converged";
      break;
    }
    flat_steps = gain <= 8.0 * std::numeric_limits<double>::epsilon() * std::abs(res.f) ? flat_steps + 1 : 0;
    if (flat_steps >= 5) {
      if (small_decrement(res.f, g, hinv)) {
        res.converged = true;
        res.message = "converged (objective flat to machine precision)";
      } else {
        res.message = "objective stalled at machine precision";
      }
      break;
    }
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = hinv * y;
      hinv += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
              rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";
  res.gradient = g;
  return res;
}

}  // namespace msms
