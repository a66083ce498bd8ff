#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace msms {

// f(x) with its gradient written into the second argument.
using ValueGradient = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OptimizerOptions {
  int max_iter = 500;
  double tol = 1e-8;  // converged when sup|g| <= tol * (1 + |f|)
  // Fallback once steps stop changing f: accept when g'H^-1 g / 2 is at most
  // decrement_tol * (1 + |f|).
  double decrement_tol = 1e-10;
  // Start from the inverse of a finite-difference Hessian when the problem
  // has at most this many parameters; a scaled identity otherwise.
  int numeric_start_limit = 250;
  std::function<void(int, double, double)> on_iteration;  // (iter, f, sup|g|)
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // f after every accepted step, starting value first
};

// Quasi-Newton ascent (BFGS on the inverse Hessian) with a backtracking
// Armijo line search. f never decreases across accepted steps.
OptimizerResult maximize_bfgs(const ValueGradient& fg, Eigen::VectorXd x0,
                              const OptimizerOptions& options);

// Hessian by central differences of the gradient with steps
// h_j = step * max(1, |x_j|); symmetrized.
Eigen::MatrixXd numeric_hessian(const ValueGradient& fg, const Eigen::VectorXd& x,
                                double step = 1e-5);

}  // namespace msms
