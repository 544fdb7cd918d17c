#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mmfit {

/// Returns f(x); writes the gradient into *grad when grad is non-null.
using Objective = std::function<double(const Eigen::VectorXd &x, Eigen::VectorXd *grad)>;

enum class OptimizerStatus {
  kGradientConverged,
  kFunctionConverged,
  kMaxIterations,
  kLineSearchFailed,
  kNonFinite,
};

std::string to_string(OptimizerStatus status);

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  OptimizerStatus status = OptimizerStatus::kMaxIterations;
  /// Objective value after every accepted step, starting with f(x0).
  std::vector<double> trace;
};

struct LbfgsOptions {
  int history = 10;
  int max_iterations = 1000;
  /// Stop when the infinity norm of the gradient falls below this.
  double gradient_tolerance = 1e-8;
  /// Stop when |f_k - f_{k+1}| <= tol * max(|f_k|, |f_{k+1}|, floor).
  double function_tolerance = 1e-15;
  double function_tolerance_floor = 1e-12;
  int max_line_search = 40;
  double c1 = 1e-4;
  double c2 = 0.9;
};

/// Limited-memory BFGS with a strong-Wolfe line search. Accepted iterates
/// never increase the objective.
OptimizerResult minimize_lbfgs(const Objective &f, const Eigen::VectorXd &x0,
                               const LbfgsOptions &options = {});

struct GradientDescentOptions {
  int max_iterations = 20000;
  double gradient_tolerance = 1e-10;
  double function_tolerance = 1e-16;
  double initial_step = 1.0;
  double shrink = 0.5;
  double grow = 2.0;
  double c1 = 1e-4;
  int max_backtracks = 60;
  /// Optional diagonal preconditioner applied to the gradient.
  Eigen::VectorXd scaling;
};

/// Steepest descent with Armijo backtracking; the step length carries over
/// between iterations and is allowed to grow after a success.
OptimizerResult minimize_gradient_descent(const Objective &f, const Eigen::VectorXd &x0,
                                          const GradientDescentOptions &options = {});

}  // namespace mmfit
