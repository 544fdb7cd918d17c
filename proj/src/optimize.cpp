#include "mmfit/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

namespace mmfit {

std::string to_string(OptimizerStatus status) {
  switch (status) {
    case OptimizerStatus::kGradientConverged: return "gradient_converged";
    case OptimizerStatus::kFunctionConverged: return "function_converged";
    case OptimizerStatus::kMaxIterations: return "max_iterations";
    case OptimizerStatus::kLineSearchFailed: return "line_search_failed";
    case OptimizerStatus::kNonFinite: return "non_finite";
  }
  return "unknown";
}

namespace {

struct Sample {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
};

// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db),
// safeguarded to the interior of [a, b].
double cubic_step(const Sample &a, const Sample &b) {
  const double lo = std::min(a.step, b.step), hi = std::max(a.step, b.step);
  const double d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
  const double disc = d1 * d1 - a.slope * b.slope;
  double t = 0.5 * (a.step + b.step);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b.step - a.step);
    const double denom = b.slope - a.slope + 2.0 * d2;
    if (denom != 0.0) t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
  }
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) t = 0.5 * (lo + hi);
  return t;
}

class LineSearch {
 public:
  LineSearch(const Objective &f, const Eigen::VectorXd &x, const Eigen::VectorXd &dir,
             double f0, double slope0, const LbfgsOptions &opt, int &evals)
      : f_(f), x_(x), dir_(dir), f0_(f0), slope0_(slope0), opt_(opt), evals_(evals) {}

  // Returns true with *out set when a step satisfying the strong Wolfe
  // conditions (or at least sufficient decrease) was found.
  bool run(double initial, Sample *out) {
    Sample prev;
    prev.step = 0.0;
    prev.value = f0_;
    prev.slope = slope0_;
    double step = initial;
    for (int i = 0; i < opt_.max_line_search; ++i) {
      Sample cur = eval(step);
      if (!std::isfinite(cur.value)) {
        step = 0.5 * (prev.step + step);
        continue;
      }
      if (cur.value > f0_ + opt_.c1 * cur.step * slope0_ || (i > 0 && cur.value >= prev.value)) {
        return zoom(prev, cur, out);
      }
      if (std::abs(cur.slope) <= -opt_.c2 * slope0_) {
        *out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      step *= 2.0;
    }
    return fallback(out);
  }

 private:
  Sample eval(double step) {
    Sample s;
    s.step = step;
    s.x = x_ + step * dir_;
    s.value = f_(s.x, &s.grad);
    ++evals_;
    s.slope = s.grad.dot(dir_);
    if (std::isfinite(s.value) && s.value <= f0_ + opt_.c1 * step * slope0_ &&
        (!best_ || s.value < best_->value)) {
      best_ = s;
    }
    return s;
  }

  bool zoom(Sample lo, Sample hi, Sample *out) {
    for (int i = 0; i < opt_.max_line_search; ++i) {
      const double step = cubic_step(lo, hi);
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, std::abs(lo.step))) break;
      Sample cur = eval(step);
      if (!std::isfinite(cur.value) || cur.value > f0_ + opt_.c1 * step * slope0_ ||
          cur.value >= lo.value) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -opt_.c2 * slope0_) {
          *out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    return fallback(out);
  }

  bool fallback(Sample *out) {
    if (best_ && best_->value < f0_) {
      *out = *best_;
      return true;
    }
    return false;
  }

  const Objective &f_;
  const Eigen::VectorXd &x_;
  const Eigen::VectorXd &dir_;
  double f0_, slope0_;
  const LbfgsOptions &opt_;
  int &evals_;
  std::optional<Sample> best_;
};

bool function_converged(double prev, double cur, double tol, double floor) {
  return std::abs(prev - cur) <= tol * std::max({std::abs(prev), std::abs(cur), floor});
}

}  // namespace

OptimizerResult minimize_lbfgs(const Objective &f, const Eigen::VectorXd &x0,
                               const LbfgsOptions &options) {
  OptimizerResult res;
  res.x = x0;
  Eigen::VectorXd g;
  res.value = f(res.x, &g);
  res.evaluations = 1;
  res.trace.push_back(res.value);
  if (!std::isfinite(res.value) || !g.allFinite()) {
    res.status = OptimizerStatus::kNonFinite;
    return res;
  }
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (res.iterations = 0; res.iterations < options.max_iterations;) {
    if (res.gradient_norm < options.gradient_tolerance) {
      res.status = OptimizerStatus::kGradientConverged;
      return res;
    }

    // Two-loop recursion.
    Eigen::VectorXd q = g;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t i = m; i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += s_hist[i] * (alpha[i] - beta);
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = g.dot(dir);
    }

    const double initial = m == 0 ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    Sample next;
    LineSearch ls(f, res.x, dir, res.value, slope, options, res.evaluations);
    if (!ls.run(initial, &next)) {
      if (m > 0) {
        // Retry once along steepest descent before giving up.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      res.status = OptimizerStatus::kLineSearchFailed;
      return res;
    }

    ++res.iterations;
    Eigen::VectorXd s = next.x - res.x;
    Eigen::VectorXd y = next.grad - g;
    const double sy = s.dot(y);
    const double prev_value = res.value;
    res.x = std::move(next.x);
    g = std::move(next.grad);
    res.value = next.value;
    res.gradient_norm = g.lpNorm<Eigen::Infinity>();
    res.trace.push_back(res.value);
    if (!g.allFinite()) {
      res.status = OptimizerStatus::kNonFinite;
      return res;
    }
    if (sy > 1e-300) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (function_converged(prev_value, res.value, options.function_tolerance,
                           options.function_tolerance_floor)) {
      res.status = res.gradient_norm < options.gradient_tolerance
                       ? OptimizerStatus::kGradientConverged
                       : OptimizerStatus::kFunctionConverged;
      return res;
    }
  }
  res.status = res.gradient_norm < options.gradient_tolerance ? OptimizerStatus::kGradientConverged
                                                              : OptimizerStatus::kMaxIterations;
  return res;
}

OptimizerResult minimize_gradient_descent(const Objective &f, const Eigen::VectorXd &x0,
                                          const GradientDescentOptions &options) {
  OptimizerResult res;
  res.x = x0;
  Eigen::VectorXd g;
  res.value = f(res.x, &g);
  res.evaluations = 1;
  res.trace.push_back(res.value);
  if (!std::isfinite(res.value) || !g.allFinite()) {
    res.status = OptimizerStatus::kNonFinite;
    return res;
  }
  const bool scaled = options.scaling.size() == x0.size();
  double step = options.initial_step;
  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    res.gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (res.gradient_norm < options.gradient_tolerance) {
      res.status = OptimizerStatus::kGradientConverged;
      return res;
    }
    const Eigen::VectorXd dir = scaled ? Eigen::VectorXd(-options.scaling.cwiseProduct(g))
                                       : Eigen::VectorXd(-g);
    const double slope = g.dot(dir);
    bool accepted = false;
    Eigen::VectorXd x_new, g_new;
    double f_new = 0.0;
    for (int k = 0; k < options.max_backtracks; ++k) {
      x_new = res.x + step * dir;
      f_new = f(x_new, &g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= res.value + options.c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= options.shrink;
    }
    if (!accepted) {
      res.status = OptimizerStatus::kLineSearchFailed;
      return res;
    }
    const double prev = res.value;
    res.x = std::move(x_new);
    g = std::move(g_new);
    res.value = f_new;
    res.trace.push_back(res.value);
    step *= options.grow;
    if (function_converged(prev, res.value, options.function_tolerance, 1e-300)) {
      res.gradient_norm = g.lpNorm<Eigen::Infinity>();
      res.status = OptimizerStatus::kFunctionConverged;
      ++res.iterations;
      return res;
    }
  }
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();
  res.status = OptimizerStatus::kMaxIterations;
  return res;
}

}  // namespace mmfit
