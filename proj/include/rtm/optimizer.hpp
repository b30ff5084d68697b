#pragma once

// BFGS minimization with a strong-Wolfe line search (bracketing + zoom with safeguarded cubic
// interpolation). The objective callback returns the value and fills the gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rtm {

struct OptimizerOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;  // on the infinity norm of the objective gradient
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search_evaluations = 40;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // objective after the start and after each accepted step
};

/// f(x, grad) -> value; grad is resized by the caller.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), clamped into the interval.
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0 && std::isfinite(fb)) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) t = b - (b - a) * (gb + d2 - d1) / denom;
  }
  // keep away from the ends so the bracket shrinks
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) t = 0.5 * (a + b);
  return t;
}

struct LinePoint {
  double alpha, f, slope;
  Eigen::VectorXd g;
};

}  // namespace detail

inline OptimizerResult bfgs_minimize(const Objective& f, Eigen::VectorXd x0, const OptimizerOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  OptimizerResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.value = f(res.x, res.gradient);
  res.evaluations = 1;
  res.trace.push_back(res.value);
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.message = "objective is not finite at the starting point";
    return res;
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian approximation
  bool scaled = false;
  int resets = 0;

  auto evaluate = [&](double alpha, const Eigen::VectorXd& dir) {
    detail::LinePoint p{alpha, 0.0, 0.0, Eigen::VectorXd(n)};
    p.f = f(res.x + alpha * dir, p.g);
    ++res.evaluations;
    if (!std::isfinite(p.f) || !p.g.allFinite()) p.f = std::numeric_limits<double>::infinity();
    p.slope = std::isfinite(p.f) ? p.g.dot(dir) : std::numeric_limits<double>::quiet_NaN();
    return p;
  };

  while (true) {
    if (res.gradient.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    if (res.iterations >= opt.max_iterations) {
      res.message = "iteration limit reached";
      return res;
    }
    Eigen::VectorXd dir = -(h * res.gradient);
    double slope0 = res.gradient.dot(dir);
    if (!(slope0 < 0.0)) {
      h.setIdentity();
      scaled = false;
      dir = -res.gradient;
      slope0 = res.gradient.dot(dir);
    }
    const double f0 = res.value;
    double alpha = scaled ? 1.0 : std::min(1.0, 1.0 / std::max(dir.lpNorm<Eigen::Infinity>(), 1e-12));

    // Bracketing phase.
    detail::LinePoint prev{0.0, f0, slope0, res.gradient};
    std::optional<detail::LinePoint> accepted;
    detail::LinePoint lo = prev, hi = prev;
    bool zoom = false;
    int evals = 0;
    for (; evals < opt.max_line_search_evaluations; ++evals) {
      auto cur = evaluate(alpha, dir);
      if (!std::isfinite(cur.f) || cur.f > f0 + opt.c1 * alpha * slope0 || (evals > 0 && cur.f >= prev.f)) {
        lo = prev;
        hi = cur;
        zoom = true;
        break;
      }
      if (std::fabs(cur.slope) <= -opt.c2 * slope0) {
        accepted = std::move(cur);
        break;
      }
      if (cur.slope >= 0.0) {
        lo = cur;
        hi = prev;
        zoom = true;
        break;
      }
      prev = std::move(cur);
      alpha *= 2.0;
    }
    // Zoom phase: lo satisfies sufficient decrease with the lowest value seen so far.
    for (; zoom && !accepted && evals < opt.max_line_search_evaluations; ++evals) {
      double trial;
      if (std::isfinite(hi.f))
        trial = detail::cubic_step(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope);
      else
        trial = lo.alpha + 0.25 * (hi.alpha - lo.alpha);
      if (std::fabs(hi.alpha - lo.alpha) < 1e-14 * std::max(1.0, std::fabs(lo.alpha))) break;
      auto cur = evaluate(trial, dir);
      if (!std::isfinite(cur.f) || cur.f > f0 + opt.c1 * trial * slope0 || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::fabs(cur.slope) <= -opt.c2 * slope0) {
          accepted = std::move(cur);
          break;
        }
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    // Fall back to the best sufficient-decrease point if curvature could not be met.
    if (!accepted && lo.alpha > 0.0 && lo.f < f0) accepted = lo;
    if (!accepted) {
      if (resets++ < 2 && !h.isIdentity()) {
        h.setIdentity();
        scaled = false;
        continue;
      }
      res.message = "line search failed to decrease the objective";
      return res;
    }

    const Eigen::VectorXd s = accepted->alpha * dir;
    const Eigen::VectorXd y = accepted->g - res.gradient;
    res.x += s;
    res.value = accepted->f;
    res.gradient = accepted->g;
    ++res.iterations;
    res.trace.push_back(res.value);

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      const double yhy = y.dot(hy);
      h += ((sy + yhy) * rho * rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
}

}  // namespace rtm
