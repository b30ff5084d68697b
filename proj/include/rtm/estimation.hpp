#pragma once

// Maximum-likelihood estimation: starting values, BFGS with multistart, restricted variants and
// standard errors from the numerically differentiated analytic gradient.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtm/distributions.hpp"
#include "rtm/errors.hpp"
#include "rtm/fit.hpp"
#include "rtm/likelihood.hpp"
#include "rtm/model.hpp"
#include "rtm/optimizer.hpp"
#include "rtm/rng.hpp"

namespace rtm {

enum class Restriction { none, independent, nonrecursive, constants_only };

inline const char* to_string(Restriction r) {
  switch (r) {
    case Restriction::none: return "none";
    case Restriction::independent: return "independent";
    case Restriction::nonrecursive: return "nonrecursive";
    case Restriction::constants_only: return "constants_only";
  }
  return "?";
}

inline Restriction restriction_from_string(const std::string& s) {
  if (s == "none" || s == "full") return Restriction::none;
  if (s == "independent") return Restriction::independent;
  if (s == "nonrecursive") return Restriction::nonrecursive;
  if (s == "constants_only") return Restriction::constants_only;
  throw ConfigError("unknown restriction '" + s + "'");
}

struct EstimationOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  int multistart_count = 1;
  std::uint64_t seed = 1;
  std::optional<UnconstrainedParams> start;
  int workers = 1;
  bool compute_std_errors = true;

  void validate() const {
    if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (multistart_count < 1) throw ConfigError("multistart_count must be at least 1");
    if (!(gradient_tolerance > 0.0)) throw ConfigError("gradient_tolerance must be positive");
    if (workers < 1) throw ConfigError("workers must be at least 1");
  }
};

struct EstimationResult {
  ModelSpec spec;  // the estimated spec (covariates dropped for constants_only)
  Restriction restriction = Restriction::none;
  ParameterSet params;
  UnconstrainedParams unconstrained;
  std::vector<std::string> names;  // flattened layout order
  Eigen::VectorXd estimates;
  Eigen::VectorXd std_errors;  // NaN where unavailable or pinned
  Eigen::VectorXd t_stats;
  std::vector<bool> pinned;
  bool std_errors_available = false;
  Eigen::MatrixXd covariance;  // constrained scale, flattened layout
  double loglik = 0.0;
  double gradient_norm = 0.0;  // infinity norm of the mean-log-likelihood gradient over free coordinates
  int iterations = 0;
  bool converged = false;
  int best_start_index = 0;
  std::vector<double> start_logliks;
  std::string message;
  FitStats fit;
};

namespace detail {

/// Throws naming every column that is a linear combination of the preceding ones.
inline void check_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names, int equation) {
  std::vector<std::string> bad;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double scale = std::max(1.0, x.col(c).norm());
    double resid_norm = x.col(c).norm();
    if (!kept.empty()) {
      Eigen::MatrixXd basis(x.rows(), static_cast<Eigen::Index>(kept.size()));
      for (std::size_t k = 0; k < kept.size(); ++k) basis.col(static_cast<Eigen::Index>(k)) = x.col(kept[k]);
      const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(x.col(c));
      resid_norm = (x.col(c) - basis * coef).norm();
    }
    if (resid_norm <= 1e-9 * scale) bad.push_back(names[static_cast<std::size_t>(c)]);
    else kept.push_back(c);
  }
  if (!bad.empty()) {
    std::string msg = "equation " + std::to_string(equation) + " has perfectly collinear columns:";
    for (const auto& b : bad) msg += " '" + b + "'";
    throw EstimationError(msg);
  }
}

/// Ordered-probit fit of one ordinal outcome on its own covariates (first threshold fixed at 0).
/// Returns (gamma, log threshold increments).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_ordered_probit(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                                                      int levels, bool has_constant) {
  const Eigen::Index k = x.cols(), m = levels - 2, n = x.rows();
  std::vector<double> cum(static_cast<std::size_t>(levels), 0.0);
  for (int v : y) cum[static_cast<std::size_t>(v - 1)] += 1.0;
  for (std::size_t j = 1; j < cum.size(); ++j) cum[j] += cum[j - 1];
  for (double& c : cum) c /= static_cast<double>(n);
  Eigen::VectorXd start = Eigen::VectorXd::Zero(k + m);
  const double q1 = std_normal_quantile(cum[0]);
  if (has_constant) start(0) = -q1;
  const double shift = has_constant ? -q1 : 0.0;
  double prev = 0.0;
  for (Eigen::Index j = 1; j <= m; ++j) {
    const double mu = std_normal_quantile(cum[static_cast<std::size_t>(j)]) + shift;
    start(k + j - 1) = std::log(std::max(mu - prev, 1e-3));
    prev = std::max(mu, prev + 1e-3);
  }

  const Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
    Eigen::VectorXd mu(levels - 1);
    mu(0) = 0.0;
    for (Eigen::Index j = 1; j <= m; ++j) mu(j) = mu(j - 1) + std::exp(v(k + j - 1));
    const Eigen::VectorXd idx = x * v.head(k);
    g = Eigen::VectorXd::Zero(k + m);
    Eigen::VectorXd d_mu = Eigen::VectorXd::Zero(levels - 1);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int j = y[static_cast<std::size_t>(i)];
      const auto [lo, hi] = cut_points(mu, j);
      const double zl = lo - idx(i), zh = hi - idx(i);
      const double p = std_normal_cdf(zh) - std_normal_cdf(zl);
      const double pl = std::isinf(zl) ? 0.0 : std_normal_pdf(zl), ph = std::isinf(zh) ? 0.0 : std_normal_pdf(zh);
      const double pp = std::max(p, kProbabilityFloor);
      ll += std::log(pp);
      g.head(k) -= ((ph - pl) / pp) * x.row(i).transpose();
      if (j >= 2) d_mu(j - 2) -= pl / pp;
      if (j <= levels - 1) d_mu(j - 1) += ph / pp;
    }
    for (Eigen::Index j = 1; j <= m; ++j) {
      double acc = 0.0;
      for (Eigen::Index t = j; t < levels - 1; ++t) acc += d_mu(t);
      g(k + j - 1) = acc * std::exp(v(k + j - 1));
    }
    g = -g / static_cast<double>(n);
    return -ll / static_cast<double>(n);
  };
  OptimizerOptions opt;
  opt.gradient_tolerance = 1e-8;
  const auto res = bfgs_minimize(f, start, opt);
  return {res.x.head(k), res.x.tail(m)};
}

inline std::vector<bool> pinned_mask(const ModelSpec& spec, Restriction r) {
  const ParameterLayout lay(spec);
  std::vector<bool> pin(lay.dim(), false);
  const bool pin_theta = r == Restriction::nonrecursive || r == Restriction::constants_only;
  const bool pin_rho = r == Restriction::independent || r == Restriction::constants_only;
  if (pin_theta) pin[lay.theta12()] = pin[lay.theta13()] = pin[lay.theta23()] = true;
  if (pin_rho) pin[lay.rho12()] = pin[lay.rho13()] = pin[lay.rho23()] = true;
  return pin;
}

inline ModelSpec restricted_spec(const ModelSpec& spec, Restriction r) {
  ModelSpec out = spec;
  if (r == Restriction::constants_only)
    for (auto& e : out.eq) {
      e.covariates.clear();
      e.constant = true;
    }
  return out;
}

inline void check_preconditions(const Design& d, const ModelSpec& spec, std::size_t free_params) {
  if (d.rows() <= free_params)
    throw EstimationError("need more observations (" + std::to_string(d.rows()) + ") than free parameters (" +
                          std::to_string(free_params) + ")");
  auto observed = [&](const std::vector<int>& y, int levels, const std::string& name) {
    std::vector<bool> seen(static_cast<std::size_t>(levels), false);
    for (int v : y) seen[static_cast<std::size_t>(v - 1)] = true;
    for (int j = 0; j < levels; ++j)
      if (!seen[static_cast<std::size_t>(j)])
        throw EstimationError("category " + std::to_string(j + 1) + " of '" + name + "' is never observed");
  };
  observed(d.y2, d.j2, spec.y2);
  observed(d.y3, d.j3, spec.y3);
}

}  // namespace detail

/// OLS for equation 1, univariate ordered probits for equations 2 and 3, zero thetas and correlations.
inline UnconstrainedParams default_start(const Design& d, const ModelSpec& spec) {
  for (int q = 1; q <= 3; ++q) detail::check_full_rank(d.x(q), equation_column_names(spec.equation(q)), q);
  const ParameterLayout lay(spec);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lay.dim()));
  const auto n = static_cast<double>(d.rows());
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(d.x1.cols());
  if (d.x1.cols() > 0) b1 = d.x1.colPivHouseholderQr().solve(d.y1);
  const double rss = (d.y1 - d.x1 * b1).squaredNorm();
  u.segment(lay.gamma1(), lay.k1) = b1;
  u(lay.sigma1()) = 0.5 * std::log(std::max(rss / n, 1e-12));
  const auto [g2, m2] = detail::fit_ordered_probit(d.x2, d.y2, spec.j2, spec.eq[1].constant);
  const auto [g3, m3] = detail::fit_ordered_probit(d.x3, d.y3, spec.j3, spec.eq[2].constant);
  u.segment(lay.gamma2(), lay.k2) = g2;
  u.segment(lay.gamma3(), lay.k3) = g3;
  u.segment(lay.mu2(), spec.j2 - 2) = m2;
  u.segment(lay.mu3(), spec.j3 - 2) = m3;
  return UnconstrainedParams{u};
}

inline UnconstrainedParams default_start(const Dataset& data, const ModelSpec& spec) {
  return default_start(build_design(data, spec), spec);
}

namespace detail {

struct FreeMap {
  std::vector<Eigen::Index> free;
  Eigen::VectorXd base;

  Eigen::VectorXd expand(const Eigen::VectorXd& x) const {
    Eigen::VectorXd full = base;
    for (std::size_t i = 0; i < free.size(); ++i) full(free[i]) = x(static_cast<Eigen::Index>(i));
    return full;
  }
  Eigen::VectorXd restrict_to_free(const Eigen::VectorXd& full) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(free.size()));
    for (std::size_t i = 0; i < free.size(); ++i) x(static_cast<Eigen::Index>(i)) = full(free[i]);
    return x;
  }
};

/// Hessian of the total log-likelihood over free coordinates by central differences of the gradient.
inline Eigen::MatrixXd numerical_hessian(const FreeMap& map, const Eigen::VectorXd& x, const Design& d,
                                         const ModelSpec& spec, int workers) {
  const auto k = x.size();
  Eigen::MatrixXd h(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double step = 1e-5 * std::max(1.0, std::fabs(x(j)));
    Eigen::VectorXd up = x, dn = x;
    up(j) += step;
    dn(j) -= step;
    const auto gu = loglik_and_gradient(UnconstrainedParams{map.expand(up)}, d, spec, workers).gradient;
    const auto gd = loglik_and_gradient(UnconstrainedParams{map.expand(dn)}, d, spec, workers).gradient;
    h.col(j) = (map.restrict_to_free(gu) - map.restrict_to_free(gd)) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace detail

/// Fits the model with the named parameters pinned at zero. constants_only also drops all covariates.
inline EstimationResult estimate_restricted(const Dataset& data, const ModelSpec& full_spec,
                                            const EstimationOptions& options, Restriction restriction) {
  options.validate();
  const ModelSpec spec = detail::restricted_spec(full_spec, restriction);
  const Design d = build_design(data, spec);
  const ParameterLayout lay(spec);
  const std::vector<bool> pin = detail::pinned_mask(spec, restriction);

  detail::FreeMap map;
  for (std::size_t i = 0; i < pin.size(); ++i)
    if (!pin[i]) map.free.push_back(static_cast<Eigen::Index>(i));
  detail::check_preconditions(d, spec, map.free.size());

  UnconstrainedParams start = options.start ? *options.start : default_start(d, spec);
  if (static_cast<std::size_t>(start.values.size()) != lay.dim())
    throw SpecError("explicit start has dimension " + std::to_string(start.values.size()) + ", expected " +
                    std::to_string(lay.dim()));
  for (std::size_t i = 0; i < pin.size(); ++i)
    if (pin[i]) start.values(static_cast<Eigen::Index>(i)) = 0.0;
  map.base = start.values;

  const double n = static_cast<double>(d.rows());
  const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const auto e = loglik_and_gradient(UnconstrainedParams{map.expand(x)}, d, spec, options.workers);
    g = -map.restrict_to_free(e.gradient) / n;
    return -e.value / n;
  };
  OptimizerOptions opt;
  opt.max_iterations = options.max_iterations;
  opt.gradient_tolerance = options.gradient_tolerance;

  const CounterRng starts_rng(options.seed, 0x5157);
  OptimizerResult best;
  EstimationResult out;
  int best_index = -1;
  const Eigen::VectorXd x0 = map.restrict_to_free(start.values);
  for (int s = 0; s < options.multistart_count; ++s) {
    Eigen::VectorXd xs = x0;
    if (s > 0) {
      CounterRng rng = starts_rng.substream(static_cast<std::uint64_t>(s));
      for (Eigen::Index i = 0; i < xs.size(); ++i) xs(i) += rng.uniform() - 0.5;
    }
    auto r = bfgs_minimize(objective, xs, opt);
    out.start_logliks.push_back(std::isfinite(r.value) ? -r.value * n : -std::numeric_limits<double>::infinity());
    if (best_index < 0 || r.value < best.value) {
      best = std::move(r);
      best_index = s;
    }
  }

  out.spec = spec;
  out.restriction = restriction;
  out.unconstrained = UnconstrainedParams{map.expand(best.x)};
  out.params = constrain(out.unconstrained, spec);
  out.names = parameter_names(spec);
  out.estimates = out.params.flatten(spec);
  out.pinned = pin;
  out.loglik = total_loglik(out.params, d, spec, options.workers);
  out.gradient_norm = best.gradient.size() ? best.gradient.lpNorm<Eigen::Infinity>() : 0.0;
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.best_start_index = best_index;
  out.message = best.message;

  const auto dim = static_cast<Eigen::Index>(lay.dim());
  out.std_errors = Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::quiet_NaN());
  out.t_stats = out.std_errors;
  out.covariance = Eigen::MatrixXd::Constant(dim, dim, std::numeric_limits<double>::quiet_NaN());
  if (options.compute_std_errors && !map.free.empty()) {
    const Eigen::MatrixXd info = -detail::numerical_hessian(map, best.x, d, spec, options.workers);
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success) {
      const Eigen::MatrixXd cov_u = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
      const Eigen::MatrixXd jac = constrain_jacobian(out.unconstrained, spec);
      Eigen::MatrixXd jf(dim, static_cast<Eigen::Index>(map.free.size()));
      for (std::size_t i = 0; i < map.free.size(); ++i) jf.col(static_cast<Eigen::Index>(i)) = jac.col(map.free[i]);
      out.covariance = jf * cov_u * jf.transpose();
      out.std_errors = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
      // thresholds fixed at zero and pinned parameters carry no sampling error
      for (std::size_t i = 0; i < pin.size(); ++i)
        if (pin[i]) out.std_errors(static_cast<Eigen::Index>(i)) = std::numeric_limits<double>::quiet_NaN();
      out.t_stats = out.estimates.cwiseQuotient(out.std_errors);
      out.std_errors_available = true;
    }
  }
  out.fit = fit_stats(out.loglik, d.rows(), static_cast<int>(map.free.size()));
  return out;
}

inline EstimationResult estimate(const Dataset& data, const ModelSpec& spec, const EstimationOptions& options = {}) {
  return estimate_restricted(data, spec, options, Restriction::none);
}

}  // namespace rtm
