#pragma once

// Post-estimation: average marginal effects on ordinal level probabilities, plus re-exports of
// the fit statistics and likelihood-ratio test.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtm/distributions.hpp"
#include "rtm/errors.hpp"
#include "rtm/estimation.hpp"
#include "rtm/fit.hpp"
#include "rtm/model.hpp"

namespace rtm {

enum class EffectKind { continuous, dummy };

inline const char* to_string(EffectKind k) { return k == EffectKind::continuous ? "continuous" : "dummy"; }

struct MarginalEffect {
  std::string variable;
  int equation = 2;
  EffectKind kind = EffectKind::continuous;
  Eigen::VectorXd effects;  // one per ordinal level
};

using MarginalEffectsTable = std::vector<MarginalEffect>;

/// Fit statistics of an estimate relative to the constants-only log-likelihood.
inline FitStats fit_stats(const EstimationResult& result, double loglik_constants_only) {
  return fit_stats(result.loglik, result.fit.n, result.fit.k_free, loglik_constants_only);
}

namespace detail {

inline void check_equation(int q) {
  if (q != 2 && q != 3) throw SpecError("marginal effects are defined for equations 2 and 3");
}

/// Ordinal index per row with the error correlations set to zero; in equation 3 the latent y2*
/// is replaced by its systematic part gamma2'w + theta12*y1.
inline Eigen::VectorXd ordinal_index(const ParameterSet& p, const Design& d, int q) {
  const Eigen::VectorXd y2_hat = d.x2 * p.gamma2 + p.theta12 * d.y1;
  if (q == 2) return y2_hat;
  return d.x3 * p.gamma3 + p.theta13 * d.y1 + p.theta23 * y2_hat;
}

/// Coefficient of `variable` in the stacked index of equation q.
inline double stacked_coefficient(const ParameterSet& p, const ModelSpec& spec, const std::string& variable, int q) {
  if (variable == spec.y1) return q == 2 ? p.theta12 : p.theta13;
  if (q == 3 && variable == spec.y2) return p.theta23;
  const auto names = equation_column_names(spec.equation(q));
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == variable && !(k == 0 && spec.equation(q).constant))
      return (q == 2 ? p.gamma2 : p.gamma3)(static_cast<Eigen::Index>(k));
  throw SpecError("variable '" + variable + "' does not enter equation " + std::to_string(q));
}

inline const Eigen::VectorXd& thresholds(const ParameterSet& p, int q) { return q == 2 ? p.mu2 : p.mu3; }

/// P(level j | index) for every level under a unit-variance normal error.
inline Eigen::VectorXd level_probabilities(const Eigen::VectorXd& mu, double index) {
  const auto levels = mu.size() + 1;
  Eigen::VectorXd out(levels);
  double prev = 0.0;
  for (Eigen::Index j = 0; j < levels; ++j) {
    const double cdf = j < mu.size() ? std_normal_cdf(mu(j) - index) : 1.0;
    out(j) = cdf - prev;
    prev = cdf;
  }
  return out;
}

}  // namespace detail

/// Predicted level probabilities per row (n x J) under the index used for marginal effects.
inline Eigen::MatrixXd predicted_probabilities(const EstimationResult& result, const Dataset& data, int q) {
  detail::check_equation(q);
  const Design d = build_design(data, result.spec);
  const Eigen::VectorXd idx = detail::ordinal_index(result.params, d, q);
  const Eigen::VectorXd& mu = detail::thresholds(result.params, q);
  Eigen::MatrixXd out(idx.size(), mu.size() + 1);
  for (Eigen::Index r = 0; r < idx.size(); ++r) out.row(r) = detail::level_probabilities(mu, idx(r)).transpose();
  return out;
}

/// Average over rows of [phi(mu_{j-1} - idx) - phi(mu_j - idx)] * kappa_variable.
inline Eigen::VectorXd marginal_effect_continuous(const EstimationResult& result, const Dataset& data,
                                                  const std::string& variable, int q) {
  detail::check_equation(q);
  const double kappa = detail::stacked_coefficient(result.params, result.spec, variable, q);
  const Design d = build_design(data, result.spec);
  const Eigen::VectorXd idx = detail::ordinal_index(result.params, d, q);
  const Eigen::VectorXd& mu = detail::thresholds(result.params, q);
  const auto levels = mu.size() + 1;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(levels);
  for (Eigen::Index r = 0; r < idx.size(); ++r) {
    double lower = 0.0;  // phi at mu_{j-1}; zero at -inf
    for (Eigen::Index j = 0; j < levels; ++j) {
      const double upper = j < mu.size() ? std_normal_pdf(mu(j) - idx(r)) : 0.0;
      sum(j) += (lower - upper) * kappa;
      lower = upper;
    }
  }
  return sum / static_cast<double>(std::max<Eigen::Index>(idx.size(), 1));
}

/// P(level j | dummy = 1, others at means) - P(level j | dummy = 0, others at means).
inline Eigen::VectorXd marginal_effect_dummy(const EstimationResult& result, const Dataset& data,
                                             const std::string& variable, int q) {
  detail::check_equation(q);
  if (variable == result.spec.y1 || variable == result.spec.y2)
    throw SpecError("endogenous variable '" + variable + "' cannot be treated as a dummy");
  const double kappa = detail::stacked_coefficient(result.params, result.spec, variable, q);
  const auto& col = data.column(variable);
  for (double v : col)
    if (!(v == 0.0 || v == 1.0) && !std::isnan(v))
      throw DataError("column '" + variable + "' is not 0/1-valued");
  const Design d = build_design(data, result.spec);
  const auto n = static_cast<double>(d.rows());
  if (d.rows() == 0) throw DataError("no rows for marginal effects");
  const Eigen::VectorXd idx = detail::ordinal_index(result.params, d, q);
  double mean_var = 0.0;
  for (double v : col) mean_var += v;
  mean_var /= n;
  // the index is linear in the regressors, so the index at the means is the mean index
  const double mean_idx = idx.sum() / n;
  const Eigen::VectorXd& mu = detail::thresholds(result.params, q);
  const Eigen::VectorXd p1 = detail::level_probabilities(mu, mean_idx + kappa * (1.0 - mean_var));
  const Eigen::VectorXd p0 = detail::level_probabilities(mu, mean_idx - kappa * mean_var);
  return p1 - p0;
}

inline bool is_binary_column(const std::vector<double>& col) {
  bool saw0 = false, saw1 = false;
  for (double v : col) {
    if (v == 0.0) saw0 = true;
    else if (v == 1.0) saw1 = true;
    else if (!std::isnan(v)) return false;
  }
  return saw0 && saw1;
}

/// Effects for every regressor of equations 2 and 3, including the endogenous ones.
inline MarginalEffectsTable marginal_effects_table(const EstimationResult& result, const Dataset& data) {
  MarginalEffectsTable out;
  for (int q = 2; q <= 3; ++q) {
    std::vector<std::string> vars{result.spec.y1};
    if (q == 3) vars.push_back(result.spec.y2);
    for (const auto& c : result.spec.equation(q).covariates) vars.push_back(c);
    for (const auto& v : vars) {
      const bool endogenous = v == result.spec.y1 || v == result.spec.y2;
      const double kappa = detail::stacked_coefficient(result.params, result.spec, v, q);
      // pinned structural effects (restricted fits) have nothing to report
      if (endogenous && kappa == 0.0 && result.restriction != Restriction::none &&
          result.restriction != Restriction::independent)
        continue;
      MarginalEffect me{v, q, EffectKind::continuous, {}};
      if (!endogenous && is_binary_column(data.column(v))) {
        me.kind = EffectKind::dummy;
        me.effects = marginal_effect_dummy(result, data, v, q);
      } else {
        me.effects = marginal_effect_continuous(result, data, v, q);
      }
      out.push_back(std::move(me));
    }
  }
  return out;
}

}  // namespace rtm
