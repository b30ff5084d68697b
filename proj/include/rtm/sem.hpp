#pragma once

// Linear structural equation model with latent variables, fitted by maximum likelihood on the
// covariance matrix of (indicators, exogenous):
//   z = tau x + nu,  nu ~ N(0, Sigma_nu), unit diagonal
//   u = alpha + omega z + e,  e ~ N(0, diag(theta))
// The exogenous block of the implied covariance is the sample covariance S_x.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtm/dataset.hpp"
#include "rtm/errors.hpp"
#include "rtm/optimizer.hpp"

namespace rtm {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SemSpec {
  std::vector<std::string> indicators;  // R
  std::vector<std::string> exogenous;   // K
  std::vector<std::string> latents;     // L
  Mask loading_pattern;                 // R x L, free omega cells
  Mask structural_pattern;              // L x K, free tau cells
  bool free_latent_correlations = false;

  Eigen::Index r() const { return static_cast<Eigen::Index>(indicators.size()); }
  Eigen::Index k() const { return static_cast<Eigen::Index>(exogenous.size()); }
  Eigen::Index l() const { return static_cast<Eigen::Index>(latents.size()); }

  void validate() const {
    if (indicators.empty() || latents.empty()) throw SpecError("SEM needs at least one indicator and one latent");
    if (loading_pattern.rows() != r() || loading_pattern.cols() != l())
      throw SpecError("loading pattern must be indicators x latents");
    if (structural_pattern.rows() != l() || structural_pattern.cols() != k())
      throw SpecError("structural pattern must be latents x exogenous");
    for (Eigen::Index c = 0; c < l(); ++c)
      if (!loading_pattern.col(c).any()) throw SpecError("latent '" + latents[static_cast<std::size_t>(c)] + "' has no indicator");
    for (Eigen::Index i = 0; i < r(); ++i)
      if (!loading_pattern.row(i).any())
        throw SpecError("indicator '" + indicators[static_cast<std::size_t>(i)] + "' loads on no latent");
    std::vector<std::string> all = indicators;
    all.insert(all.end(), exogenous.begin(), exogenous.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw SpecError("duplicate SEM variable name");
  }

  /// Number of free parameters, excluding the exogenous covariance.
  Eigen::Index free_count() const {
    return loading_pattern.count() + structural_pattern.count() + r() +
           (free_latent_correlations ? l() * (l() - 1) / 2 : 0);
  }
};

struct SemParams {
  Eigen::MatrixXd omega;       // R x L
  Eigen::MatrixXd tau;         // L x K
  Eigen::VectorXd theta_diag;  // R
  Eigen::MatrixXd nu_cov;      // L x L
};

/// Implied covariance of (indicators, exogenous) given the exogenous covariance sx.
inline Eigen::MatrixXd implied_covariance(const SemSpec& spec, const SemParams& p, const Eigen::MatrixXd& sx) {
  const auto r = spec.r(), k = spec.k(), l = spec.l();
  if (p.omega.rows() != r || p.omega.cols() != l || p.tau.rows() != l || p.tau.cols() != k ||
      p.theta_diag.size() != r || p.nu_cov.rows() != l || p.nu_cov.cols() != l || sx.rows() != k || sx.cols() != k)
    throw SpecError("SEM parameters do not conform to the SemSpec patterns");
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index c = 0; c < l; ++c)
      if (!spec.loading_pattern(i, c) && p.omega(i, c) != 0.0) throw SpecError("loading outside the pattern");
  for (Eigen::Index c = 0; c < l; ++c)
    for (Eigen::Index j = 0; j < k; ++j)
      if (!spec.structural_pattern(c, j) && p.tau(c, j) != 0.0) throw SpecError("structural effect outside the pattern");
  const Eigen::MatrixXd phi = p.tau * sx * p.tau.transpose() + p.nu_cov;
  Eigen::MatrixXd out(r + k, r + k);
  out.topLeftCorner(r, r) = p.omega * phi * p.omega.transpose();
  out.topLeftCorner(r, r).diagonal() += p.theta_diag;
  out.topRightCorner(r, k) = p.omega * p.tau * sx;
  out.bottomLeftCorner(k, r) = out.topRightCorner(r, k).transpose();
  out.bottomRightCorner(k, k) = sx;
  return 0.5 * (out + out.transpose());
}

struct SemFit {
  double chi_square = 0.0;
  int df = 0;
  double gfi = 1.0;
  double agfi = 1.0;
  double srmr = 0.0;
  double rmsea = 0.0;
};

struct SemOptions {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-8;  // on the discrepancy F
};

struct SemResult {
  SemSpec spec;
  SemParams params;
  // standard errors, NaN for fixed cells
  Eigen::MatrixXd omega_se, tau_se;
  Eigen::VectorXd theta_se;
  double discrepancy = 0.0;  // F at the optimum
  SemFit fit;
  std::size_t n = 0;
  Eigen::VectorXd indicator_means, exogenous_means;
  Eigen::MatrixXd sample_covariance;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

namespace detail {

/// Free-parameter vector: omega cells (column-major), tau cells (column-major), log theta,
/// then latent-correlation Cholesky entries below the diagonal (row-major).
struct SemPacking {
  const SemSpec& spec;

  Eigen::Index size() const { return spec.free_count(); }

  /// Unit-diagonal Cholesky factor: row i is (b_i, 1) normalized.
  Eigen::MatrixXd corr_factor(const Eigen::VectorXd& v, Eigen::Index pos) const {
    const auto l = spec.l();
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(l, l);
    for (Eigen::Index i = 0; i < l; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) c(i, j) = spec.free_latent_correlations ? v(pos++) : 0.0;
      c(i, i) = 1.0;
      c.row(i) /= c.row(i).norm();
    }
    return c;
  }

  SemParams unpack(const Eigen::VectorXd& v) const {
    const auto r = spec.r(), k = spec.k(), l = spec.l();
    SemParams p{Eigen::MatrixXd::Zero(r, l), Eigen::MatrixXd::Zero(l, k), Eigen::VectorXd(r), {}};
    Eigen::Index pos = 0;
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) p.omega(i, c) = v(pos++);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index c = 0; c < l; ++c)
        if (spec.structural_pattern(c, j)) p.tau(c, j) = v(pos++);
    for (Eigen::Index i = 0; i < r; ++i) p.theta_diag(i) = std::exp(v(pos++));
    const Eigen::MatrixXd cf = corr_factor(v, pos);
    p.nu_cov = cf * cf.transpose();
    return p;
  }

  /// Gradient of F from dF/dSigma = G (symmetric).
  Eigen::VectorXd gradient(const Eigen::VectorXd& v, const SemParams& p, const Eigen::MatrixXd& g,
                           const Eigen::MatrixXd& sx) const {
    const auto r = spec.r(), k = spec.k(), l = spec.l();
    const Eigen::MatrixXd guu = g.topLeftCorner(r, r), gux = g.topRightCorner(r, k);
    const Eigen::MatrixXd phi = p.tau * sx * p.tau.transpose() + p.nu_cov;
    const Eigen::MatrixXd m = p.omega.transpose() * guu * p.omega;  // dF/dPhi
    const Eigen::MatrixXd d_omega = 2.0 * guu * p.omega * phi + 2.0 * gux * sx * p.tau.transpose();
    const Eigen::MatrixXd d_tau = 2.0 * m * p.tau * sx + 2.0 * p.omega.transpose() * gux * sx;
    Eigen::VectorXd out(size());
    Eigen::Index pos = 0;
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) out(pos++) = d_omega(i, c);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index c = 0; c < l; ++c)
        if (spec.structural_pattern(c, j)) out(pos++) = d_tau(c, j);
    for (Eigen::Index i = 0; i < r; ++i) out(pos++) = guu(i, i) * p.theta_diag(i);
    if (spec.free_latent_correlations) {
      const Eigen::MatrixXd cf = corr_factor(v, pos);
      const Eigen::MatrixXd d_cf = 2.0 * m * cf;
      for (Eigen::Index i = 1; i < l; ++i) {
        // row i = b / |b| with b = (v..., 1): d row / d b = (I - row row') / |b|
        Eigen::VectorXd b(i + 1);
        for (Eigen::Index j = 0; j < i; ++j) b(j) = v(pos + j);
        b(i) = 1.0;
        const Eigen::VectorXd row = cf.row(i).head(i + 1).transpose();
        const Eigen::VectorXd gr = d_cf.row(i).head(i + 1).transpose();
        const Eigen::VectorXd gb = (gr - row * row.dot(gr)) / b.norm();
        for (Eigen::Index j = 0; j < i; ++j) out(pos++) = gb(j);
      }
    }
    return out;
  }
};

inline double log_det_spd(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// F = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p, with dF/dSigma written to g. Infinite if Sigma is not PD.
inline double ml_discrepancy(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& s, double log_det_s,
                             Eigen::MatrixXd* g = nullptr) {
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all())
    return std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols()));
  const Eigen::MatrixXd inv_s = inv * s;
  if (g) *g = inv - inv_s * inv;
  return log_det_spd(llt) + inv_s.trace() - log_det_s - static_cast<double>(sigma.rows());
}

inline Eigen::MatrixXd column_block(const Dataset& data, const std::vector<std::string>& names) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& col = data.column(names[c]);
    for (std::size_t i = 0; i < col.size(); ++i) {
      if (!std::isfinite(col[i])) throw DataError("column '" + names[c] + "' has a missing or non-finite value");
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = col[i];
    }
  }
  return out;
}

inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x, Eigen::VectorXd& means) {
  means = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - means.transpose();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

inline SemFit fit_indices(const Eigen::MatrixXd& s, const Eigen::MatrixXd& sigma, double f, std::size_t n, int df) {
  SemFit out;
  out.df = df;
  const double nm1 = static_cast<double>(n) - 1.0;
  out.chi_square = nm1 * std::max(f, 0.0);
  const auto p = s.rows();
  const Eigen::MatrixXd a = sigma.llt().solve(s);
  const Eigen::MatrixXd resid = a - Eigen::MatrixXd::Identity(p, p);
  out.gfi = 1.0 - (resid * resid).trace() / (a * a).trace();
  const double moments = static_cast<double>(p * (p + 1)) / 2.0;
  // AGFI is undefined at df = 0; report GFI there
  out.agfi = df > 0 ? 1.0 - moments / df * (1.0 - out.gfi) : out.gfi;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double z = (s(i, j) - sigma(i, j)) / std::sqrt(s(i, i) * s(j, j));
      ss += z * z;
    }
  out.srmr = std::sqrt(ss / moments);
  out.rmsea = df > 0 ? std::sqrt(std::max(out.chi_square - df, 0.0) / (df * nm1)) : 0.0;
  return out;
}

}  // namespace detail

/// Maximum-likelihood fit. Each latent is oriented so that its first free loading is positive.
inline SemResult fit_sem(const Dataset& data, const SemSpec& spec, const SemOptions& options = {}) {
  spec.validate();
  const auto r = spec.r(), k = spec.k(), l = spec.l();
  const Eigen::Index p = r + k;
  const Eigen::Index q = spec.free_count();
  const int df = static_cast<int>(p * (p + 1) / 2 - q - k * (k + 1) / 2);
  if (df < 0) throw SpecError("SEM has negative degrees of freedom (" + std::to_string(df) + ")");
  if (static_cast<Eigen::Index>(data.rows()) <= q + k * (k + 1) / 2)
    throw DataError("SEM needs more rows than free parameters");

  std::vector<std::string> names = spec.indicators;
  names.insert(names.end(), spec.exogenous.begin(), spec.exogenous.end());
  Eigen::VectorXd means;
  const Eigen::MatrixXd s = detail::sample_covariance(detail::column_block(data, names), means);
  const Eigen::LLT<Eigen::MatrixXd> s_llt(s);
  if (s_llt.info() != Eigen::Success || !(s_llt.matrixLLT().diagonal().array() > 1e-12).all())
    throw DataError("sample covariance of the SEM variables is not positive definite");
  const double log_det_s = detail::log_det_spd(s_llt);
  const Eigen::MatrixXd sx = s.bottomRightCorner(k, k);

  const detail::SemPacking pack{spec};
  const Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
    const SemParams prm = pack.unpack(v);
    Eigen::MatrixXd g;
    const double val = detail::ml_discrepancy(implied_covariance(spec, prm, sx), s, log_det_s, &g);
    grad = std::isfinite(val) ? pack.gradient(v, prm, g, sx) : Eigen::VectorXd::Zero(v.size());
    return val;
  };

  // start: loadings at half the indicator sd, error variances at half the indicator variance
  Eigen::VectorXd v0 = Eigen::VectorXd::Zero(q);
  {
    Eigen::Index pos = 0;
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) v0(pos++) = 0.5 * std::sqrt(s(i, i));
    pos += spec.structural_pattern.count();
    for (Eigen::Index i = 0; i < r; ++i) v0(pos++) = std::log(0.5 * s(i, i));
  }
  OptimizerOptions oo;
  oo.max_iterations = options.max_iterations;
  oo.gradient_tolerance = options.gradient_tolerance;
  OptimizerResult opt = bfgs_minimize(f, v0, oo);

  // orientation: flip latents whose first free loading is negative
  Eigen::VectorXd v = opt.x;
  {
    SemParams prm = pack.unpack(v);
    Eigen::VectorXd sign = Eigen::VectorXd::Ones(l);
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) {
          if (prm.omega(i, c) < 0.0) sign(c) = -1.0;
          break;
        }
    Eigen::Index pos = 0;
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) v(pos++) *= sign(c);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index c = 0; c < l; ++c)
        if (spec.structural_pattern(c, j)) v(pos++) *= sign(c);
    pos += r;
    if (spec.free_latent_correlations) {
      // corr(i, j) flips with sign(i) * sign(j); refit the factor of the flipped correlation matrix
      const Eigen::MatrixXd flipped = sign.asDiagonal() * prm.nu_cov * sign.asDiagonal();
      const Eigen::MatrixXd cf = flipped.llt().matrixL();
      for (Eigen::Index i = 1; i < l; ++i)
        for (Eigen::Index j = 0; j < i; ++j) v(pos++) = cf(i, j) / cf(i, i);
    }
  }

  SemResult out;
  out.spec = spec;
  out.params = pack.unpack(v);
  out.n = data.rows();
  out.indicator_means = means.head(r);
  out.exogenous_means = means.tail(k);
  out.sample_covariance = s;
  out.iterations = opt.iterations;
  out.converged = opt.converged;
  out.message = opt.message;
  const Eigen::MatrixXd sigma = implied_covariance(spec, out.params, sx);
  out.discrepancy = std::max(detail::ml_discrepancy(sigma, s, log_det_s), 0.0);
  out.fit = detail::fit_indices(s, sigma, out.discrepancy, out.n, df);

  // standard errors from the Hessian of (n - 1) / 2 * F
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.omega_se = Eigen::MatrixXd::Constant(r, l, nan);
  out.tau_se = Eigen::MatrixXd::Constant(l, k, nan);
  out.theta_se = Eigen::VectorXd::Constant(r, nan);
  Eigen::MatrixXd h(q, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const double step = 1e-5 * std::max(1.0, std::fabs(v(j)));
    Eigen::VectorXd up = v, dn = v, gu, gd;
    up(j) += step;
    dn(j) -= step;
    f(up, gu);
    f(dn, gd);
    h.col(j) = (gu - gd) / (2.0 * step);
  }
  h = 0.25 * (static_cast<double>(out.n) - 1.0) * (h + h.transpose());
  const Eigen::LLT<Eigen::MatrixXd> h_llt(h);
  if (h_llt.info() == Eigen::Success) {
    const Eigen::VectorXd var = h_llt.solve(Eigen::MatrixXd::Identity(q, q)).diagonal();
    Eigen::Index pos = 0;
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index i = 0; i < r; ++i)
        if (spec.loading_pattern(i, c)) out.omega_se(i, c) = std::sqrt(var(pos++));
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index c = 0; c < l; ++c)
        if (spec.structural_pattern(c, j)) out.tau_se(c, j) = std::sqrt(var(pos++));
    for (Eigen::Index i = 0; i < r; ++i) out.theta_se(i) = out.params.theta_diag(i) * std::sqrt(var(pos++));
  }
  return out;
}

/// Regression scores E[z | u, x] = tau x + K (u - alpha - omega tau x) with
/// alpha = mean(u) - omega tau mean(x) and K = Sigma_nu omega' (omega Sigma_nu omega' + Theta)^-1.
inline Eigen::MatrixXd factor_scores(const Dataset& data, const SemSpec& spec, const SemResult& result) {
  const auto& p = result.params;
  const Eigen::MatrixXd u = detail::column_block(data, spec.indicators);
  const Eigen::MatrixXd x = detail::column_block(data, spec.exogenous);
  Eigen::MatrixXd cov_u = p.omega * p.nu_cov * p.omega.transpose();
  cov_u.diagonal() += p.theta_diag;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov_u);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-300).all() ||
      (ldlt.vectorD().array().abs().minCoeff() <= 1e-14 * ldlt.vectorD().array().abs().maxCoeff()))
    throw NumericalError("implied indicator covariance is singular");
  const Eigen::MatrixXd gain = ldlt.solve(p.omega * p.nu_cov).transpose();  // L x R
  const Eigen::VectorXd alpha = result.indicator_means - p.omega * p.tau * result.exogenous_means;
  const Eigen::MatrixXd pred = x * p.tau.transpose();  // n x L
  const Eigen::MatrixXd resid = (u.rowwise() - alpha.transpose()) - pred * p.omega.transpose();
  return pred + resid * gain.transpose();
}

}  // namespace rtm
