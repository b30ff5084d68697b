#pragma once

// Exact log-likelihood of the recursive trivariate model: a normal density for the continuous
// outcome times the bivariate ordered-probit cell probability of the two ordinal outcomes
// conditional on it, written in reduced form.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rtm/distributions.hpp"
#include "rtm/errors.hpp"
#include "rtm/model.hpp"

namespace rtm {

inline constexpr double kProbabilityFloor = 1e-300;

/// Conditional-on-y1 quantities of one observation.
struct ConditionalTerms {
  double h2 = 0.0;
  double h3 = 0.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double rho_tilde = 0.0;
};

/// Row-independent normalizers of the reduced-form errors and their partial derivatives
/// with respect to (theta23, rho12, rho13, rho23).
struct ReducedFormScales {
  double lambda2 = 1.0, lambda3 = 1.0, rho_tilde = 0.0;
  Eigen::Vector4d d_lambda2 = Eigen::Vector4d::Zero();
  Eigen::Vector4d d_lambda3 = Eigen::Vector4d::Zero();
  Eigen::Vector4d d_rho_tilde = Eigen::Vector4d::Zero();
};

inline ReducedFormScales reduced_form_scales(double theta23, double rho12, double rho13, double rho23) {
  ReducedFormScales s;
  const double v2 = 1.0 - rho12 * rho12;
  const double c = rho23 - rho12 * rho13;  // cov(eta2, eta3)
  const double v3 = theta23 * theta23 * v2 + 2.0 * theta23 * c + 1.0 - rho13 * rho13;
  const double cov = theta23 * v2 + c;  // cov(eta2, eta3~)
  if (!(v2 > 0.0) || !(v3 > 0.0)) throw ParameterError("reduced-form error covariance is not positive definite");
  s.lambda2 = 1.0 / std::sqrt(v2);
  s.lambda3 = 1.0 / std::sqrt(v3);
  s.rho_tilde = s.lambda2 * s.lambda3 * cov;

  const Eigen::Vector4d d_v2(0.0, -2.0 * rho12, 0.0, 0.0);
  const Eigen::Vector4d d_v3(2.0 * theta23 * v2 + 2.0 * c, -2.0 * theta23 * theta23 * rho12 - 2.0 * theta23 * rho13,
                             -2.0 * theta23 * rho12 - 2.0 * rho13, 2.0 * theta23);
  const Eigen::Vector4d d_cov(v2, -2.0 * theta23 * rho12 - rho13, -rho12, 1.0);
  const double l2c = s.lambda2 * s.lambda2 * s.lambda2;
  const double l3c = s.lambda3 * s.lambda3 * s.lambda3;
  s.d_lambda2 = -0.5 * l2c * d_v2;
  s.d_lambda3 = -0.5 * l3c * d_v3;
  s.d_rho_tilde = s.d_lambda2 * s.lambda3 * cov + s.lambda2 * s.d_lambda3 * cov + s.lambda2 * s.lambda3 * d_cov;
  return s;
}

/// h2 = gamma2'w + theta12*y1 + (rho12/sigma1)(y1 - gamma1'w), h3 analogously, plus the
/// reduced-form normalizers.
inline ConditionalTerms conditional_terms(const ParameterSet& p, const Eigen::Ref<const Eigen::VectorXd>& w1,
                                          const Eigen::Ref<const Eigen::VectorXd>& w2,
                                          const Eigen::Ref<const Eigen::VectorXd>& w3, double y1) {
  if (w1.size() != p.gamma1.size() || w2.size() != p.gamma2.size() || w3.size() != p.gamma3.size())
    throw SpecError("covariate row does not match the coefficient dimensions");
  const double resid = y1 - p.gamma1.dot(w1);
  const auto s = reduced_form_scales(p.theta23, p.rho12, p.rho13, p.rho23);
  ConditionalTerms t;
  t.h2 = p.gamma2.dot(w2) + p.theta12 * y1 + p.rho12 / p.sigma1 * resid;
  t.h3 = p.gamma3.dot(w3) + p.theta13 * y1 + p.rho13 / p.sigma1 * resid;
  t.lambda2 = s.lambda2;
  t.lambda3 = s.lambda3;
  t.rho_tilde = s.rho_tilde;
  return t;
}

namespace detail {

/// Cut points mu_{j-1}, mu_j of level j (1-based) with infinite sentinels.
inline std::pair<double, double> cut_points(const Eigen::VectorXd& mu, int j) {
  const int levels = static_cast<int>(mu.size()) + 1;
  const double lo = j >= 2 ? mu(j - 2) : -kInf;
  const double hi = j <= levels - 1 ? mu(j - 1) : kInf;
  return {lo, hi};
}

inline double scaled(double cut, double center, double lambda) {
  return std::isinf(cut) ? cut : (cut - center) * lambda;
}

}  // namespace detail

/// Phi_2 at rho and -rho, so a rectangle can always be evaluated after reflecting it toward
/// the lower-left tail (avoids cancellation between corner terms close to 1).
struct RectangleKernels {
  BvnKernel same;
  BvnKernel flipped;
  explicit RectangleKernels(double rho) : same(rho), flipped(-rho) {}
};

/// P(a_lo < X < a_hi, b_lo < Y < b_hi) and its partials in the limits and rho.
struct RectangleProbability {
  double p = 0.0;
  double d_alo = 0.0, d_ahi = 0.0, d_blo = 0.0, d_bhi = 0.0, d_rho = 0.0;
};

namespace detail {

// Reflect an interval whose midpoint is positive; (-inf, x) is never reflected, (x, inf) always.
inline bool reflect_interval(double lo, double hi) {
  if (lo == -kInf) return false;
  if (hi == kInf) return true;
  return lo + hi > 0.0;
}

}  // namespace detail

template <bool WithPartials = false>
RectangleProbability rectangle_probability(double a_lo, double a_hi, double b_lo, double b_hi,
                                           const RectangleKernels& k) {
  const bool rx = detail::reflect_interval(a_lo, a_hi), ry = detail::reflect_interval(b_lo, b_hi);
  const double A_lo = rx ? -a_hi : a_lo, A_hi = rx ? -a_lo : a_hi;
  const double B_lo = ry ? -b_hi : b_lo, B_hi = ry ? -b_lo : b_hi;
  const BvnKernel& kernel = rx == ry ? k.same : k.flipped;
  RectangleProbability out;
  if constexpr (!WithPartials) {
    out.p = kernel(A_hi, B_hi) - kernel(A_lo, B_hi) - kernel(A_hi, B_lo) + kernel(A_lo, B_lo);
  } else {
    const auto hh = kernel.with_partials(A_hi, B_hi), lh = kernel.with_partials(A_lo, B_hi);
    const auto hl = kernel.with_partials(A_hi, B_lo), ll = kernel.with_partials(A_lo, B_lo);
    out.p = hh.p - lh.p - hl.p + ll.p;
    const double dA_hi = hh.d_a - hl.d_a, dA_lo = ll.d_a - lh.d_a;
    const double dB_hi = hh.d_b - lh.d_b, dB_lo = ll.d_b - hl.d_b;
    out.d_ahi = rx ? -dA_lo : dA_hi;
    out.d_alo = rx ? -dA_hi : dA_lo;
    out.d_bhi = ry ? -dB_lo : dB_hi;
    out.d_blo = ry ? -dB_hi : dB_lo;
    out.d_rho = (hh.d_rho - lh.d_rho - hl.d_rho + ll.d_rho) * (rx == ry ? 1.0 : -1.0);
  }
  return out;
}

/// P(y2 = j2, y3 = j3 | y1) by the four-corner Phi_2 decomposition.
inline double cell_probability(const ConditionalTerms& t, const RectangleKernels& kernels, double theta23,
                               const Eigen::VectorXd& mu2, const Eigen::VectorXd& mu3, int j2, int j3) {
  const auto [a_lo_cut, a_hi_cut] = detail::cut_points(mu2, j2);
  const auto [b_lo_cut, b_hi_cut] = detail::cut_points(mu3, j3);
  const double m3 = t.h3 + theta23 * t.h2;
  const double a_lo = detail::scaled(a_lo_cut, t.h2, t.lambda2), a_hi = detail::scaled(a_hi_cut, t.h2, t.lambda2);
  const double b_lo = detail::scaled(b_lo_cut, m3, t.lambda3), b_hi = detail::scaled(b_hi_cut, m3, t.lambda3);
  return std::clamp(rectangle_probability(a_lo, a_hi, b_lo, b_hi, kernels).p, 0.0, 1.0);
}

inline double cell_probability(const ConditionalTerms& t, const ParameterSet& p, int j2, int j3) {
  const int levels2 = static_cast<int>(p.mu2.size()) + 1, levels3 = static_cast<int>(p.mu3.size()) + 1;
  if (j2 < 1 || j2 > levels2 || j3 < 1 || j3 > levels3)
    throw std::domain_error("cell_probability: ordinal level out of range");
  return cell_probability(t, RectangleKernels(t.rho_tilde), p.theta23, p.mu2, p.mu3, j2, j3);
}

/// One observation: covariate rows per equation and the three outcomes.
struct Observation {
  Eigen::VectorXd w1, w2, w3;
  double y1 = 0.0;
  int y2 = 1;
  int y3 = 1;
};

inline Observation observation(const Design& d, std::size_t row) {
  const auto r = static_cast<Eigen::Index>(row);
  return Observation{d.x1.row(r).transpose(), d.x2.row(r).transpose(), d.x3.row(r).transpose(), d.y1(r), d.y2[row],
                     d.y3[row]};
}

inline double marginal_log_density(double y1, double mean, double sigma1) {
  return std_normal_log_pdf((y1 - mean) / sigma1) - std::log(sigma1);
}

inline double obs_loglik(const ParameterSet& p, const Observation& row) {
  const auto t = conditional_terms(p, row.w1, row.w2, row.w3, row.y1);
  const double prob = cell_probability(t, p, row.y2, row.y3);
  return std::log(std::max(prob, kProbabilityFloor)) + marginal_log_density(row.y1, p.gamma1.dot(row.w1), p.sigma1);
}

/// Log-likelihood value and gradient with respect to the unconstrained coordinates.
struct LoglikEvaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

namespace detail {

// Per-row contributions are written to fixed slots and reduced afterwards in row order, so the
// result is bit-identical for any worker count.
template <bool WithGradient>
LoglikEvaluation evaluate_loglik(const ParameterSet& p, const Design& d, const ModelSpec& spec, int workers) {
  const std::size_t n = d.rows();
  const auto ni = static_cast<Eigen::Index>(n);
  const auto scales = reduced_form_scales(p.theta23, p.rho12, p.rho13, p.rho23);
  const RectangleKernels kernels(scales.rho_tilde);
  const Eigen::VectorXd xb1 = d.x1 * p.gamma1;
  const Eigen::VectorXd xb2 = d.x2 * p.gamma2;
  const Eigen::VectorXd xb3 = d.x3 * p.gamma3;
  const Eigen::VectorXd resid = d.y1 - xb1;
  const int nmu2 = spec.j2 - 1, nmu3 = spec.j3 - 1;

  // columns: ll, d/dh2, d/dh3, d/dtheta23 (direct), d/dlambda2, d/dlambda3, d/drho~, d/dmu2..., d/dmu3...
  enum : Eigen::Index { kLl = 0, kH2, kH3, kTh23, kL2, kL3, kRt, kMu2 };
  const Eigen::Index kMu3 = kMu2 + nmu2;
  const Eigen::Index ncols = WithGradient ? kMu3 + nmu3 : 1;
  Eigen::MatrixXd rows(ni, ncols);
  rows.setZero();

  const double l2 = scales.lambda2, l3 = scales.lambda3, th23 = p.theta23;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double h2 = xb2(r) + p.theta12 * d.y1(r) + p.rho12 / p.sigma1 * resid(r);
      const double h3 = xb3(r) + p.theta13 * d.y1(r) + p.rho13 / p.sigma1 * resid(r);
      const double m3 = h3 + th23 * h2;
      const int j2 = d.y2[i], j3 = d.y3[i];
      const auto [a_lo_cut, a_hi_cut] = cut_points(p.mu2, j2);
      const auto [b_lo_cut, b_hi_cut] = cut_points(p.mu3, j3);
      const double a_lo = scaled(a_lo_cut, h2, l2), a_hi = scaled(a_hi_cut, h2, l2);
      const double b_lo = scaled(b_lo_cut, m3, l3), b_hi = scaled(b_hi_cut, m3, l3);
      const double marginal = marginal_log_density(d.y1(r), xb1(r), p.sigma1);

      if constexpr (!WithGradient) {
        const double prob = rectangle_probability(a_lo, a_hi, b_lo, b_hi, kernels).p;
        rows(r, kLl) = std::log(std::max(prob, kProbabilityFloor)) + marginal;
      } else {
        const auto rect = rectangle_probability<true>(a_lo, a_hi, b_lo, b_hi, kernels);
        const double prob = rect.p;
        if (!(prob > kProbabilityFloor)) {
          rows(r, kLl) = std::log(kProbabilityFloor) + marginal;
          continue;
        }
        rows(r, kLl) = std::log(prob) + marginal;
        const double inv = 1.0 / prob;
        const double g_ahi = rect.d_ahi * inv, g_alo = rect.d_alo * inv;
        const double g_bhi = rect.d_bhi * inv, g_blo = rect.d_blo * inv;
        const double g_rt = rect.d_rho * inv;
        double dh2 = 0, dh3 = 0, dth = 0, dl2 = 0, dl3 = 0;
        auto a_side = [&](double g, double cut, double a, int mu_index) {
          if (!std::isfinite(a)) return;
          dh2 -= g * l2;
          dl2 += g * (cut - h2);
          rows(r, kMu2 + mu_index) += g * l2;
        };
        auto b_side = [&](double g, double cut, double b, int mu_index) {
          if (!std::isfinite(b)) return;
          dh3 -= g * l3;
          dh2 -= g * l3 * th23;
          dth -= g * l3 * h2;
          dl3 += g * (cut - m3);
          rows(r, kMu3 + mu_index) += g * l3;
        };
        a_side(g_ahi, a_hi_cut, a_hi, j2 - 1);
        a_side(g_alo, a_lo_cut, a_lo, j2 - 2);
        b_side(g_bhi, b_hi_cut, b_hi, j3 - 1);
        b_side(g_blo, b_lo_cut, b_lo, j3 - 2);
        rows(r, kH2) = dh2;
        rows(r, kH3) = dh3;
        rows(r, kTh23) = dth;
        rows(r, kL2) = dl2;
        rows(r, kL3) = dl3;
        rows(r, kRt) = g_rt;
      }
    }
  };

  const std::size_t nworkers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  if (nworkers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + nworkers - 1) / nworkers;
    for (std::size_t w = 0; w < nworkers; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }

  LoglikEvaluation out;
  double total = 0.0;
  for (Eigen::Index r = 0; r < ni; ++r) total += rows(r, kLl);
  out.value = total;
  if constexpr (!WithGradient) return out;

  const ParameterLayout lay(spec);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lay.dim()));
  const double s1 = p.sigma1;
  auto ordered_sum = [&](const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < v.size(); ++r) acc += v(r);
    return acc;
  };
  const Eigen::VectorXd dh2 = rows.col(kH2), dh3 = rows.col(kH3);
  const Eigen::VectorXd dxb1 = resid / (s1 * s1) - (p.rho12 / s1) * dh2 - (p.rho13 / s1) * dh3;
  g.segment(lay.gamma1(), lay.k1) = d.x1.transpose() * dxb1;
  g.segment(lay.gamma2(), lay.k2) = d.x2.transpose() * dh2;
  g.segment(lay.gamma3(), lay.k3) = d.x3.transpose() * dh3;

  const Eigen::VectorXd d_sigma = (resid.array().square() / (s1 * s1 * s1) - 1.0 / s1).matrix() -
                                  (p.rho12 / (s1 * s1)) * resid.cwiseProduct(dh2) -
                                  (p.rho13 / (s1 * s1)) * resid.cwiseProduct(dh3);
  Eigen::Vector4d d_scales_args = Eigen::Vector4d::Zero();  // (theta23, rho12, rho13, rho23)
  const double sum_l2 = ordered_sum(rows.col(kL2)), sum_l3 = ordered_sum(rows.col(kL3)),
               sum_rt = ordered_sum(rows.col(kRt));
  d_scales_args = sum_l2 * scales.d_lambda2 + sum_l3 * scales.d_lambda3 + sum_rt * scales.d_rho_tilde;

  g(lay.theta12()) = ordered_sum(dh2.cwiseProduct(d.y1));
  g(lay.theta13()) = ordered_sum(dh3.cwiseProduct(d.y1));
  g(lay.theta23()) = ordered_sum(rows.col(kTh23)) + d_scales_args(0);
  g(lay.sigma1()) = ordered_sum(d_sigma);
  g(lay.rho12()) = ordered_sum(dh2.cwiseProduct(resid)) / s1 + d_scales_args(1);
  g(lay.rho13()) = ordered_sum(dh3.cwiseProduct(resid)) / s1 + d_scales_args(2);
  g(lay.rho23()) = d_scales_args(3);
  // mu2(0) / mu3(0) are fixed; free thresholds start at index 1.
  for (int j = 1; j < nmu2; ++j) g(lay.mu2() + j - 1) = ordered_sum(rows.col(kMu2 + j));
  for (int j = 1; j < nmu3; ++j) g(lay.mu3() + j - 1) = ordered_sum(rows.col(kMu3 + j));
  out.gradient = std::move(g);
  return out;
}

}  // namespace detail

inline double total_loglik(const ParameterSet& p, const Design& d, const ModelSpec& spec, int workers = 1) {
  return detail::evaluate_loglik<false>(p, d, spec, workers).value;
}

inline double total_loglik(const ParameterSet& p, const Dataset& data, const ModelSpec& spec, int workers = 1) {
  p.validate(spec);
  return total_loglik(p, build_design(data, spec), spec, workers);
}

/// Log-likelihood at constrain(u) and its analytic gradient with respect to u.
inline LoglikEvaluation loglik_and_gradient(const UnconstrainedParams& u, const Design& d, const ModelSpec& spec,
                                            int workers = 1) {
  const ParameterSet p = constrain(u, spec);
  auto eval = detail::evaluate_loglik<true>(p, d, spec, workers);
  eval.gradient = constrain_jacobian(u, spec).transpose() * eval.gradient;
  return eval;
}

inline Eigen::VectorXd loglik_gradient(const UnconstrainedParams& u, const Dataset& data, const ModelSpec& spec,
                                       int workers = 1) {
  return loglik_and_gradient(u, build_design(data, spec), spec, workers).gradient;
}

}  // namespace rtm
