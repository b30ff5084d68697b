#pragma once

// Univariate / bivariate standard-normal primitives and the chi-square tail.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

namespace rtm {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;  // 1/sqrt(2*pi)
inline constexpr double kLogSqrt2Pi = 0.918938533204672741780329736406;  // ln sqrt(2*pi)
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double std_normal_pdf(double x) noexcept { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double std_normal_log_pdf(double x) noexcept { return -kLogSqrt2Pi - 0.5 * x * x; }

/// Phi(x) through erfc, which keeps full relative precision in the lower tail.
inline double std_normal_cdf(double x) noexcept {
  if (x == kInf) return 1.0;
  if (x == -kInf) return 0.0;
  return 0.5 * std::erfc(-x * 0.707106781186547524400844362104849);
}

/// Inverse of Phi (Wichura, AS241 PPND16; about 1e-16 relative accuracy).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("std_normal_quantile: p must lie in (0, 1)");

  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double z;
  if (r <= 5.0) {
    r -= 1.6;
    z = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
             1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
             1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    z = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
             2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
             7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -z : z;
}

/// Arguments of the bivariate standard-normal CDF; a and b may be +-infinity.
struct BvnInputs {
  double a = 0.0;
  double b = 0.0;
  double rho = 0.0;
};

/// Bivariate standard-normal density.
inline double bvn_pdf(double a, double b, double rho) noexcept {
  const double one_minus = (1.0 - rho) * (1.0 + rho);
  const double q = (a * a - 2.0 * rho * a * b + b * b) / one_minus;
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(one_minus));
}

/// Phi_2 value plus its partial derivatives.
struct BvnWithPartials {
  double p = 0.0;
  double d_a = 0.0;
  double d_b = 0.0;
  double d_rho = 0.0;
};

/// Bivariate normal CDF at a fixed correlation.
///
/// Uses the Drezner-Wesolowsky / Genz reduction to a one-dimensional integral over the
/// correlation, evaluated with 6/12/20-point Gauss-Legendre rules, and the asymptotic
/// transformation for |rho| >= 0.925. Every quantity that depends on rho alone is cached at
/// construction, so one kernel evaluates many (a, b) pairs cheaply; the likelihood uses a
/// single correlation for all rows and cells.
class BvnKernel {
 public:
  explicit BvnKernel(double rho) : rho_(rho) {
    if (std::isnan(rho) || rho < -1.0 || rho > 1.0) throw std::domain_error("bvn: correlation outside [-1, 1]");
    const double ar = std::fabs(rho);
    if (ar < 0.3) {
      set_rule(kW6.data(), kX6.data(), 3);
    } else if (ar < 0.75) {
      set_rule(kW12.data(), kX12.data(), 6);
    } else {
      set_rule(kW20.data(), kX20.data(), 10);
    }
    high_ = ar >= 0.925;
    one_minus_ = (1.0 - rho) * (1.0 + rho);
    sqrt_one_minus_ = std::sqrt(one_minus_);
    if (!high_) {
      asr_ = std::asin(rho);
      for (int i = 0; i < lg_; ++i) {
        for (int s = 0; s < 2; ++s) {
          const double xi = s == 0 ? x_[i] : -x_[i];
          const double sn = std::sin(asr_ * (xi + 1.0) / 2.0);
          sn_[2 * i + s] = sn;
          inv_cos2_[2 * i + s] = 1.0 / (1.0 - sn * sn);
        }
      }
    } else if (ar < 1.0) {
      as_ = one_minus_;
      a_ = std::sqrt(as_);
      const double half_a = a_ / 2.0;
      for (int i = 0; i < lg_; ++i) {
        const double t = half_a * (x_[i] + 1.0);
        xs1_[i] = t * t;
        rs1_[i] = std::sqrt(1.0 - xs1_[i]);
        xs2_[i] = as_ * (1.0 - x_[i]) * (1.0 - x_[i]) / 4.0;
        rs2_[i] = std::sqrt(1.0 - xs2_[i]);
      }
    }
  }

  double rho() const noexcept { return rho_; }

  /// P(X <= a, Y <= b). Symmetric in (a, b) by construction.
  double operator()(double a, double b) const {
    if (std::isnan(a) || std::isnan(b)) throw std::domain_error("bvn: NaN limit");
    if (a > b) std::swap(a, b);
    if (a == -kInf) return 0.0;
    if (b == kInf) return std::clamp(std::isinf(a) ? 1.0 : std_normal_cdf(a), 0.0, 1.0);
    return std::clamp(upper_tail(-a, -b), 0.0, 1.0);
  }

  /// Value and partials (d/da, d/db, d/drho). Requires |rho| < 1.
  BvnWithPartials with_partials(double a, double b) const {
    BvnWithPartials out;
    out.p = (*this)(a, b);
    if (a == -kInf || b == -kInf) return out;
    if (a == kInf && b == kInf) return out;
    if (a == kInf) {
      out.d_b = std_normal_pdf(b);
      return out;
    }
    if (b == kInf) {
      out.d_a = std_normal_pdf(a);
      return out;
    }
    out.d_a = std_normal_pdf(a) * std_normal_cdf((b - rho_ * a) / sqrt_one_minus_);
    out.d_b = std_normal_pdf(b) * std_normal_cdf((a - rho_ * b) / sqrt_one_minus_);
    out.d_rho = bvn_pdf(a, b, rho_);
    return out;
  }

 private:
  void set_rule(const double* w, const double* x, int lg) {
    lg_ = lg;
    for (int i = 0; i < lg; ++i) {
      w_[i] = w[i];
      x_[i] = x[i];
    }
  }

  // Genz's BVNU: P(X > h, Y > k).
  double upper_tail(double h, double k) const {
    double hk = h * k;
    if (!high_) {
      const double hs = (h * h + k * k) / 2.0;
      double sum = 0.0;
      for (int i = 0; i < lg_; ++i) {
        sum += w_[i] * std::exp((sn_[2 * i] * hk - hs) * inv_cos2_[2 * i]);
        sum += w_[i] * std::exp((sn_[2 * i + 1] * hk - hs) * inv_cos2_[2 * i + 1]);
      }
      return sum * asr_ / (4.0 * std::numbers::pi) + std_normal_cdf(-h) * std_normal_cdf(-k);
    }

    if (rho_ < 0.0) {
      k = -k;
      hk = -hk;
    }
    double bvn = 0.0;
    if (std::fabs(rho_) < 1.0) {
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 16.0;
      bvn = a_ * std::exp(-(bs / as_ + hk) / 2.0) *
            (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
      if (hk > -160.0) {
        const double b = std::sqrt(bs);
        bvn -= std::exp(-hk / 2.0) * std::sqrt(2.0 * std::numbers::pi) * std_normal_cdf(-b / a_) * b *
               (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
      }
      const double half_a = a_ / 2.0;
      for (int i = 0; i < lg_; ++i) {
        double xs = xs1_[i];
        double rs = rs1_[i];
        bvn += half_a * w_[i] *
               (std::exp(-bs / (xs * 2.0) - hk / (rs + 1.0)) / rs -
                std::exp(-(bs / xs + hk) / 2.0) * (c * xs * (d * xs + 1.0) + 1.0));
        xs = xs2_[i];
        rs = rs2_[i];
        bvn += half_a * w_[i] * std::exp(-(bs / xs + hk) / 2.0) *
               (std::exp(-hk * (1.0 - rs) / ((rs + 1.0) * 2.0)) / rs - (c * xs * (d * xs + 1.0) + 1.0));
      }
      bvn = -bvn / (2.0 * std::numbers::pi);
    }
    if (rho_ > 0.0) {
      bvn += std_normal_cdf(-std::max(h, k));
    } else if (rho_ < 0.0) {
      bvn = -bvn + std::max(0.0, std_normal_cdf(-h) - std_normal_cdf(-k));
    }
    return bvn;
  }

  static constexpr std::array<double, 3> kW6{0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr std::array<double, 3> kX6{-0.9324695142031522, -0.6612093864662647, -0.2386191860831970};
  static constexpr std::array<double, 6> kW12{0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                              0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr std::array<double, 6> kX12{-0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
                                              -0.5873179542866171, -0.3678314989981802, -0.1252334085114692};
  static constexpr std::array<double, 10> kW20{0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                               0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                               0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                               0.1527533871307259};
  static constexpr std::array<double, 10> kX20{-0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
                                               -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
                                               -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
                                               -0.07652652113349733};

  double rho_;
  bool high_ = false;
  int lg_ = 0;
  std::array<double, 10> w_{};
  std::array<double, 10> x_{};
  double one_minus_ = 1.0;
  double sqrt_one_minus_ = 1.0;
  // |rho| < 0.925 branch
  double asr_ = 0.0;
  std::array<double, 20> sn_{};
  std::array<double, 20> inv_cos2_{};
  // |rho| >= 0.925 branch
  double as_ = 0.0;
  double a_ = 0.0;
  std::array<double, 10> xs1_{}, rs1_{}, xs2_{}, rs2_{};
};

/// Phi_2(a, b; rho). Infinite limits are resolved analytically.
inline double bvn_cdf(const BvnInputs& in) {
  if (std::isnan(in.a) || std::isnan(in.b) || std::isnan(in.rho)) throw std::domain_error("bvn_cdf: NaN input");
  return BvnKernel(in.rho)(in.a, in.b);
}

inline double bvn_cdf(double a, double b, double rho) { return bvn_cdf(BvnInputs{a, b, rho}); }

/// Upper-tail probability of a chi-square variable with df degrees of freedom.
inline double chisq_sf(double x, int df) {
  if (std::isnan(x) || x < 0.0) throw std::domain_error("chisq_sf: x must be non-negative");
  if (df < 1) throw std::domain_error("chisq_sf: df must be >= 1");
  if (x == 0.0) return 1.0;
  if (x == kInf) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

inline double chisq_cdf(double x, int df) {
  if (std::isnan(x) || x < 0.0) throw std::domain_error("chisq_cdf: x must be non-negative");
  if (df < 1) throw std::domain_error("chisq_cdf: df must be >= 1");
  if (x == 0.0) return 0.0;
  if (x == kInf) return 1.0;
  return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

}  // namespace rtm
