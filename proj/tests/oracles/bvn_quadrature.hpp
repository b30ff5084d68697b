#pragma once

// Independent bivariate-normal CDF: adaptive Gauss-Kronrod over the first coordinate of the
// density, with the inner coordinate integrated in closed form (conditional normal).

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace rtm::oracle {

inline long double phi_ld(long double x) { return std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L); }
inline long double Phi_ld(long double x) { return 0.5L * std::erfc(-x / std::sqrt(2.0L)); }

inline double bvn_by_quadrature(double a, double b, double rho) {
  if (std::isinf(a) && a < 0) return 0.0;
  if (std::isinf(b) && b < 0) return 0.0;
  const long double s = std::sqrt((1.0L - rho) * (1.0L + rho));
  auto integrand = [&](long double x) -> long double {
    return phi_ld(x) * Phi_ld((static_cast<long double>(b) - rho * x) / s);
  };
  long double err = 0;
  // Split at zero (or at a) so the kernel sees a bounded piece where the mass sits.
  const long double lo_cut = std::fmin(static_cast<long double>(a), -10.0L);
  long double total = 0;
  if (a > -10.0) {
    total += boost::math::quadrature::gauss_kronrod<long double, 61>::integrate(integrand, lo_cut,
                                                                              static_cast<long double>(a), 20, 1e-17L, &err);
    total += boost::math::quadrature::gauss_kronrod<long double, 61>::integrate(
        integrand, -std::numeric_limits<long double>::infinity(), lo_cut, 20, 1e-17L, &err);
  } else {
    total += boost::math::quadrature::gauss_kronrod<long double, 61>::integrate(
        integrand, -std::numeric_limits<long double>::infinity(), static_cast<long double>(a), 20, 1e-17L, &err);
  }
  return static_cast<double>(total);
}

/// erf(z) from its Maclaurin series in long double.
inline long double erf_series(long double z) {
  long double sum = 0, term = z;  // z^(2n+1)/n! * (-1)^n
  for (int n = 0; n < 200; ++n) {
    sum += term / (2 * n + 1);
    term *= -z * z / (n + 1);
    if (std::fabs(term) < 1e-30L) break;
  }
  return 2.0L / std::sqrt(3.14159265358979323846264338327950288L) * sum;
}

inline double normal_cdf_by_series(double x) {
  return static_cast<double>(0.5L + 0.5L * erf_series(static_cast<long double>(x) / std::sqrt(2.0L)));
}

}  // namespace rtm::oracle
