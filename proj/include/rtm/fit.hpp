#pragma once

// Likelihood-based fit summaries and the likelihood-ratio test.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>

#include "rtm/distributions.hpp"
#include "rtm/errors.hpp"

namespace rtm {

struct FitStats {
  double loglik = 0.0;
  std::size_t n = 0;
  int k_free = 0;
  double loglik_constants_only = std::numeric_limits<double>::quiet_NaN();
  double rho_c_sq = std::numeric_limits<double>::quiet_NaN();  // 1 - LL / LL(constants only)
  double aic_per_obs = 0.0;
  double bic_per_obs = 0.0;
};

inline FitStats fit_stats(double loglik, std::size_t n, int k_free,
                          std::optional<double> loglik_constants_only = std::nullopt) {
  if (n == 0) throw std::domain_error("fit_stats: no observations");
  FitStats f;
  f.loglik = loglik;
  f.n = n;
  f.k_free = k_free;
  const double nn = static_cast<double>(n);
  f.aic_per_obs = (2.0 * k_free - 2.0 * loglik) / nn;
  f.bic_per_obs = (k_free * std::log(nn) - 2.0 * loglik) / nn;
  if (loglik_constants_only) {
    f.loglik_constants_only = *loglik_constants_only;
    f.rho_c_sq = 1.0 - loglik / *loglik_constants_only;
  }
  return f;
}

struct LrTest {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

inline constexpr double kLrSlack = 1e-6;

inline LrTest lr_test(double loglik_unrestricted, double loglik_restricted, int df) {
  if (df < 1) throw SpecError("lr_test: df must be at least 1");
  double stat = -2.0 * (loglik_restricted - loglik_unrestricted);
  if (stat < -kLrSlack)
    throw std::domain_error("lr_test: restricted log-likelihood exceeds the unrestricted one (arguments swapped?)");
  if (stat < 0.0) stat = 0.0;
  return LrTest{stat, df, chisq_sf(stat, df)};
}

}  // namespace rtm
