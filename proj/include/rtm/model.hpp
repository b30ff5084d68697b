#pragma once

// Equation specification, design matrices and the two parameter representations:
// the constrained ParameterSet (what gets reported) and the unconstrained optimizer vector.

#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtm/dataset.hpp"
#include "rtm/errors.hpp"

namespace rtm {

struct EquationSpec {
  std::vector<std::string> covariates;
  bool constant = true;

  std::size_t size() const noexcept { return covariates.size() + (constant ? 1 : 0); }
};

/// Which columns enter which equation. Equation 1 is the continuous outcome, 2 and 3 the ordinal ones.
/// Latent-score columns are ordinary covariates here.
struct ModelSpec {
  std::string y1;
  std::string y2;
  std::string y3;
  std::array<EquationSpec, 3> eq;
  int j2 = 5;
  int j3 = 5;

  const EquationSpec& equation(int q) const { return eq.at(static_cast<std::size_t>(q - 1)); }

  void validate() const {
    if (j2 < 2 || j3 < 2) throw SpecError("ordinal outcomes need at least 2 levels");
    if (y1.empty() || y2.empty() || y3.empty()) throw SpecError("outcome column names must be set");
    for (int q = 1; q <= 3; ++q) {
      std::set<std::string> seen;
      for (const auto& c : equation(q).covariates) {
        if (!seen.insert(c).second)
          throw SpecError("duplicate covariate '" + c + "' in equation " + std::to_string(q));
        if (c == y1 || c == y2 || c == y3)
          throw SpecError("outcome column '" + c + "' listed as covariate in equation " + std::to_string(q));
      }
    }
  }

  /// Every column the model reads.
  std::vector<std::string> used_columns() const {
    std::vector<std::string> out{y1, y2, y3};
    std::set<std::string> seen(out.begin(), out.end());
    for (const auto& e : eq)
      for (const auto& c : e.covariates)
        if (seen.insert(c).second) out.push_back(c);
    return out;
  }
};

/// Offsets of each parameter block inside flat vectors (constrained or unconstrained).
struct ParameterLayout {
  std::size_t k1 = 0, k2 = 0, k3 = 0;
  int j2 = 2, j3 = 2;

  explicit ParameterLayout(const ModelSpec& spec)
      : k1(spec.eq[0].size()), k2(spec.eq[1].size()), k3(spec.eq[2].size()), j2(spec.j2), j3(spec.j3) {}

  std::size_t gamma1() const noexcept { return 0; }
  std::size_t gamma2() const noexcept { return k1; }
  std::size_t gamma3() const noexcept { return k1 + k2; }
  std::size_t theta12() const noexcept { return k1 + k2 + k3; }
  std::size_t theta13() const noexcept { return theta12() + 1; }
  std::size_t theta23() const noexcept { return theta12() + 2; }
  std::size_t sigma1() const noexcept { return theta12() + 3; }
  std::size_t rho12() const noexcept { return sigma1() + 1; }
  std::size_t rho13() const noexcept { return sigma1() + 2; }
  std::size_t rho23() const noexcept { return sigma1() + 3; }
  std::size_t mu2() const noexcept { return rho23() + 1; }
  std::size_t mu3() const noexcept { return mu2() + static_cast<std::size_t>(j2 - 2); }
  std::size_t dim() const noexcept { return mu3() + static_cast<std::size_t>(j3 - 2); }
};

inline std::vector<std::string> equation_column_names(const EquationSpec& e) {
  std::vector<std::string> out;
  if (e.constant) out.emplace_back("constant");
  out.insert(out.end(), e.covariates.begin(), e.covariates.end());
  return out;
}

/// Human-readable names, in layout order.
inline std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> out;
  for (int q = 1; q <= 3; ++q)
    for (const auto& n : equation_column_names(spec.equation(q))) out.push_back("eq" + std::to_string(q) + ":" + n);
  for (const char* n : {"theta12", "theta13", "theta23", "sigma1", "rho12", "rho13", "rho23"}) out.emplace_back(n);
  for (int j = 2; j <= spec.j2 - 1; ++j) out.push_back("mu2[" + std::to_string(j) + "]");
  for (int j = 2; j <= spec.j3 - 1; ++j) out.push_back("mu3[" + std::to_string(j) + "]");
  return out;
}

/// Constrained parameters. Thresholds include the fixed mu[0] = 0 (the first cut point).
struct ParameterSet {
  Eigen::VectorXd gamma1, gamma2, gamma3;
  double theta12 = 0, theta13 = 0, theta23 = 0;
  double sigma1 = 1;
  double rho12 = 0, rho13 = 0, rho23 = 0;
  Eigen::VectorXd mu2, mu3;

  /// Error covariance of (eps1, eps2, eps3).
  Eigen::Matrix3d covariance() const {
    Eigen::Matrix3d s;
    s << sigma1 * sigma1, rho12 * sigma1, rho13 * sigma1,  //
        rho12 * sigma1, 1.0, rho23,                        //
        rho13 * sigma1, rho23, 1.0;
    return s;
  }

  void validate(const ModelSpec& spec) const {
    const ParameterLayout lay(spec);
    if (static_cast<std::size_t>(gamma1.size()) != lay.k1 || static_cast<std::size_t>(gamma2.size()) != lay.k2 ||
        static_cast<std::size_t>(gamma3.size()) != lay.k3)
      throw SpecError("coefficient vector sizes do not match the model spec");
    if (mu2.size() != spec.j2 - 1 || mu3.size() != spec.j3 - 1)
      throw SpecError("threshold vector sizes do not match the level counts");
    if (!(sigma1 > 0.0) || !std::isfinite(sigma1)) throw ParameterError("sigma1 must be positive");
    for (double r : {rho12, rho13, rho23})
      if (!(std::fabs(r) < 1.0)) throw ParameterError("error correlations must lie in (-1, 1)");
    if (Eigen::LLT<Eigen::Matrix3d>(covariance()).info() != Eigen::Success)
      throw ParameterError("error covariance matrix is not positive definite");
    for (const Eigen::VectorXd* mu : {&mu2, &mu3}) {
      if ((*mu)(0) != 0.0) throw ParameterError("first threshold must be fixed at zero");
      for (Eigen::Index j = 1; j < mu->size(); ++j)
        if (!((*mu)(j) > (*mu)(j - 1))) throw ParameterError("thresholds must be strictly increasing");
    }
  }

  /// Flat vector in ParameterLayout order (free thresholds only).
  Eigen::VectorXd flatten(const ModelSpec& spec) const {
    const ParameterLayout lay(spec);
    Eigen::VectorXd v(static_cast<Eigen::Index>(lay.dim()));
    v.segment(lay.gamma1(), lay.k1) = gamma1;
    v.segment(lay.gamma2(), lay.k2) = gamma2;
    v.segment(lay.gamma3(), lay.k3) = gamma3;
    v(lay.theta12()) = theta12;
    v(lay.theta13()) = theta13;
    v(lay.theta23()) = theta23;
    v(lay.sigma1()) = sigma1;
    v(lay.rho12()) = rho12;
    v(lay.rho13()) = rho13;
    v(lay.rho23()) = rho23;
    v.segment(lay.mu2(), spec.j2 - 2) = mu2.tail(spec.j2 - 2);
    v.segment(lay.mu3(), spec.j3 - 2) = mu3.tail(spec.j3 - 2);
    return v;
  }

  static ParameterSet unflatten(const Eigen::VectorXd& v, const ModelSpec& spec) {
    const ParameterLayout lay(spec);
    if (static_cast<std::size_t>(v.size()) != lay.dim()) throw SpecError("parameter vector has the wrong dimension");
    ParameterSet p;
    p.gamma1 = v.segment(lay.gamma1(), lay.k1);
    p.gamma2 = v.segment(lay.gamma2(), lay.k2);
    p.gamma3 = v.segment(lay.gamma3(), lay.k3);
    p.theta12 = v(lay.theta12());
    p.theta13 = v(lay.theta13());
    p.theta23 = v(lay.theta23());
    p.sigma1 = v(lay.sigma1());
    p.rho12 = v(lay.rho12());
    p.rho13 = v(lay.rho13());
    p.rho23 = v(lay.rho23());
    p.mu2 = Eigen::VectorXd::Zero(spec.j2 - 1);
    p.mu3 = Eigen::VectorXd::Zero(spec.j3 - 1);
    p.mu2.tail(spec.j2 - 2) = v.segment(lay.mu2(), spec.j2 - 2);
    p.mu3.tail(spec.j3 - 2) = v.segment(lay.mu3(), spec.j3 - 2);
    return p;
  }

  /// Zero coefficients, unit variance, independent errors, unit-spaced thresholds.
  static ParameterSet neutral(const ModelSpec& spec) {
    const ParameterLayout lay(spec);
    ParameterSet p;
    p.gamma1 = Eigen::VectorXd::Zero(lay.k1);
    p.gamma2 = Eigen::VectorXd::Zero(lay.k2);
    p.gamma3 = Eigen::VectorXd::Zero(lay.k3);
    p.mu2 = Eigen::VectorXd::LinSpaced(spec.j2 - 1, 0.0, spec.j2 - 2.0);
    p.mu3 = Eigen::VectorXd::LinSpaced(spec.j3 - 1, 0.0, spec.j3 - 2.0);
    return p;
  }
};

/// Optimizer coordinates: log sigma1, correlation angles (as tangents) and log threshold increments.
struct UnconstrainedParams {
  Eigen::VectorXd values;
};

namespace detail {

// The correlation Cholesky factor is parameterized by three angles phi_a in (0, pi), with
// u_a = cot(phi_a); so cos(phi_a) = u/sqrt(1+u^2) and sin(phi_a) = 1/sqrt(1+u^2). Rows:
//   [1, 0, 0], [c1, s1, 0], [c2, s2*c3, s2*s3]
// hence rho12 = c1, rho13 = c2, rho23 = c1*c2 + s1*s2*c3; u = 0 gives zero correlation.
struct AngleCorrelations {
  double rho12, rho13, rho23;
  Eigen::Matrix3d jacobian;  // d(rho12, rho13, rho23) / d(u1, u2, u3)
};

inline AngleCorrelations correlations_from_angles(double u1, double u2, double u3) {
  const double s1 = 1.0 / std::sqrt(1.0 + u1 * u1), c1 = u1 * s1;
  const double s2 = 1.0 / std::sqrt(1.0 + u2 * u2), c2 = u2 * s2;
  const double s3 = 1.0 / std::sqrt(1.0 + u3 * u3), c3 = u3 * s3;
  AngleCorrelations out{c1, c2, c1 * c2 + s1 * s2 * c3, Eigen::Matrix3d::Zero()};
  out.jacobian(0, 0) = s1 * s1 * s1;
  out.jacobian(1, 1) = s2 * s2 * s2;
  out.jacobian(2, 0) = s1 * s1 * s1 * c2 - c1 * s1 * s1 * s2 * c3;
  out.jacobian(2, 1) = c1 * s2 * s2 * s2 - s1 * c2 * s2 * s2 * c3;
  out.jacobian(2, 2) = s1 * s2 * s3 * s3 * s3;
  return out;
}

inline double tangent_of(double cosine) { return cosine / std::sqrt((1.0 - cosine) * (1.0 + cosine)); }

}  // namespace detail

inline ParameterSet constrain(const UnconstrainedParams& u, const ModelSpec& spec) {
  const ParameterLayout lay(spec);
  const Eigen::VectorXd& v = u.values;
  if (static_cast<std::size_t>(v.size()) != lay.dim())
    throw SpecError("unconstrained vector has dimension " + std::to_string(v.size()) + ", expected " +
                    std::to_string(lay.dim()));
  ParameterSet p;
  p.gamma1 = v.segment(lay.gamma1(), lay.k1);
  p.gamma2 = v.segment(lay.gamma2(), lay.k2);
  p.gamma3 = v.segment(lay.gamma3(), lay.k3);
  p.theta12 = v(lay.theta12());
  p.theta13 = v(lay.theta13());
  p.theta23 = v(lay.theta23());
  p.sigma1 = std::exp(v(lay.sigma1()));
  const auto r = detail::correlations_from_angles(v(lay.rho12()), v(lay.rho13()), v(lay.rho23()));
  p.rho12 = r.rho12;
  p.rho13 = r.rho13;
  p.rho23 = r.rho23;
  auto thresholds = [&](std::size_t off, int levels) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(levels - 1);
    for (int j = 1; j < levels - 1; ++j) mu(j) = mu(j - 1) + std::exp(v(off + static_cast<std::size_t>(j - 1)));
    return mu;
  };
  p.mu2 = thresholds(lay.mu2(), spec.j2);
  p.mu3 = thresholds(lay.mu3(), spec.j3);
  return p;
}

inline UnconstrainedParams unconstrain(const ParameterSet& p, const ModelSpec& spec) {
  p.validate(spec);
  const ParameterLayout lay(spec);
  Eigen::VectorXd v(static_cast<Eigen::Index>(lay.dim()));
  v.segment(lay.gamma1(), lay.k1) = p.gamma1;
  v.segment(lay.gamma2(), lay.k2) = p.gamma2;
  v.segment(lay.gamma3(), lay.k3) = p.gamma3;
  v(lay.theta12()) = p.theta12;
  v(lay.theta13()) = p.theta13;
  v(lay.theta23()) = p.theta23;
  v(lay.sigma1()) = std::log(p.sigma1);
  const double partial =
      (p.rho23 - p.rho12 * p.rho13) / std::sqrt((1.0 - p.rho12 * p.rho12) * (1.0 - p.rho13 * p.rho13));
  v(lay.rho12()) = detail::tangent_of(p.rho12);
  v(lay.rho13()) = detail::tangent_of(p.rho13);
  v(lay.rho23()) = detail::tangent_of(partial);
  for (int j = 1; j < spec.j2 - 1; ++j) v(lay.mu2() + j - 1) = std::log(p.mu2(j) - p.mu2(j - 1));
  for (int j = 1; j < spec.j3 - 1; ++j) v(lay.mu3() + j - 1) = std::log(p.mu3(j) - p.mu3(j - 1));
  return UnconstrainedParams{v};
}

/// Jacobian d(flattened constrained) / d(unconstrained), used for the delta method.
inline Eigen::MatrixXd constrain_jacobian(const UnconstrainedParams& u, const ModelSpec& spec) {
  const ParameterLayout lay(spec);
  const Eigen::VectorXd& v = u.values;
  const auto n = static_cast<Eigen::Index>(lay.dim());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(n, n);
  jac(lay.sigma1(), lay.sigma1()) = std::exp(v(lay.sigma1()));
  const auto r = detail::correlations_from_angles(v(lay.rho12()), v(lay.rho13()), v(lay.rho23()));
  jac.block(lay.rho12(), lay.rho12(), 3, 3) = r.jacobian;
  auto thresholds = [&](std::size_t off, int levels) {
    // free entry i is mu_{i+1} = sum_{m<=i} exp(u_m)
    for (int i = 0; i < levels - 2; ++i)
      for (int m = 0; m < levels - 2; ++m)
        jac(off + i, off + m) = m <= i ? std::exp(v(off + m)) : 0.0;
  };
  thresholds(lay.mu2(), spec.j2);
  thresholds(lay.mu3(), spec.j3);
  return jac;
}

/// Per-equation design matrices and outcomes, ready for likelihood evaluation.
struct Design {
  Eigen::MatrixXd x1, x2, x3;
  Eigen::VectorXd y1;
  std::vector<int> y2, y3;
  int j2 = 2, j3 = 2;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(y1.size()); }
  const Eigen::MatrixXd& x(int q) const { return q == 1 ? x1 : (q == 2 ? x2 : x3); }
};

inline Design build_design(const Dataset& data, const ModelSpec& spec) {
  spec.validate();
  const std::size_t n = data.rows();
  const auto ni = static_cast<Eigen::Index>(n);
  auto checked = [&](const std::string& name) -> const std::vector<double>& {
    const auto& col = data.column(name);
    for (std::size_t r = 0; r < n; ++r)
      if (!std::isfinite(col[r]))
        throw DataError("column '" + name + "' has a missing or non-finite value at row " + std::to_string(r + 1));
    return col;
  };
  auto matrix = [&](const EquationSpec& e) {
    Eigen::MatrixXd m(ni, static_cast<Eigen::Index>(e.size()));
    Eigen::Index c = 0;
    if (e.constant) m.col(c++).setOnes();
    for (const auto& name : e.covariates) {
      const auto& col = checked(name);
      m.col(c++) = Eigen::Map<const Eigen::VectorXd>(col.data(), ni);
    }
    return m;
  };
  auto ordinal = [&](const std::string& name, int levels) {
    const auto& col = checked(name);
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double v = col[r];
      if (v != std::floor(v) || v < 1 || v > levels)
        throw DataError("ordinal column '" + name + "' has value " + std::to_string(v) + " at row " +
                        std::to_string(r + 1) + " outside {1.." + std::to_string(levels) + "}");
      out[r] = static_cast<int>(v);
    }
    return out;
  };

  Design d;
  d.x1 = matrix(spec.eq[0]);
  d.x2 = matrix(spec.eq[1]);
  d.x3 = matrix(spec.eq[2]);
  const auto& y1 = checked(spec.y1);
  d.y1 = Eigen::Map<const Eigen::VectorXd>(y1.data(), ni);
  d.y2 = ordinal(spec.y2, spec.j2);
  d.y3 = ordinal(spec.y3, spec.j3);
  d.j2 = spec.j2;
  d.j3 = spec.j3;
  return d;
}

}  // namespace rtm
