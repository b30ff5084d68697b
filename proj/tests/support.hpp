#pragma once

// Small synthetic problems shared by the unit tests.

#include <cstdint>

#include "rtm/rng.hpp"
#include "rtm/simulation.hpp"

namespace rtm::testing {

/// x4 enters equation 1 only and x1 equations 1 and 2, which gives equation 3 the two
/// exclusions it needs to separate theta13, theta23 and the correlations.
inline ModelSpec toy_spec(int j2 = 5, int j3 = 5) {
  ModelSpec s;
  s.y1 = "y1";
  s.y2 = "y2";
  s.y3 = "y3";
  s.eq[0].covariates = {"x1", "x2", "x4"};
  s.eq[1].covariates = {"x1", "x3"};
  s.eq[2].covariates = {"x2", "x3"};
  s.j2 = j2;
  s.j3 = j3;
  return s;
}

inline ParameterSet toy_params(int j2 = 5, int j3 = 5) {
  ParameterSet p;
  p.gamma1 = Eigen::Vector4d(1.0, 0.5, -0.4, 0.6);
  p.gamma2 = Eigen::Vector3d(0.8, 0.3, -0.5);
  p.gamma3 = Eigen::Vector3d(1.2, 0.4, 0.6);
  p.theta12 = -0.3;
  p.theta13 = -0.25;
  p.theta23 = -0.5;
  p.sigma1 = 0.9;
  p.rho12 = 0.3;
  p.rho13 = 0.35;
  p.rho23 = 0.45;
  p.mu2 = Eigen::VectorXd::LinSpaced(j2 - 1, 0.0, 0.6 * (j2 - 2));
  p.mu3 = Eigen::VectorXd::LinSpaced(j3 - 1, 0.0, 0.5 * (j3 - 2));
  return p;
}

inline std::vector<CovariateRecipe> toy_recipes() {
  return {{"x1", Normal{0.0, 1.0}}, {"x2", Bernoulli{0.4}}, {"x3", Normal{0.5, 0.8}}, {"x4", Normal{0.0, 1.0}}};
}

inline Dataset toy_data(std::size_t n, std::uint64_t seed, const ParameterSet& p = toy_params(),
                        const ModelSpec& s = toy_spec()) {
  return sample_dataset(SimConfig{n, seed, p, s, toy_recipes()});
}

/// Random valid parameters for the toy spec.
inline ParameterSet random_params(CounterRng& rng, const ModelSpec& s) {
  const auto dim = static_cast<Eigen::Index>(ParameterLayout(s).dim());
  Eigen::VectorXd u(dim);
  for (Eigen::Index i = 0; i < dim; ++i) u(i) = 0.6 * rng.normal();
  return constrain(UnconstrainedParams{u}, s);
}

}  // namespace rtm::testing
