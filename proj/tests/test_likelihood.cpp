#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles/single_equation.hpp"
#include "rtm/likelihood.hpp"
#include "rtm/simulation.hpp"
#include "support.hpp"

using namespace rtm;
using rtm::testing::random_params;
using rtm::testing::toy_data;
using rtm::testing::toy_params;
using rtm::testing::toy_spec;

namespace {

ConditionalTerms terms_for(double h2, double h3, const ParameterSet& p) {
  const auto s = reduced_form_scales(p.theta23, p.rho12, p.rho13, p.rho23);
  return ConditionalTerms{h2, h3, s.lambda2, s.lambda3, s.rho_tilde};
}

ParameterSet binary_independent() {
  ModelSpec s = toy_spec(2, 2);
  ParameterSet p = ParameterSet::neutral(s);
  return p;
}

}  // namespace

TEST(ConditionalTerms, DegenerateCase) {
  const auto s = reduced_form_scales(0.0, 0.0, 0.0, 0.0);
  EXPECT_EQ(s.lambda2, 1.0);
  EXPECT_EQ(s.lambda3, 1.0);
  EXPECT_EQ(s.rho_tilde, 0.0);
}

TEST(ConditionalTerms, ReferenceEstimatesAsInputs) {
  // Hand arithmetic: 1 - .248^2 = .938496; cov = -.661*.938496 + .530 - .248*.352 = -.177334...
  const double v2 = 1.0 - 0.248 * 0.248;
  const double c = 0.530 - 0.248 * 0.352;
  const double v3 = 0.661 * 0.661 * v2 - 2.0 * 0.661 * c + 1.0 - 0.352 * 0.352;
  const auto s = reduced_form_scales(-0.661, 0.248, 0.352, 0.530);
  // The quoted 6-decimal figures carry intermediate rounding (1/sqrt(.938496) = 1.0322474).
  EXPECT_NEAR(s.lambda2, 1.032246, 3e-6);
  EXPECT_NEAR(s.lambda3, 1.194468, 3e-6);
  EXPECT_NEAR(s.rho_tilde, -0.219028, 3e-6);
  EXPECT_NEAR(s.lambda2, 1.0 / std::sqrt(v2), 1e-15);
  EXPECT_NEAR(s.lambda3, 1.0 / std::sqrt(v3), 1e-15);
  EXPECT_NEAR(s.rho_tilde, (-0.661 * v2 + c) / std::sqrt(v2 * v3), 1e-15);
}

TEST(ConditionalTerms, ZeroResidualLeavesIndexOnly) {
  ParameterSet p = toy_params();
  p.theta12 = 0.0;
  const Eigen::Vector4d w1(1.0, 0.7, 1.0, 0.3);
  const Eigen::Vector3d w2(1.0, 0.7, -0.2), w3(1.0, 1.0, -0.2);
  const auto t = conditional_terms(p, w1, w2, w3, p.gamma1.dot(w1));
  EXPECT_EQ(t.h2, p.gamma2.dot(w2));
  EXPECT_THROW(conditional_terms(p, w1.head(3), w2, w3, 0.0), SpecError);
}

TEST(ReducedFormScales, PartialsMatchFiniteDifferences) {
  const Eigen::Vector4d x(-0.4, 0.3, -0.2, 0.5);
  const auto s = reduced_form_scales(x(0), x(1), x(2), x(3));
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d up = x, dn = x;
    up(k) += 1e-6;
    dn(k) -= 1e-6;
    const auto a = reduced_form_scales(up(0), up(1), up(2), up(3));
    const auto b = reduced_form_scales(dn(0), dn(1), dn(2), dn(3));
    EXPECT_NEAR(s.d_lambda2(k), (a.lambda2 - b.lambda2) / 2e-6, 1e-7);
    EXPECT_NEAR(s.d_lambda3(k), (a.lambda3 - b.lambda3) / 2e-6, 1e-7);
    EXPECT_NEAR(s.d_rho_tilde(k), (a.rho_tilde - b.rho_tilde) / 2e-6, 1e-7);
  }
}

TEST(CellProbability, IndependentSymmetricBinary) {
  const ParameterSet p = binary_independent();
  const auto t = terms_for(0.0, 0.0, p);
  for (int a = 1; a <= 2; ++a)
    for (int b = 1; b <= 2; ++b) EXPECT_NEAR(cell_probability(t, p, a, b), 0.25, 1e-15);
  EXPECT_THROW(cell_probability(t, p, 0, 1), std::domain_error);
  EXPECT_THROW(cell_probability(t, p, 1, 3), std::domain_error);
}

TEST(CellProbability, GridSumsToOne) {
  CounterRng rng(314159);
  for (int trial = 0; trial < 200; ++trial) {
    const int j2 = 2 + static_cast<int>(rng.next_bits() % 5), j3 = 2 + static_cast<int>(rng.next_bits() % 5);
    const ModelSpec s = toy_spec(j2, j3);
    const ParameterSet p = random_params(rng, s);
    const Eigen::Vector4d w1(1.0, rng.normal(), rng.uniform() < 0.5 ? 1.0 : 0.0, rng.normal());
    const Eigen::Vector3d w2(1.0, w1(1), rng.normal()), w3(1.0, w1(2), w2(2));
    const auto t = conditional_terms(p, w1, w2, w3, p.gamma1.dot(w1) + p.sigma1 * rng.normal());
    double total = 0.0;
    for (int a = 1; a <= j2; ++a)
      for (int b = 1; b <= j3; ++b) {
        const double c = cell_probability(t, p, a, b);
        ASSERT_GE(c, 0.0);
        total += c;
      }
    EXPECT_NEAR(total, 1.0, 1e-10) << "trial " << trial;
  }
}

TEST(CellProbability, ReducesToUnivariateOrderedProbit) {
  CounterRng rng(2718);
  const ModelSpec s = toy_spec(5, 4);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterSet p = random_params(rng, s);
    p.rho12 = 0.0;
    p.rho13 = 0.0;
    p.rho23 = 0.8 * (rng.uniform() - 0.5);
    const Eigen::Vector3d w(1.0, rng.normal(), rng.normal());
    const Eigen::Vector4d w1(1.0, w(1), w(2), rng.normal());
    const double y1 = rng.normal();
    const auto t = conditional_terms(p, w1, w, w, y1);
    const double index = p.gamma2.dot(w) + p.theta12 * y1;
    std::vector<double> cuts(p.mu2.data(), p.mu2.data() + p.mu2.size());
    for (int a = 1; a <= s.j2; ++a) {
      double marginal = 0.0;
      for (int b = 1; b <= s.j3; ++b) marginal += cell_probability(t, p, a, b);
      const double expected = std::exp(oracle::ordered_probit_loglik({a}, {index}, cuts));
      EXPECT_NEAR(marginal, expected, 1e-10);
    }
  }
}

TEST(CellProbability, MatchesReducedFormMonteCarlo) {
  const ModelSpec s = toy_spec(3, 3);
  ParameterSet p = ParameterSet::neutral(s);
  p.theta23 = -0.5;
  p.rho12 = 0.2;
  p.rho13 = 0.1;
  p.rho23 = 0.3;
  p.mu2 = Eigen::Vector2d(0.0, 1.0);
  p.mu3 = Eigen::Vector2d(0.0, 1.0);
  const auto t = terms_for(0.3, -0.2, p);
  const auto mc = mc_cell_probability(t, p, 10'000'000, 11);
  for (int a = 1; a <= 3; ++a)
    for (int b = 1; b <= 3; ++b)
      EXPECT_LE(std::fabs(cell_probability(t, p, a, b) - mc.prob(a - 1, b - 1)), 3.0 * mc.se(a - 1, b - 1))
          << "cell " << a << "," << b;
}

TEST(CellProbability, RecursivityRaisesTopLevelWhenY2StarIsLarge) {
  const ModelSpec s = toy_spec(5, 5);
  ParameterSet p = toy_params();
  double prev = -1.0;
  for (double theta23 : {-0.8, -0.4, 0.0, 0.4, 0.8}) {
    p.theta23 = theta23;
    const auto t = terms_for(4.0, 0.0, p);
    const auto mc = mc_cell_probability_structural(t, p, 200'000, 5);
    const double top = mc.prob.col(s.j3 - 1).sum();
    EXPECT_GE(top, prev);
    prev = top;
  }
}

TEST(ObsLoglik, ClosedFormComposition) {
  const ModelSpec s = toy_spec(2, 2);
  ParameterSet p = ParameterSet::neutral(s);
  p.gamma1 = Eigen::Vector4d(0.5, 1.0, -1.0, 2.0);
  const Observation row{Eigen::Vector4d(1.0, 0.2, 0.3, 0.1), Eigen::Vector3d(1.0, 0.0, 0.0),
                        Eigen::Vector3d(1.0, 0.0, 0.0), 0.5 + 0.2 - 0.3 + 0.2, 2, 1};
  EXPECT_NEAR(obs_loglik(p, row), -2.3052326, 1e-6);
  EXPECT_NEAR(obs_loglik(p, row), std::log(0.25) - 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  ParameterSet wide = p;
  wide.sigma1 = 2.0;
  EXPECT_NEAR(obs_loglik(p, row) - obs_loglik(wide, row), std::log(2.0), 1e-14);
}

TEST(ObsLoglik, MatchesMonteCarloCellPlusDensity) {
  const ModelSpec s = toy_spec();
  const ParameterSet p = toy_params();
  const Dataset data = toy_data(5, 8);
  const Design d = build_design(data, s);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const Observation o = observation(d, r);
    const auto t = conditional_terms(p, o.w1, o.w2, o.w3, o.y1);
    const auto mc = mc_cell_probability(t, p, 2'000'000, 100 + r);
    const double pc = mc.prob(o.y2 - 1, o.y3 - 1), se = mc.se(o.y2 - 1, o.y3 - 1);
    const double dens = marginal_log_density(o.y1, p.gamma1.dot(o.w1), p.sigma1);
    // 3 SE on the probability scale, mapped through the log
    EXPECT_NEAR(obs_loglik(p, o), std::log(pc) + dens, 3.0 * se / pc) << "row " << r;
  }
}

TEST(TotalLoglik, SingleRowEqualsObservation) {
  const ModelSpec s = toy_spec();
  const ParameterSet p = toy_params();
  const Dataset one = toy_data(1, 3);
  EXPECT_DOUBLE_EQ(total_loglik(p, one, s), obs_loglik(p, observation(build_design(one, s), 0)));
}

TEST(TotalLoglik, SeparatesWhenErrorsIndependentAndNoFeedback) {
  const ModelSpec s = toy_spec();
  ParameterSet p = toy_params();
  p.theta12 = p.theta13 = p.theta23 = 0.0;
  p.rho12 = p.rho13 = p.rho23 = 0.0;
  const Dataset data = toy_data(1000, 42, p);
  const Design d = build_design(data, s);

  std::vector<double> y1(d.rows()), m1(d.rows()), i2(d.rows()), i3(d.rows());
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    y1[r] = d.y1(ri);
    m1[r] = p.gamma1(0) + p.gamma1(1) * data.column("x1")[r] + p.gamma1(2) * data.column("x2")[r] +
            p.gamma1(3) * data.column("x4")[r];
    i2[r] = p.gamma2(0) + p.gamma2(1) * data.column("x1")[r] + p.gamma2(2) * data.column("x3")[r];
    i3[r] = p.gamma3(0) + p.gamma3(1) * data.column("x2")[r] + p.gamma3(2) * data.column("x3")[r];
  }
  const std::vector<double> c2(p.mu2.data(), p.mu2.data() + p.mu2.size());
  const std::vector<double> c3(p.mu3.data(), p.mu3.data() + p.mu3.size());
  const double expected = oracle::regression_loglik(y1, m1, p.sigma1) + oracle::ordered_probit_loglik(d.y2, i2, c2) +
                          oracle::ordered_probit_loglik(d.y3, i3, c3);
  EXPECT_NEAR(total_loglik(p, data, s), expected, 1e-8);
}

TEST(TotalLoglik, RowPermutationInvariance) {
  const ModelSpec s = toy_spec();
  const ParameterSet p = toy_params();
  const Dataset data = toy_data(500, 77);
  std::vector<std::size_t> perm(data.rows());
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng rng(1);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.next_bits() % (i + 1)]);
  EXPECT_NEAR(total_loglik(p, data, s), total_loglik(p, data.select_rows(perm), s), 1e-9);
}

TEST(TotalLoglik, CovariateRenamingInvariance) {
  const ModelSpec s = toy_spec();
  const ParameterSet p = toy_params();
  const Dataset data = toy_data(200, 5);
  Dataset renamed;
  for (const auto& n : data.names()) renamed.add_column(n.front() == 'x' ? "renamed_" + n : n, data.column(n));
  ModelSpec s2 = s;
  for (auto& e : s2.eq)
    for (auto& c : e.covariates) c = "renamed_" + c;
  EXPECT_EQ(total_loglik(p, data, s), total_loglik(p, renamed, s2));
}

TEST(TotalLoglik, WorkerCountDoesNotChangeBits) {
  const ModelSpec s = toy_spec();
  const ParameterSet p = toy_params();
  const Design d = build_design(toy_data(1001, 9), s);
  const auto u = unconstrain(p, s);
  const auto base = loglik_and_gradient(u, d, s, 1);
  for (int w : {2, 3, 8}) {
    EXPECT_EQ(total_loglik(p, d, s, w), total_loglik(p, d, s, 1));
    const auto e = loglik_and_gradient(u, d, s, w);
    EXPECT_EQ(e.value, base.value);
    EXPECT_TRUE((e.gradient.array() == base.gradient.array()).all());
  }
  EXPECT_EQ(base.value, total_loglik(constrain(u, s), d, s));
}

TEST(LoglikGradient, MatchesCentralDifferences) {
  for (int j : {2, 5}) {
    const ModelSpec s = toy_spec(j, j == 2 ? 3 : 5);
    const Dataset data = toy_data(50, 17 + j, toy_params(s.j2, s.j3), s);
    const Design d = build_design(data, s);
    CounterRng rng(404 + j);
    const auto truth = unconstrain(toy_params(s.j2, s.j3), s);
    for (int point = 0; point < 10; ++point) {
      UnconstrainedParams u = truth;
      for (Eigen::Index k = 0; k < u.values.size(); ++k) u.values(k) += 0.3 * rng.normal();
      const Eigen::VectorXd g = loglik_gradient(u, data, s);
      ASSERT_EQ(static_cast<std::size_t>(g.size()), ParameterLayout(s).dim());
      for (Eigen::Index k = 0; k < g.size(); ++k) {
        const double h = 1e-6 * std::max(1.0, std::fabs(u.values(k)));
        UnconstrainedParams up = u, dn = u;
        up.values(k) += h;
        dn.values(k) -= h;
        const double fd =
            (total_loglik(constrain(up, s), d, s) - total_loglik(constrain(dn, s), d, s)) / (2.0 * h);
        EXPECT_LE(std::fabs(g(k) - fd), 1e-4 * std::max(std::fabs(fd), 1e-2)) << "coordinate " << k << " point " << point;
      }
    }
  }
}
