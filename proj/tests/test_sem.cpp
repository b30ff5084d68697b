#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rtm/sem.hpp"
#include "sem_support.hpp"

using namespace rtm;
using rtm::testing::simulate_sem;
using rtm::testing::two_latent_params;
using rtm::testing::two_latent_spec;

namespace {

SemSpec one_factor(int indicators, int exogenous = 0) {
  SemSpec s;
  for (int i = 0; i < indicators; ++i) s.indicators.push_back("u" + std::to_string(i + 1));
  for (int i = 0; i < exogenous; ++i) s.exogenous.push_back("x" + std::to_string(i + 1));
  s.latents = {"f"};
  s.loading_pattern = Mask::Constant(indicators, 1, true);
  s.structural_pattern = Mask::Constant(1, exogenous, true);
  return s;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

}  // namespace

TEST(ImpliedCovariance, ZeroLoadingsGiveDiagonalErrors) {
  const SemSpec s = two_latent_spec();
  SemParams p = two_latent_params();
  p.omega.setZero();
  const Eigen::MatrixXd sx = Eigen::Vector2d(1.0, 2.0).asDiagonal();
  const Eigen::MatrixXd c = implied_covariance(s, p, sx);
  const Eigen::MatrixXd expect = p.theta_diag.asDiagonal();
  EXPECT_EQ((c.topLeftCorner(6, 6) - expect).norm(), 0.0);
  EXPECT_EQ(c.topRightCorner(6, 2).norm(), 0.0);
  EXPECT_EQ((c.bottomRightCorner(2, 2) - sx).norm(), 0.0);
}

TEST(ImpliedCovariance, PassThrough) {
  const SemSpec s = one_factor(1);
  const SemParams p{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 0), Eigen::VectorXd::Zero(1),
                    Eigen::MatrixXd::Identity(1, 1)};
  EXPECT_EQ(implied_covariance(s, p, Eigen::MatrixXd::Zero(0, 0))(0, 0), 1.0);
}

TEST(ImpliedCovariance, PatternMismatchIsSpecError) {
  const SemSpec s = two_latent_spec();
  SemParams p = two_latent_params();
  p.omega(0, 1) = 0.3;  // fixed cell
  EXPECT_THROW(implied_covariance(s, p, Eigen::MatrixXd::Identity(2, 2)), SpecError);
  p = two_latent_params();
  p.tau = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_THROW(implied_covariance(s, p, Eigen::MatrixXd::Identity(2, 2)), SpecError);
}

TEST(ImpliedCovariance, MatchesMonteCarloCovariance) {
  SemSpec s = two_latent_spec();
  s.free_latent_correlations = true;
  SemParams p = two_latent_params();
  p.nu_cov << 1.0, 0.4, 0.4, 1.0;
  const Eigen::VectorXd x_sd = Eigen::Vector2d(1.0, 1.5);
  const auto draws = simulate_sem(1000000, 17, s, p, x_sd, Eigen::VectorXd::Zero(6));
  std::vector<std::string> names = s.indicators;
  names.insert(names.end(), s.exogenous.begin(), s.exogenous.end());
  Eigen::VectorXd means;
  const Eigen::MatrixXd brute = detail::sample_covariance(detail::column_block(draws.data, names), means);
  const Eigen::MatrixXd sx = brute.bottomRightCorner(2, 2);
  const Eigen::MatrixXd c = implied_covariance(s, p, sx);
  const double n = 1e6;
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 8; ++j) {
      // sd of a sample covariance under normality: sqrt((s_ii s_jj + s_ij^2) / n)
      const double se = std::sqrt((c(i, i) * c(j, j) + c(i, j) * c(i, j)) / n);
      EXPECT_NEAR(c(i, j), brute(i, j), 4.5 * se) << i << "," << j;
    }
}

TEST(ImpliedCovariance, PositiveDefiniteForRandomParams) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> norm;
  SemSpec s = two_latent_spec();
  s.free_latent_correlations = true;
  const detail::SemPacking pack{s};
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd v(pack.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 2.0 * norm(gen);
    const Eigen::MatrixXd c = implied_covariance(s, pack.unpack(v), Eigen::Vector2d(0.5, 3.0).asDiagonal());
    EXPECT_EQ(c.llt().info(), Eigen::Success);
    EXPECT_EQ((c - c.transpose()).norm(), 0.0);
  }
}

TEST(SemDiscrepancy, NonNegativeAndZeroAtSample) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> norm;
  Eigen::MatrixXd a(4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) a(i) = norm(gen);
  const Eigen::MatrixXd s = a * a.transpose() + Eigen::MatrixXd::Identity(4, 4);
  const double ld = std::log(s.determinant());
  EXPECT_NEAR(detail::ml_discrepancy(s, s, ld), 0.0, 1e-12);
  for (int t = 0; t < 50; ++t) {
    for (Eigen::Index i = 0; i < 16; ++i) a(i) = norm(gen);
    const Eigen::MatrixXd sigma = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    EXPECT_GT(detail::ml_discrepancy(sigma, s, ld), 0.0);
  }
}

TEST(SemDiscrepancy, AnalyticGradientMatchesFiniteDifferences) {
  SemSpec s = two_latent_spec();
  s.free_latent_correlations = true;
  const auto draws = simulate_sem(500, 3, s, two_latent_params(), Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  std::vector<std::string> names = s.indicators;
  names.insert(names.end(), s.exogenous.begin(), s.exogenous.end());
  Eigen::VectorXd means;
  const Eigen::MatrixXd smat = detail::sample_covariance(detail::column_block(draws.data, names), means);
  const double ld = std::log(smat.determinant());
  const Eigen::MatrixXd sx = smat.bottomRightCorner(2, 2);
  const detail::SemPacking pack{s};
  auto value = [&](const Eigen::VectorXd& v) { return detail::ml_discrepancy(implied_covariance(s, pack.unpack(v), sx), smat, ld); };
  std::mt19937_64 gen(4);
  std::normal_distribution<double> norm;
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd v(pack.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 0.5 * norm(gen);
    Eigen::MatrixXd g;
    const SemParams prm = pack.unpack(v);
    detail::ml_discrepancy(implied_covariance(s, prm, sx), smat, ld, &g);
    const Eigen::VectorXd grad = pack.gradient(v, prm, g, sx);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double h = 1e-6;
      Eigen::VectorXd up = v, dn = v;
      up(i) += h;
      dn(i) -= h;
      const double fd = (value(up) - value(dn)) / (2 * h);
      EXPECT_NEAR(grad(i), fd, 1e-5 * std::max(1.0, std::fabs(fd))) << "coordinate " << i;
    }
  }
}

TEST(FitSem, SaturatedModelFitsExactly) {
  // one factor, three indicators: six moments, six parameters
  const SemSpec s = one_factor(3);
  SemParams p{Eigen::Vector3d(0.8, 0.6, 0.7), Eigen::MatrixXd::Zero(1, 0), Eigen::Vector3d(0.3, 0.5, 0.4),
              Eigen::MatrixXd::Identity(1, 1)};
  const auto draws = simulate_sem(2000, 11, s, p, Eigen::VectorXd(0), Eigen::Vector3d(1.0, 2.0, 3.0));
  const auto r = fit_sem(draws.data, s);
  ASSERT_TRUE(r.converged) << r.message;
  EXPECT_EQ(r.fit.df, 0);
  EXPECT_LT(r.discrepancy, 1e-12);
  EXPECT_LT(r.fit.chi_square, 1e-8);
  EXPECT_NEAR(r.fit.gfi, 1.0, 1e-12);
  EXPECT_EQ(r.fit.rmsea, 0.0);
  EXPECT_NEAR(r.fit.srmr, 0.0, 1e-7);
}

TEST(FitSem, RecoversTwoLatentModel) {
  const SemSpec s = two_latent_spec();
  const SemParams truth = two_latent_params();
  const auto draws = simulate_sem(50000, 2024, s, truth, Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Constant(6, 3.0));
  const auto r = fit_sem(draws.data, s);
  ASSERT_TRUE(r.converged) << r.message;
  EXPECT_LT(r.fit.rmsea, 0.01);
  EXPECT_GT(r.fit.gfi, 0.99);
  EXPECT_LE(r.fit.agfi, 1.0);
  EXPECT_EQ(r.fit.df, 36 - 6 - 3 - 6 - 3);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) {
      if (!s.loading_pattern(i, c)) {
        EXPECT_EQ(r.params.omega(i, c), 0.0);
        EXPECT_TRUE(std::isnan(r.omega_se(i, c)));
        continue;
      }
      EXPECT_LE(std::fabs(r.params.omega(i, c) - truth.omega(i, c)), 3.0 * r.omega_se(i, c)) << i << "," << c;
    }
  for (Eigen::Index c = 0; c < 2; ++c)
    for (Eigen::Index j = 0; j < 2; ++j)
      if (s.structural_pattern(c, j))
        EXPECT_LE(std::fabs(r.params.tau(c, j) - truth.tau(c, j)), 3.0 * r.tau_se(c, j));
}

TEST(FitSem, FirstLoadingOrientation) {
  SemSpec s = two_latent_spec();
  SemParams p = two_latent_params();
  p.omega.col(1) *= -1.0;  // first loading of f2 negative in the truth
  p.tau.row(1) *= -1.0;
  const auto draws = simulate_sem(5000, 8, s, p, Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  const auto r = fit_sem(draws.data, s);
  EXPECT_GT(r.params.omega(0, 0), 0.0);
  EXPECT_GT(r.params.omega(3, 1), 0.0);
  EXPECT_LT(r.params.omega(4, 1), 0.0);  // flips together with the first
}

TEST(FitSem, ReorderingIndicatorsLeavesDiscrepancyUnchanged) {
  const SemSpec s = two_latent_spec();
  const auto draws = simulate_sem(3000, 21, s, two_latent_params(), Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  const auto a = fit_sem(draws.data, s);
  SemSpec t = s;
  const std::vector<int> perm{4, 0, 5, 2, 1, 3};
  for (std::size_t i = 0; i < perm.size(); ++i) {
    t.indicators[i] = s.indicators[static_cast<std::size_t>(perm[i])];
    t.loading_pattern.row(static_cast<Eigen::Index>(i)) = s.loading_pattern.row(perm[i]);
  }
  const auto b = fit_sem(draws.data, t);
  EXPECT_NEAR(a.discrepancy, b.discrepancy, 1e-9);
  EXPECT_NEAR(a.fit.chi_square, b.fit.chi_square, 1e-5);
}

TEST(FitSem, Preconditions) {
  const SemSpec s = one_factor(3);
  SemParams p{Eigen::Vector3d(0.8, 0.6, 0.7), Eigen::MatrixXd::Zero(1, 0), Eigen::Vector3d(0.3, 0.5, 0.4),
              Eigen::MatrixXd::Identity(1, 1)};
  auto draws = simulate_sem(100, 1, s, p, Eigen::VectorXd(0), Eigen::VectorXd::Zero(3));
  draws.data.set_column("u3", draws.data.column("u1"));
  EXPECT_THROW(fit_sem(draws.data, s), DataError);
  // one indicator and one exogenous variable: three moments, three free parameters plus var(x)
  SemSpec under = one_factor(1, 1);
  under.indicators = {"u1"};
  EXPECT_THROW(fit_sem(draws.data, under), SpecError);
  SemSpec empty_latent = two_latent_spec();
  empty_latent.loading_pattern.col(1).setZero();
  EXPECT_THROW(fit_sem(draws.data, empty_latent), SpecError);
}

TEST(FactorScores, ZeroLoadingsGiveStructuralPrediction) {
  const SemSpec s = two_latent_spec();
  const auto draws = simulate_sem(200, 5, s, two_latent_params(), Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  SemResult r;
  r.params = two_latent_params();
  r.params.omega.setZero();
  r.indicator_means = Eigen::VectorXd::Zero(6);
  r.exogenous_means = Eigen::VectorXd::Zero(2);
  const Eigen::MatrixXd scores = factor_scores(draws.data, s, r);
  const Eigen::MatrixXd x = detail::column_block(draws.data, s.exogenous);
  EXPECT_EQ((scores - x * r.params.tau.transpose()).norm(), 0.0);
}

TEST(FactorScores, NoiselessLimitInvertsLoadings) {
  SemSpec s;
  s.indicators = {"u1", "u2"};
  s.latents = {"f1", "f2"};
  s.loading_pattern = Mask::Constant(2, 2, true);
  s.structural_pattern = Mask(2, 0);
  SemResult r;
  r.params.omega = (Eigen::Matrix2d() << 1.0, 0.5, -0.3, 0.8).finished();
  r.params.tau = Eigen::MatrixXd::Zero(2, 0);
  r.params.theta_diag = Eigen::Vector2d::Constant(1e-12);
  r.params.nu_cov = Eigen::Matrix2d::Identity();
  r.indicator_means = Eigen::Vector2d(0.2, -0.1);
  r.exogenous_means = Eigen::VectorXd(0);
  Dataset d;
  d.add_column("u1", {1.0, -2.0, 0.5});
  d.add_column("u2", {0.3, 0.7, -1.1});
  const Eigen::MatrixXd scores = factor_scores(d, s, r);
  const Eigen::MatrixXd u = detail::column_block(d, s.indicators);
  const Eigen::MatrixXd expect = (r.params.omega.inverse() * (u.rowwise() - r.indicator_means.transpose()).transpose()).transpose();
  EXPECT_LT((scores - expect).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FactorScores, LinearInRows) {
  const SemSpec s = two_latent_spec();
  const auto draws = simulate_sem(2000, 6, s, two_latent_params(), Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  const auto r = fit_sem(draws.data, s);
  const std::vector<std::size_t> rows{3, 7};
  Dataset pair = draws.data.select_rows(rows);
  Dataset mix = pair.select_rows(std::vector<std::size_t>{0});
  const double w = 0.3;
  for (const auto& name : pair.names()) {
    const auto& c = pair.column(name);
    mix.set_column(name, {w * c[0] + (1 - w) * c[1]});
  }
  const Eigen::MatrixXd sp = factor_scores(pair, s, r), sm = factor_scores(mix, s, r);
  EXPECT_LT((sm.row(0) - (w * sp.row(0) + (1 - w) * sp.row(1))).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FactorScores, CorrelateWithTrueLatents) {
  const SemSpec s = two_latent_spec();
  const auto draws = simulate_sem(20000, 77, s, two_latent_params(), Eigen::Vector2d(1.0, 1.0), Eigen::VectorXd::Zero(6));
  const auto r = fit_sem(draws.data, s);
  const Eigen::MatrixXd scores = factor_scores(draws.data, s, r);
  for (Eigen::Index c = 0; c < 2; ++c) EXPECT_GT(correlation(scores.col(c), draws.z.col(c)), 0.9) << c;
}

TEST(FactorScores, SingularCovarianceIsNumericalError) {
  const SemSpec s = one_factor(2);
  SemResult r;
  r.params = SemParams{Eigen::Vector2d(1.0, 1.0), Eigen::MatrixXd::Zero(1, 0), Eigen::Vector2d::Zero(),
                       Eigen::MatrixXd::Identity(1, 1)};
  r.indicator_means = Eigen::Vector2d::Zero();
  r.exogenous_means = Eigen::VectorXd(0);
  Dataset d;
  d.add_column("u1", {1.0});
  d.add_column("u2", {1.0});
  EXPECT_THROW(factor_scores(d, s, r), NumericalError);
}
