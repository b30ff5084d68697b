#pragma once

// Generative sampler for the recursive trivariate process and Monte Carlo cell-probability
// estimators used to cross-check the closed-form likelihood.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "rtm/dataset.hpp"
#include "rtm/errors.hpp"
#include "rtm/likelihood.hpp"
#include "rtm/model.hpp"
#include "rtm/rng.hpp"

namespace rtm {

struct Bernoulli {
  double p = 0.5;
};
struct Normal {
  double mean = 0.0;
  double sd = 1.0;
};
/// One draw per row among the levels; each level with a non-empty column name emits a 0/1 dummy.
struct Categorical {
  std::vector<double> shares;
  std::vector<std::string> level_columns;
};
/// Numeric column taking `values[k]` with probability `probs[k]` (counts such as household size).
struct Discrete {
  std::vector<double> values;
  std::vector<double> probs;
};

struct CovariateRecipe {
  std::string name;
  std::variant<Bernoulli, Normal, Categorical, Discrete> dist;
};

struct SimConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  ParameterSet true_params;
  ModelSpec spec;
  std::vector<CovariateRecipe> recipes;
};

namespace detail {

inline std::size_t draw_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

inline void check_probs(const std::string& name, const std::vector<double>& probs) {
  if (probs.empty()) throw ConfigError("recipe '" + name + "' has no levels");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("recipe '" + name + "' has a negative share");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-3) throw ConfigError("recipe '" + name + "' shares do not sum to 1");
}

inline void validate_recipe(const CovariateRecipe& r) {
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          if (!(d.p >= 0.0 && d.p <= 1.0)) throw ConfigError("recipe '" + r.name + "': bernoulli p outside [0, 1]");
        } else if constexpr (std::is_same_v<T, Normal>) {
          if (!(d.sd >= 0.0) || !std::isfinite(d.mean)) throw ConfigError("recipe '" + r.name + "': invalid normal");
        } else if constexpr (std::is_same_v<T, Categorical>) {
          check_probs(r.name, d.shares);
          if (d.level_columns.size() != d.shares.size())
            throw ConfigError("recipe '" + r.name + "': one column name (possibly empty) per level required");
        } else {
          check_probs(r.name, d.probs);
          if (d.values.size() != d.probs.size())
            throw ConfigError("recipe '" + r.name + "': values and probs differ in length");
        }
      },
      r.dist);
}

/// Names of the columns a recipe emits.
inline std::vector<std::string> recipe_columns(const CovariateRecipe& r) {
  if (const auto* c = std::get_if<Categorical>(&r.dist)) {
    std::vector<std::string> out;
    for (const auto& n : c->level_columns)
      if (!n.empty()) out.push_back(n);
    return out;
  }
  return {r.name};
}

/// Structural recursion for one row given the index parts and standard-normal errors already correlated.
struct LatentOutcomes {
  double y1, y2_star, y3_star;
};

inline int discretize(double y_star, const Eigen::VectorXd& mu) {
  int level = 1;
  for (Eigen::Index j = 0; j < mu.size(); ++j)
    if (y_star > mu(j)) level = static_cast<int>(j) + 2;
  return level;
}

inline double row_index(const EquationSpec& e, const Eigen::VectorXd& gamma,
                        const std::vector<const std::vector<double>*>& cols, std::size_t row) {
  double acc = 0.0;
  Eigen::Index k = 0;
  if (e.constant) acc += gamma(k++);
  for (const auto* c : cols) acc += gamma(k++) * (*c)[row];
  return acc;
}

}  // namespace detail

/// Draws covariates from the recipes and outcomes from the structural recursion
/// y1 = g1'w + e1, y2* = g2'w + t12*y1 + e2, y3* = g3'w + t13*y1 + t23*y2* + e3.
/// Every row uses its own substream, so the output does not depend on any work split.
inline Dataset sample_dataset(const SimConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("simulation needs n >= 1");
  cfg.spec.validate();
  cfg.true_params.validate(cfg.spec);
  for (const auto& r : cfg.recipes) detail::validate_recipe(r);

  const CounterRng base(cfg.seed);
  std::vector<std::vector<double>> columns;
  std::vector<std::string> names;
  for (const auto& r : cfg.recipes)
    for (auto& c : detail::recipe_columns(r)) {
      names.push_back(c);
      columns.emplace_back(cfg.n);
    }

  const Eigen::Matrix3d chol = cfg.true_params.covariance().llt().matrixL();
  std::vector<double> y1(cfg.n), y2(cfg.n), y3(cfg.n);

  Dataset out;
  // Covariates first (one substream per row), then outcomes from a separate family of substreams.
  for (std::size_t i = 0; i < cfg.n; ++i) {
    CounterRng rng = base.substream(2 * i);
    std::size_t col = 0;
    for (const auto& r : cfg.recipes) {
      std::visit(
          [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Bernoulli>) {
              columns[col++][i] = rng.uniform() < d.p ? 1.0 : 0.0;
            } else if constexpr (std::is_same_v<T, Normal>) {
              columns[col++][i] = d.mean + d.sd * rng.normal();
            } else if constexpr (std::is_same_v<T, Categorical>) {
              const std::size_t k = detail::draw_index(d.shares, rng.uniform());
              for (std::size_t l = 0; l < d.level_columns.size(); ++l)
                if (!d.level_columns[l].empty()) columns[col++][i] = (l == k) ? 1.0 : 0.0;
            } else {
              columns[col++][i] = d.values[detail::draw_index(d.probs, rng.uniform())];
            }
          },
          r.dist);
    }
  }
  for (std::size_t c = 0; c < names.size(); ++c) out.add_column(names[c], std::move(columns[c]));

  std::array<std::vector<const std::vector<double>*>, 3> eq_cols;
  for (int q = 0; q < 3; ++q)
    for (const auto& name : cfg.spec.eq[q].covariates) {
      if (!out.has(name)) throw ConfigError("no covariate recipe produces column '" + name + "'");
      eq_cols[q].push_back(&out.column(name));
    }

  const auto& p = cfg.true_params;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    CounterRng rng = base.substream(2 * i + 1);
    const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d eps = chol * z;
    const double v1 = detail::row_index(cfg.spec.eq[0], p.gamma1, eq_cols[0], i) + eps(0);
    const double v2 = detail::row_index(cfg.spec.eq[1], p.gamma2, eq_cols[1], i) + p.theta12 * v1 + eps(1);
    const double v3 =
        detail::row_index(cfg.spec.eq[2], p.gamma3, eq_cols[2], i) + p.theta13 * v1 + p.theta23 * v2 + eps(2);
    y1[i] = v1;
    y2[i] = detail::discretize(v2, p.mu2);
    y3[i] = detail::discretize(v3, p.mu3);
  }
  out.add_column(cfg.spec.y1, std::move(y1));
  out.add_column(cfg.spec.y2, std::move(y2));
  out.add_column(cfg.spec.y3, std::move(y3));
  return out;
}

/// Monte Carlo estimate of the (j2, j3) cell grid with binomial standard errors.
struct McCellGrid {
  Eigen::MatrixXd prob;
  Eigen::MatrixXd se;
  std::size_t draws = 0;
};

namespace detail {

template <class DrawPair>
McCellGrid bin_draws(const ParameterSet& p, std::size_t draws, DrawPair&& draw) {
  const int j2 = static_cast<int>(p.mu2.size()) + 1, j3 = static_cast<int>(p.mu3.size()) + 1;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(j2, j3);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto [s2, s3] = draw();
    counts(discretize(s2, p.mu2) - 1, discretize(s3, p.mu3) - 1) += 1.0;
  }
  McCellGrid g;
  g.draws = draws;
  g.prob = counts / static_cast<double>(draws);
  g.se = (g.prob.array() * (1.0 - g.prob.array()) / static_cast<double>(draws)).sqrt().matrix();
  return g;
}

}  // namespace detail

/// Simulates the reduced-form errors (eta2, eta3~) with
///   var(eta2) = 1 - rho12^2, cov = theta23(1 - rho12^2) + rho23 - rho12 rho13,
///   var(eta3~) = theta23^2(1 - rho12^2) + 2 theta23(rho23 - rho12 rho13) + 1 - rho13^2
/// and bins y2* = h2 + eta2, y3* = h3 + theta23 h2 + eta3~ by the thresholds.
inline McCellGrid mc_cell_probability(const ConditionalTerms& terms, const ParameterSet& p, std::size_t draws,
                                      std::uint64_t seed) {
  if (draws < 10000) throw std::invalid_argument("mc_cell_probability: at least 1e4 draws required");
  const double v2 = 1.0 - p.rho12 * p.rho12;
  const double c = p.rho23 - p.rho12 * p.rho13;
  Eigen::Matrix2d cov;
  cov << v2, p.theta23 * v2 + c,  //
      p.theta23 * v2 + c, p.theta23 * p.theta23 * v2 + 2.0 * p.theta23 * c + 1.0 - p.rho13 * p.rho13;
  Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) throw ParameterError("reduced-form error covariance is not positive definite");
  const Eigen::Matrix2d l = llt.matrixL();
  const double m3 = terms.h3 + p.theta23 * terms.h2;
  CounterRng rng(seed);
  return detail::bin_draws(p, draws, [&]() {
    const double z1 = rng.normal(), z2 = rng.normal();
    return std::pair{terms.h2 + l(0, 0) * z1, m3 + l(1, 0) * z1 + l(1, 1) * z2};
  });
}

/// Same grid from the structural form: (eta2, eta3) with the conditional covariance of
/// (eps2, eps3 | eps1), then y3* = h3 + theta23 * y2* + eta3.
inline McCellGrid mc_cell_probability_structural(const ConditionalTerms& terms, const ParameterSet& p,
                                                 std::size_t draws, std::uint64_t seed) {
  Eigen::Matrix2d cov;
  const double c = p.rho23 - p.rho12 * p.rho13;
  cov << 1.0 - p.rho12 * p.rho12, c, c, 1.0 - p.rho13 * p.rho13;
  Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) throw ParameterError("conditional error covariance is not positive definite");
  const Eigen::Matrix2d l = llt.matrixL();
  CounterRng rng(seed);
  return detail::bin_draws(p, draws, [&]() {
    const double z1 = rng.normal(), z2 = rng.normal();
    const double y2s = terms.h2 + l(0, 0) * z1;
    return std::pair{y2s, terms.h3 + p.theta23 * y2s + l(1, 0) * z1 + l(1, 1) * z2};
  });
}

/// Survey-shaped covariate marginals: socio-economic shares,
/// household structure, residential parking and decision roles, plus three latent preference
/// scores standing in for first-stage factor scores.
inline std::vector<CovariateRecipe> paper_like_recipes() {
  return {
      {"female", Bernoulli{0.5039}},
      {"race", Categorical{{0.6623, 0.1382, 0.0322, 0.0115, 0.1558}, {"white", "asian", "", "", ""}}},
      {"education", Categorical{{0.0686, 0.2882, 0.3246, 0.3186}, {"", "below_college", "college_grad", "postgrad"}}},
      {"employment", Categorical{{0.4827, 0.0638, 0.1097, 0.3438}, {"full_time", "self_employed", "", ""}}},
      {"n_children", Discrete{{0, 1, 2, 3, 4}, {0.80, 0.105, 0.07, 0.02, 0.005}}},
      {"n_teens", Discrete{{0, 1, 2}, {0.91, 0.075, 0.015}}},
      {"n_adults", Discrete{{1, 2, 3, 4, 5}, {0.28, 0.50, 0.14, 0.06, 0.02}}},
      {"income", Categorical{{0.4233, 0.4799, 0.0968}, {"low_income", "", "high_income"}}},
      {"free_parking", Bernoulli{0.9334}},
      {"parking_cost", Normal{0.502, 7.336}},
      {"decision", Categorical{{0.4617, 0.2429, 0.2954}, {"sole_decision", "", "equal_share"}}},
      {"cost_pref", Normal{1.55, 0.3}},
      {"reliability_pref", Normal{0.0, 0.4}},
      {"shared_mobility_pref", Normal{0.0, 0.6}},
  };
}

/// Equation layout of the survey-shaped preset: log VMT, AV safety concern, AV acceptance.
inline ModelSpec paper_like_spec() {
  ModelSpec s;
  s.y1 = "log_vmt";
  s.y2 = "av_safety_concern";
  s.y3 = "av_acceptance";
  s.eq[0].covariates = {"white",     "below_college", "college_grad", "postgrad",     "full_time",
                        "low_income", "free_parking", "parking_cost", "sole_decision"};
  s.eq[1].covariates = {"reliability_pref", "shared_mobility_pref", "female", "white", "postgrad", "equal_share"};
  s.eq[2].covariates = {"cost_pref", "asian",      "full_time",   "self_employed", "n_children",
                        "n_teens",   "low_income", "high_income", "free_parking",  "equal_share"};
  s.j2 = 5;
  s.j3 = 5;
  return s;
}

/// Reference point estimates for paper_like_spec(). sigma1 = 1.1 puts about a third of the
/// sample at or below 5,000 miles a year.
inline ParameterSet paper_like_params() {
  ParameterSet p;
  p.gamma1 = (Eigen::VectorXd(10) << 7.681, 0.124, 0.291, 0.445, 0.374, 0.270, -0.104, 0.473, -0.021, -0.188).finished();
  p.gamma2 = (Eigen::VectorXd(7) << 3.270, -0.251, -0.259, 0.198, -0.069, -0.096, -0.112).finished();
  p.gamma3 = (Eigen::VectorXd(11) << 5.378, -1.019, 0.239, 0.096, 0.115, 0.067, 0.132, -0.098, 0.155, -0.153, -0.150)
                 .finished();
  p.theta12 = -0.171;
  p.theta13 = -0.233;
  p.theta23 = -0.661;
  p.sigma1 = 1.1;
  p.rho12 = 0.248;
  p.rho13 = 0.352;
  p.rho23 = 0.530;
  p.mu2 = (Eigen::VectorXd(4) << 0.0, 0.488, 1.018, 1.878).finished();
  p.mu3 = (Eigen::VectorXd(4) << 0.0, 0.432, 0.931, 1.552).finished();
  return p;
}

inline SimConfig paper_like_config(std::size_t n, std::uint64_t seed) {
  return SimConfig{n, seed, paper_like_params(), paper_like_spec(), paper_like_recipes()};
}

}  // namespace rtm
