#pragma once

// Run configuration (JSON, unknown keys rejected) and JSON encodings of specs, parameters and results.

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtm/errors.hpp"
#include "rtm/estimation.hpp"
#include "rtm/inference.hpp"
#include "rtm/io.hpp"
#include "rtm/sem.hpp"
#include "rtm/simulation.hpp"

namespace rtm {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string path;
  std::string format = "csv";
};

struct SemConfig {
  SemSpec spec;
  SemOptions options;
  std::string scores_path;  // optional CSV of factor scores
};

struct OutputConfig {
  std::string report;
  std::string result;
  std::string quarantine;  // defaults to <result>.quarantine.json
};

struct SimulationSettings {
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  std::string preset;  // "paper_like" or empty
  std::vector<CovariateRecipe> recipes;
  std::optional<ParameterSet> true_params;
};

struct RunConfig {
  DataConfig data;
  std::vector<Transform> transforms;
  std::optional<SemConfig> sem;
  std::optional<ModelSpec> model;
  EstimationOptions estimation;
  std::vector<Restriction> restrictions{Restriction::independent, Restriction::nonrecursive};
  bool marginal_effects = true;
  OutputConfig outputs;
  std::optional<SimulationSettings> simulation;
};

namespace detail {

inline void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

template <class T>
T require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  return get_or<T>(obj, key, T{}, where);
}

inline Json number(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

inline double number_from(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw ConfigError("expected a number");
  return j.get<double>();
}

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline Eigen::VectorXd vector_from(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_from(j[i]);
  return v;
}

inline std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return std::filesystem::absolute(path).lexically_normal();
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// model spec and parameters

inline Json to_json(const ModelSpec& s) {
  Json eqs = Json::object();
  for (int q = 1; q <= 3; ++q)
    eqs["eq" + std::to_string(q)] = Json{{"constant", s.equation(q).constant}, {"covariates", s.equation(q).covariates}};
  return Json{{"y1", s.y1}, {"y2", s.y2}, {"y3", s.y3}, {"j2", s.j2}, {"j3", s.j3}, {"equations", eqs}};
}

inline ModelSpec model_spec_from_json(const Json& j) {
  const std::string where = "model";
  detail::check_keys(j, {"y1", "y2", "y3", "j2", "j3", "equations"}, where);
  ModelSpec s;
  s.y1 = detail::require<std::string>(j, "y1", where);
  s.y2 = detail::require<std::string>(j, "y2", where);
  s.y3 = detail::require<std::string>(j, "y3", where);
  s.j2 = detail::get_or<int>(j, "j2", 5, where);
  s.j3 = detail::get_or<int>(j, "j3", 5, where);
  const Json eqs = j.contains("equations") ? j.at("equations") : Json::object();
  detail::check_keys(eqs, {"eq1", "eq2", "eq3"}, "model.equations");
  for (int q = 1; q <= 3; ++q) {
    const std::string key = "eq" + std::to_string(q);
    if (!eqs.contains(key)) continue;
    const Json& e = eqs.at(key);
    const std::string w = "model.equations." + key;
    detail::check_keys(e, {"constant", "covariates"}, w);
    s.eq[static_cast<std::size_t>(q - 1)].constant = detail::get_or<bool>(e, "constant", true, w);
    s.eq[static_cast<std::size_t>(q - 1)].covariates = detail::get_or<std::vector<std::string>>(e, "covariates", {}, w);
  }
  s.validate();
  return s;
}

inline Json to_json(const ParameterSet& p) {
  using detail::number;
  using detail::vector_json;
  return Json{{"gamma1", vector_json(p.gamma1)}, {"gamma2", vector_json(p.gamma2)}, {"gamma3", vector_json(p.gamma3)},
              {"theta12", number(p.theta12)},    {"theta13", number(p.theta13)},    {"theta23", number(p.theta23)},
              {"sigma1", number(p.sigma1)},      {"rho12", number(p.rho12)},        {"rho13", number(p.rho13)},
              {"rho23", number(p.rho23)},        {"mu2", vector_json(p.mu2)},       {"mu3", vector_json(p.mu3)}};
}

inline ParameterSet parameter_set_from_json(const Json& j, const ModelSpec& spec) {
  const std::string where = "true_params";
  detail::check_keys(j, {"gamma1", "gamma2", "gamma3", "theta12", "theta13", "theta23", "sigma1", "rho12", "rho13",
                         "rho23", "mu2", "mu3"},
                     where);
  ParameterSet p;
  for (const char* k : {"gamma1", "gamma2", "gamma3", "mu2", "mu3", "theta12", "theta13", "theta23", "sigma1", "rho12",
                        "rho13", "rho23"})
    if (!j.contains(k)) throw ConfigError("missing key '" + std::string(k) + "' in " + where);
  p.gamma1 = detail::vector_from(j.at("gamma1"), where + ".gamma1");
  p.gamma2 = detail::vector_from(j.at("gamma2"), where + ".gamma2");
  p.gamma3 = detail::vector_from(j.at("gamma3"), where + ".gamma3");
  p.mu2 = detail::vector_from(j.at("mu2"), where + ".mu2");
  p.mu3 = detail::vector_from(j.at("mu3"), where + ".mu3");
  p.theta12 = detail::number_from(j.at("theta12"));
  p.theta13 = detail::number_from(j.at("theta13"));
  p.theta23 = detail::number_from(j.at("theta23"));
  p.sigma1 = detail::number_from(j.at("sigma1"));
  p.rho12 = detail::number_from(j.at("rho12"));
  p.rho13 = detail::number_from(j.at("rho13"));
  p.rho23 = detail::number_from(j.at("rho23"));
  p.validate(spec);
  return p;
}

// ---------------------------------------------------------------------------------------------
// simulation recipes

inline Json to_json(const CovariateRecipe& r) {
  return std::visit(
      [&](const auto& d) -> Json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) return Json{{"name", r.name}, {"type", "bernoulli"}, {"p", d.p}};
        if constexpr (std::is_same_v<T, Normal>)
          return Json{{"name", r.name}, {"type", "normal"}, {"mean", d.mean}, {"sd", d.sd}};
        if constexpr (std::is_same_v<T, Categorical>)
          return Json{{"name", r.name}, {"type", "categorical"}, {"shares", d.shares}, {"columns", d.level_columns}};
        if constexpr (std::is_same_v<T, Discrete>)
          return Json{{"name", r.name}, {"type", "discrete"}, {"values", d.values}, {"probs", d.probs}};
      },
      r.dist);
}

inline CovariateRecipe recipe_from_json(const Json& j) {
  const std::string where = "simulation.recipes";
  if (!j.is_object() || !j.contains("type")) throw ConfigError(where + " entries need a 'type'");
  const auto type = detail::require<std::string>(j, "type", where);
  CovariateRecipe r;
  if (type == "bernoulli") {
    detail::check_keys(j, {"name", "type", "p"}, where);
    r.dist = Bernoulli{detail::require<double>(j, "p", where)};
  } else if (type == "normal") {
    detail::check_keys(j, {"name", "type", "mean", "sd"}, where);
    r.dist = Normal{detail::get_or<double>(j, "mean", 0.0, where), detail::get_or<double>(j, "sd", 1.0, where)};
  } else if (type == "categorical") {
    detail::check_keys(j, {"name", "type", "shares", "columns"}, where);
    r.dist = Categorical{detail::require<std::vector<double>>(j, "shares", where),
                         detail::require<std::vector<std::string>>(j, "columns", where)};
  } else if (type == "discrete") {
    detail::check_keys(j, {"name", "type", "values", "probs"}, where);
    r.dist = Discrete{detail::require<std::vector<double>>(j, "values", where),
                      detail::require<std::vector<double>>(j, "probs", where)};
  } else {
    throw ConfigError("unknown recipe type '" + type + "'");
  }
  r.name = detail::require<std::string>(j, "name", where);
  return r;
}

// ---------------------------------------------------------------------------------------------
// SEM spec

inline Json to_json(const SemConfig& c) {
  Json loadings = Json::object(), structural = Json::object();
  const auto& s = c.spec;
  for (Eigen::Index l = 0; l < s.l(); ++l) {
    std::vector<std::string> ind, exo;
    for (Eigen::Index i = 0; i < s.r(); ++i)
      if (s.loading_pattern(i, l)) ind.push_back(s.indicators[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < s.k(); ++k)
      if (s.structural_pattern(l, k)) exo.push_back(s.exogenous[static_cast<std::size_t>(k)]);
    loadings[s.latents[static_cast<std::size_t>(l)]] = ind;
    structural[s.latents[static_cast<std::size_t>(l)]] = exo;
  }
  Json out{{"indicators", s.indicators},
           {"exogenous", s.exogenous},
           {"latents", s.latents},
           {"loadings", loadings},
           {"structural", structural},
           {"free_latent_correlations", s.free_latent_correlations},
           {"max_iterations", c.options.max_iterations},
           {"gradient_tolerance", c.options.gradient_tolerance}};
  if (!c.scores_path.empty()) out["scores"] = c.scores_path;
  return out;
}

inline SemConfig sem_config_from_json(const Json& j, const std::filesystem::path& base) {
  const std::string where = "sem";
  detail::check_keys(j, {"indicators", "exogenous", "latents", "loadings", "structural", "free_latent_correlations",
                         "max_iterations", "gradient_tolerance", "scores"},
                     where);
  SemConfig c;
  auto& s = c.spec;
  s.indicators = detail::require<std::vector<std::string>>(j, "indicators", where);
  s.exogenous = detail::get_or<std::vector<std::string>>(j, "exogenous", {}, where);
  s.latents = detail::require<std::vector<std::string>>(j, "latents", where);
  s.free_latent_correlations = detail::get_or<bool>(j, "free_latent_correlations", false, where);
  s.loading_pattern = Mask::Zero(s.r(), s.l());
  s.structural_pattern = Mask::Zero(s.l(), s.k());
  auto index_of = [](const std::vector<std::string>& v, const std::string& name, const std::string& what) {
    const auto it = std::find(v.begin(), v.end(), name);
    if (it == v.end()) throw ConfigError("unknown " + what + " '" + name + "' in sem block");
    return static_cast<Eigen::Index>(it - v.begin());
  };
  const Json loadings = j.contains("loadings") ? j.at("loadings") : Json::object();
  const Json structural = j.contains("structural") ? j.at("structural") : Json::object();
  if (!loadings.is_object() || !structural.is_object())
    throw ConfigError("sem.loadings and sem.structural map latent names to column lists");
  for (const auto& [latent, cols] : loadings.items()) {
    const auto l = index_of(s.latents, latent, "latent");
    for (const auto& c2 : cols.get<std::vector<std::string>>()) s.loading_pattern(index_of(s.indicators, c2, "indicator"), l) = true;
  }
  for (const auto& [latent, cols] : structural.items()) {
    const auto l = index_of(s.latents, latent, "latent");
    for (const auto& c2 : cols.get<std::vector<std::string>>()) s.structural_pattern(l, index_of(s.exogenous, c2, "exogenous")) = true;
  }
  c.options.max_iterations = detail::get_or<int>(j, "max_iterations", c.options.max_iterations, where);
  c.options.gradient_tolerance = detail::get_or<double>(j, "gradient_tolerance", c.options.gradient_tolerance, where);
  const auto scores = detail::get_or<std::string>(j, "scores", "", where);
  c.scores_path = scores.empty() ? "" : detail::resolve(scores, base).string();
  s.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------
// run config

/// `base` is the directory relative paths are resolved against (the config file's directory).
inline RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base) {
  detail::check_keys(j, {"data", "transforms", "sem", "model", "estimation", "outputs", "simulation"}, "config");
  RunConfig c;
  if (j.contains("data")) {
    const Json& d = j.at("data");
    detail::check_keys(d, {"path", "format"}, "data");
    c.data.path = detail::resolve(detail::require<std::string>(d, "path", "data"), base).string();
    c.data.format = detail::get_or<std::string>(d, "format", "csv", "data");
    if (c.data.format != "csv") throw ConfigError("unsupported data format '" + c.data.format + "' (only csv)");
  }
  if (j.contains("transforms")) {
    if (!j.at("transforms").is_array()) throw ConfigError("transforms must be an array");
    for (const auto& t : j.at("transforms")) {
      detail::check_keys(t, {"source", "op", "target", "reference"}, "transforms");
      Transform tr;
      tr.source = detail::require<std::string>(t, "source", "transforms");
      tr.op = transform_op_from_string(detail::require<std::string>(t, "op", "transforms"));
      tr.target = detail::get_or<std::string>(t, "target", tr.source, "transforms");
      if (t.contains("reference")) tr.reference = detail::require<double>(t, "reference", "transforms");
      if (tr.op != TransformOp::dummy && tr.reference) throw ConfigError("only dummy transforms take a reference");
      if (tr.op == TransformOp::dummy && !tr.reference)
        throw ConfigError("dummy transform of '" + tr.source + "' needs a reference level");
      if (tr.op != TransformOp::dummy && tr.target == tr.source)
        throw ConfigError("transform of '" + tr.source + "' needs a target distinct from its source");
      c.transforms.push_back(tr);
    }
  }
  if (j.contains("sem")) c.sem = sem_config_from_json(j.at("sem"), base);
  if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
  if (j.contains("estimation")) {
    const Json& e = j.at("estimation");
    const std::string w = "estimation";
    detail::check_keys(e, {"max_iterations", "gradient_tolerance", "multistart_count", "seed", "workers",
                           "compute_std_errors", "restrictions", "marginal_effects"},
                       w);
    auto& o = c.estimation;
    o.max_iterations = detail::get_or<int>(e, "max_iterations", o.max_iterations, w);
    o.gradient_tolerance = detail::get_or<double>(e, "gradient_tolerance", o.gradient_tolerance, w);
    o.multistart_count = detail::get_or<int>(e, "multistart_count", o.multistart_count, w);
    o.seed = detail::get_or<std::uint64_t>(e, "seed", o.seed, w);
    o.workers = detail::get_or<int>(e, "workers", o.workers, w);
    o.compute_std_errors = detail::get_or<bool>(e, "compute_std_errors", o.compute_std_errors, w);
    if (e.contains("restrictions")) {
      c.restrictions.clear();
      for (const auto& r : detail::require<std::vector<std::string>>(e, "restrictions", w)) {
        const Restriction res = restriction_from_string(r);
        if (res == Restriction::none || res == Restriction::constants_only)
          throw ConfigError("restrictions lists restricted variants only (independent, nonrecursive)");
        c.restrictions.push_back(res);
      }
    }
    c.marginal_effects = detail::get_or<bool>(e, "marginal_effects", true, w);
    o.validate();
  }
  if (j.contains("outputs")) {
    const Json& o = j.at("outputs");
    detail::check_keys(o, {"report", "result", "quarantine"}, "outputs");
    c.outputs.report = detail::resolve(detail::get_or<std::string>(o, "report", "", "outputs"), base).string();
    c.outputs.result = detail::resolve(detail::get_or<std::string>(o, "result", "", "outputs"), base).string();
    c.outputs.quarantine = detail::resolve(detail::get_or<std::string>(o, "quarantine", "", "outputs"), base).string();
  }
  if (c.outputs.quarantine.empty() && !c.outputs.result.empty()) c.outputs.quarantine = c.outputs.result + ".quarantine.json";
  if (j.contains("simulation")) {
    const Json& s = j.at("simulation");
    const std::string w = "simulation";
    detail::check_keys(s, {"n", "seed", "preset", "recipes", "true_params"}, w);
    SimulationSettings sim;
    sim.n = detail::require<std::size_t>(s, "n", w);
    sim.seed = detail::get_or<std::uint64_t>(s, "seed", 1, w);
    sim.preset = detail::get_or<std::string>(s, "preset", "", w);
    if (!sim.preset.empty() && sim.preset != "paper_like") throw ConfigError("unknown simulation preset '" + sim.preset + "'");
    if (s.contains("recipes")) {
      if (!s.at("recipes").is_array()) throw ConfigError("simulation.recipes must be an array");
      for (const auto& r : s.at("recipes")) sim.recipes.push_back(recipe_from_json(r));
    }
    if (s.contains("true_params")) {
      if (!c.model) throw ConfigError("simulation.true_params needs a model block");
      sim.true_params = parameter_set_from_json(s.at("true_params"), *c.model);
    }
    if (sim.preset.empty() && (!sim.true_params || sim.recipes.empty()))
      throw ConfigError("simulation needs either preset or both recipes and true_params");
    c.simulation = sim;
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

/// Resolved config as embedded in outputs. Worker count is an execution setting and is left out,
/// so results do not depend on it.
inline Json to_json(const RunConfig& c) {
  Json out = Json::object();
  if (!c.data.path.empty()) out["data"] = Json{{"path", c.data.path}, {"format", c.data.format}};
  Json tr = Json::array();
  for (const auto& t : c.transforms) {
    Json e{{"source", t.source}, {"op", to_string(t.op)}, {"target", t.target}};
    if (t.reference) e["reference"] = *t.reference;
    tr.push_back(e);
  }
  out["transforms"] = tr;
  if (c.sem) out["sem"] = to_json(*c.sem);
  if (c.model) out["model"] = to_json(*c.model);
  Json restrictions = Json::array();
  for (auto r : c.restrictions) restrictions.push_back(to_string(r));
  out["estimation"] = Json{{"max_iterations", c.estimation.max_iterations},
                           {"gradient_tolerance", c.estimation.gradient_tolerance},
                           {"multistart_count", c.estimation.multistart_count},
                           {"seed", c.estimation.seed},
                           {"compute_std_errors", c.estimation.compute_std_errors},
                           {"restrictions", restrictions},
                           {"marginal_effects", c.marginal_effects}};
  Json outputs = Json::object();
  if (!c.outputs.report.empty()) outputs["report"] = c.outputs.report;
  if (!c.outputs.result.empty()) outputs["result"] = c.outputs.result;
  if (!c.outputs.quarantine.empty()) outputs["quarantine"] = c.outputs.quarantine;
  out["outputs"] = outputs;
  if (c.simulation) {
    Json s{{"n", c.simulation->n}, {"seed", c.simulation->seed}};
    if (!c.simulation->preset.empty()) s["preset"] = c.simulation->preset;
    if (!c.simulation->recipes.empty()) {
      Json rs = Json::array();
      for (const auto& r : c.simulation->recipes) rs.push_back(to_json(r));
      s["recipes"] = rs;
    }
    if (c.simulation->true_params) s["true_params"] = to_json(*c.simulation->true_params);
    out["simulation"] = s;
  }
  return out;
}

inline std::string config_hash(const Json& resolved) { return fnv1a_hex(resolved.dump()); }

// ---------------------------------------------------------------------------------------------
// results

inline Json to_json(const FitStats& f) {
  using detail::number;
  return Json{{"loglik", number(f.loglik)},
              {"n", f.n},
              {"k_free", f.k_free},
              {"loglik_constants_only", number(f.loglik_constants_only)},
              {"rho_c_sq", number(f.rho_c_sq)},
              {"aic_per_obs", number(f.aic_per_obs)},
              {"bic_per_obs", number(f.bic_per_obs)}};
}

inline FitStats fit_stats_from_json(const Json& j) {
  FitStats f;
  f.loglik = detail::number_from(j.at("loglik"));
  f.n = j.at("n").get<std::size_t>();
  f.k_free = j.at("k_free").get<int>();
  f.loglik_constants_only = detail::number_from(j.at("loglik_constants_only"));
  f.rho_c_sq = detail::number_from(j.at("rho_c_sq"));
  f.aic_per_obs = detail::number_from(j.at("aic_per_obs"));
  f.bic_per_obs = detail::number_from(j.at("bic_per_obs"));
  return f;
}

inline Json to_json(const EstimationResult& r) {
  using detail::number;
  Json params = Json::array();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    params.push_back(Json{{"name", r.names[i]},
                          {"estimate", number(r.estimates(k))},
                          {"std_error", number(r.std_errors(k))},
                          {"t_stat", number(r.t_stats(k))},
                          {"pinned", static_cast<bool>(r.pinned[i])}});
  }
  Json starts = Json::array();
  for (double ll : r.start_logliks) starts.push_back(number(ll));
  return Json{{"restriction", to_string(r.restriction)},
              {"spec", to_json(r.spec)},
              {"converged", r.converged},
              {"message", r.message},
              {"iterations", r.iterations},
              {"gradient_norm", number(r.gradient_norm)},
              {"loglik", number(r.loglik)},
              {"best_start_index", r.best_start_index},
              {"start_logliks", starts},
              {"std_errors_available", r.std_errors_available},
              {"parameters", params},
              {"fit", to_json(r.fit)}};
}

/// Reconstructs what post-estimation needs (spec, parameters, standard errors, fit).
inline EstimationResult estimation_result_from_json(const Json& j) {
  try {
    EstimationResult r;
    r.spec = model_spec_from_json(j.at("spec"));
    r.restriction = restriction_from_string(j.at("restriction").get<std::string>());
    r.converged = j.at("converged").get<bool>();
    r.message = j.at("message").get<std::string>();
    r.iterations = j.at("iterations").get<int>();
    r.gradient_norm = detail::number_from(j.at("gradient_norm"));
    r.loglik = detail::number_from(j.at("loglik"));
    r.best_start_index = j.at("best_start_index").get<int>();
    for (const auto& v : j.at("start_logliks")) r.start_logliks.push_back(detail::number_from(v));
    r.std_errors_available = j.at("std_errors_available").get<bool>();
    const Json& ps = j.at("parameters");
    const auto n = static_cast<Eigen::Index>(ps.size());
    r.estimates.resize(n);
    r.std_errors.resize(n);
    r.t_stats.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Json& p = ps[static_cast<std::size_t>(i)];
      r.names.push_back(p.at("name").get<std::string>());
      r.estimates(i) = detail::number_from(p.at("estimate"));
      r.std_errors(i) = detail::number_from(p.at("std_error"));
      r.t_stats(i) = detail::number_from(p.at("t_stat"));
      r.pinned.push_back(p.at("pinned").get<bool>());
    }
    if (r.names != parameter_names(r.spec)) throw ConfigError("parameter names do not match the stored spec");
    r.params = ParameterSet::unflatten(r.estimates, r.spec);
    r.fit = fit_stats_from_json(j.at("fit"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed estimation result: ") + e.what());
  }
}

inline Json to_json(const MarginalEffect& m) {
  return Json{{"variable", m.variable}, {"equation", m.equation}, {"kind", to_string(m.kind)}, {"effects", detail::vector_json(m.effects)}};
}

inline Json to_json(const LrTest& t, const std::string& restricted) {
  return Json{{"restricted", restricted},
              {"statistic", detail::number(t.statistic)},
              {"df", t.df},
              {"p_value", detail::number(t.p_value)}};
}

inline Json to_json(const SemResult& r) {
  using detail::number;
  const auto& s = r.spec;
  Json loadings = Json::array(), structural = Json::array(), theta = Json::array();
  for (Eigen::Index l = 0; l < s.l(); ++l)
    for (Eigen::Index i = 0; i < s.r(); ++i)
      if (s.loading_pattern(i, l))
        loadings.push_back(Json{{"latent", s.latents[static_cast<std::size_t>(l)]},
                                {"indicator", s.indicators[static_cast<std::size_t>(i)]},
                                {"estimate", number(r.params.omega(i, l))},
                                {"std_error", number(r.omega_se(i, l))}});
  for (Eigen::Index l = 0; l < s.l(); ++l)
    for (Eigen::Index k = 0; k < s.k(); ++k)
      if (s.structural_pattern(l, k))
        structural.push_back(Json{{"latent", s.latents[static_cast<std::size_t>(l)]},
                                  {"exogenous", s.exogenous[static_cast<std::size_t>(k)]},
                                  {"estimate", number(r.params.tau(l, k))},
                                  {"std_error", number(r.tau_se(l, k))}});
  for (Eigen::Index i = 0; i < s.r(); ++i)
    theta.push_back(Json{{"indicator", s.indicators[static_cast<std::size_t>(i)]},
                         {"estimate", number(r.params.theta_diag(i))},
                         {"std_error", number(r.theta_se(i))}});
  Json nu = Json::array();
  for (Eigen::Index i = 0; i < s.l(); ++i) nu.push_back(detail::vector_json(r.params.nu_cov.row(i).transpose()));
  return Json{{"latents", s.latents},
              {"indicators", s.indicators},
              {"exogenous", s.exogenous},
              {"loadings", loadings},
              {"structural", structural},
              {"error_variances", theta},
              {"latent_covariance", nu},
              {"discrepancy", number(r.discrepancy)},
              {"n", r.n},
              {"converged", r.converged},
              {"iterations", r.iterations},
              {"message", r.message},
              {"fit", Json{{"chi_square", number(r.fit.chi_square)},
                           {"df", r.fit.df},
                           {"gfi", number(r.fit.gfi)},
                           {"agfi", number(r.fit.agfi)},
                           {"srmr", number(r.fit.srmr)},
                           {"rmsea", number(r.fit.rmsea)}}}};
}

}  // namespace rtm
