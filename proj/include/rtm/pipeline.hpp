#pragma once

// Config-driven runs: load -> transforms -> optional latent-variable stage -> estimation ->
// tests -> marginal effects -> artifacts. Failures are tagged with their stage and the partial
// document is written to the quarantine path.

#include <filesystem>
#include <optional>
#include <set>
#include <ostream>
#include <string>
#include <vector>

#include "rtm/config.hpp"
#include "rtm/estimation.hpp"
#include "rtm/inference.hpp"
#include "rtm/io.hpp"
#include "rtm/report.hpp"
#include "rtm/sem.hpp"

namespace rtm {

/// Model key used for the unrestricted fit in result documents.
inline constexpr const char* kJointModelKey = "joint";

inline std::string model_key(Restriction r) { return r == Restriction::none ? kJointModelKey : to_string(r); }

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct PipelineOutcome {
  int exit_code = 0;
  Json document;
  std::string report;
  std::string error;  // stage-tagged message when exit_code != 0
};

struct AnalysisData {
  Dataset data;
  std::size_t rows_loaded = 0;
  std::size_t rows_dropped = 0;
  std::optional<SemResult> sem;
  Eigen::MatrixXd scores;
};

namespace detail {

inline Json provenance(const RunConfig& c) {
  const Json resolved = to_json(c);
  Json doc = Json::object();
  doc["artifact"] = Json{{"name", kArtifactName}, {"version", kArtifactVersion}};
  doc["seed"] = c.estimation.seed;
  doc["config_hash"] = config_hash(resolved);
  doc["config"] = resolved;
  return doc;
}

template <class F>
auto stage(const char* name, std::string& current, F&& f) {
  current = name;
  return f();
}

}  // namespace detail

/// Load, transform, listwise-delete and (when configured) append latent scores as columns.
inline AnalysisData prepare_analysis_data(const RunConfig& c, std::ostream* log, std::string& current_stage) {
  AnalysisData out;
  Dataset raw = detail::stage("load", current_stage, [&] {
    if (c.data.path.empty()) throw ConfigError("config has no data.path");
    return load_csv(c.data.path, log);
  });
  out.rows_loaded = raw.rows();
  detail::stage("transforms", current_stage, [&] { apply_transforms(raw, c.transforms); });

  std::vector<std::string> needed;
  std::set<std::string> latent_names;
  if (c.sem) {
    needed = c.sem->spec.indicators;
    needed.insert(needed.end(), c.sem->spec.exogenous.begin(), c.sem->spec.exogenous.end());
    latent_names.insert(c.sem->spec.latents.begin(), c.sem->spec.latents.end());
  }
  if (c.model)
    for (const auto& col : c.model->used_columns())
      if (!latent_names.contains(col)) needed.push_back(col);
  {
    std::set<std::string> uniq;
    std::vector<std::string> cols;
    for (const auto& n : needed)
      if (uniq.insert(n).second) cols.push_back(n);
    current_stage = "transforms";
    for (const auto& n : cols)
      if (!raw.has(n)) throw SpecError("column '" + n + "' is referenced by the config but does not exist in the data");
    out.data = raw.drop_incomplete(cols, &out.rows_dropped);
    if (log && out.rows_dropped > 0) *log << "dropped " << out.rows_dropped << " rows with missing values\n";
    if (c.model) {
      remap_ordinal_labels(out.data, c.model->y2, c.model->j2, log);
      remap_ordinal_labels(out.data, c.model->y3, c.model->j3, log);
    }
  }

  if (c.sem) {
    detail::stage("sem", current_stage, [&] {
      for (const auto& l : c.sem->spec.latents)
        if (out.data.has(l)) throw SpecError("latent name '" + l + "' collides with an existing column");
      out.sem = fit_sem(out.data, c.sem->spec, c.sem->options);
      if (!out.sem->converged && log) *log << "warning: latent-variable fit did not converge: " << out.sem->message << "\n";
      out.scores = factor_scores(out.data, c.sem->spec, *out.sem);
      for (std::size_t l = 0; l < c.sem->spec.latents.size(); ++l) {
        const auto col = out.scores.col(static_cast<Eigen::Index>(l));
        out.data.add_column(c.sem->spec.latents[l], std::vector<double>(col.data(), col.data() + col.size()));
      }
    });
  }
  return out;
}

inline Json data_json(const RunConfig& c, const AnalysisData& a) {
  return Json{{"path", c.data.path},
              {"rows_loaded", a.rows_loaded},
              {"rows_used", a.data.rows()},
              {"rows_dropped", a.rows_dropped}};
}

namespace detail {

inline Dataset scores_dataset(const SemSpec& spec, const Eigen::MatrixXd& scores) {
  Dataset d;
  for (std::size_t l = 0; l < spec.latents.size(); ++l) {
    const auto col = scores.col(static_cast<Eigen::Index>(l));
    d.add_column(spec.latents[l], std::vector<double>(col.data(), col.data() + col.size()));
  }
  return d;
}

inline PipelineOutcome fail(Json doc, const RunConfig& c, const std::string& stage_name, const std::string& what,
                            std::ostream* log) {
  PipelineOutcome out;
  out.exit_code = 1;
  out.error = "[" + stage_name + "] " + what;
  doc["error"] = Json{{"stage", stage_name}, {"message", what}};
  out.document = doc;
  if (!c.outputs.quarantine.empty()) {
    try {
      atomic_write(c.outputs.quarantine, doc.dump(2) + "\n");
      if (log) *log << "partial results written to " << c.outputs.quarantine << "\n";
    } catch (const std::exception& e) {
      if (log) *log << "could not write quarantine file: " << e.what() << "\n";
    }
  }
  return out;
}

inline void write_artifacts(const RunConfig& c, PipelineOutcome& out) {
  out.report = render_report(out.document);
  atomic_write(c.outputs.result, out.document.dump(2) + "\n");
  if (!c.outputs.report.empty()) atomic_write(c.outputs.report, out.report);
}

}  // namespace detail

/// Full two-step run. Exit code 0 iff every requested artifact was written.
inline PipelineOutcome run_pipeline(const RunConfig& c, std::ostream* log = nullptr) {
  Json doc = detail::provenance(c);
  std::string current = "config";
  try {
    if (!c.model) throw ConfigError("config has no model block");
    if (c.outputs.result.empty()) throw ConfigError("config has no outputs.result path");
    AnalysisData a = prepare_analysis_data(c, log, current);
    doc["data"] = data_json(c, a);
    if (a.sem) {
      doc["sem"] = to_json(*a.sem);
      if (!c.sem->scores_path.empty()) write_csv(detail::scores_dataset(c.sem->spec, a.scores), c.sem->scores_path);
    }
    const ModelSpec& spec = *c.model;

    current = "estimate";
    if (log) *log << "estimating joint model on " << a.data.rows() << " rows\n";
    EstimationResult joint = estimate(a.data, spec, c.estimation);
    const EstimationResult co = estimate_restricted(a.data, spec, c.estimation, Restriction::constants_only);
    std::vector<EstimationResult> restricted;
    for (Restriction r : c.restrictions) {
      if (log) *log << "estimating restricted model: " << to_string(r) << "\n";
      restricted.push_back(estimate_restricted(a.data, spec, c.estimation, r));
    }
    joint.fit = fit_stats(joint, co.loglik);
    for (auto& r : restricted) r.fit = fit_stats(r, co.loglik);
    Json models = Json::object();
    models[kJointModelKey] = to_json(joint);
    for (const auto& r : restricted) models[model_key(r.restriction)] = to_json(r);
    EstimationResult co_fit = co;
    co_fit.fit = fit_stats(co, co.loglik);
    models["constants_only"] = to_json(co_fit);
    doc["models"] = models;
    if (!joint.converged && log) *log << "warning: joint model did not converge: " << joint.message << "\n";

    current = "compare";
    Json tests = Json::array();
    for (const auto& r : restricted)
      tests.push_back(to_json(lr_test(joint.loglik, r.loglik, joint.fit.k_free - r.fit.k_free), to_string(r.restriction)));
    doc["lr_tests"] = tests;

    current = "margins";
    Json margins = Json::array();
    if (c.marginal_effects)
      for (const auto& m : marginal_effects_table(joint, a.data)) margins.push_back(to_json(m));
    doc["marginal_effects"] = margins;

    current = "write";
    PipelineOutcome out;
    out.document = doc;
    detail::write_artifacts(c, out);
    return out;
  } catch (const std::exception& e) {
    return detail::fail(doc, c, current, e.what(), log);
  }
}

/// First step only: latent-variable fit, scores file and a result document with the SEM block.
inline PipelineOutcome run_sem_stage(const RunConfig& c, std::ostream* log = nullptr) {
  Json doc = detail::provenance(c);
  std::string current = "config";
  try {
    if (!c.sem) throw ConfigError("config has no sem block");
    if (c.outputs.result.empty()) throw ConfigError("config has no outputs.result path");
    RunConfig sem_only = c;
    sem_only.model.reset();
    AnalysisData a = prepare_analysis_data(sem_only, log, current);
    doc["data"] = data_json(c, a);
    doc["sem"] = to_json(*a.sem);
    current = "write";
    if (!c.sem->scores_path.empty()) write_csv(detail::scores_dataset(c.sem->spec, a.scores), c.sem->scores_path);
    PipelineOutcome out;
    out.document = doc;
    detail::write_artifacts(c, out);
    return out;
  } catch (const std::exception& e) {
    return detail::fail(doc, c, current, e.what(), log);
  }
}

/// Simulated dataset described by the config's simulation block.
inline Dataset simulate_from_config(const RunConfig& c) {
  if (!c.simulation) throw ConfigError("config has no simulation block");
  const auto& s = *c.simulation;
  SimConfig cfg;
  if (s.preset == "paper_like") cfg = paper_like_config(s.n, s.seed);
  cfg.n = s.n;
  cfg.seed = s.seed;
  if (c.model) cfg.spec = *c.model;
  if (s.true_params) cfg.true_params = *s.true_params;
  if (!s.recipes.empty()) cfg.recipes = s.recipes;
  return sample_dataset(cfg);
}

inline Json load_result_document(const std::filesystem::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("result '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Re-derives the analysis dataset of a saved run from its embedded config.
inline Dataset analysis_data_for(const Json& doc, std::ostream* log = nullptr) {
  const RunConfig c = run_config_from_json(doc.at("config"), std::filesystem::current_path());
  std::string stage_name;
  return prepare_analysis_data(c, log, stage_name).data;
}

}  // namespace rtm
