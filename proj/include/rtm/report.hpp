#pragma once

// Plain-text report rendered from a result document, so a saved result re-renders identically.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rtm/config.hpp"

namespace rtm {

namespace detail {

inline std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline double num(const Json& j) { return number_from(j); }

inline std::string pad(const std::string& s, std::size_t w, bool left = true) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

struct CoefCell {
  double coef = std::numeric_limits<double>::quiet_NaN();
  double t = std::numeric_limits<double>::quiet_NaN();
  bool present = false;
};

inline std::string cells(const std::vector<CoefCell>& row) {
  std::string out;
  for (const auto& c : row) {
    if (!c.present) {
      out += pad("", 10, false) + pad("", 9, false);
      continue;
    }
    out += pad(fmt("%.3f", c.coef), 10, false) + pad(fmt("%.2f", c.t), 9, false);
  }
  return out;
}

/// Coefficient table of one estimated model, grouped by regressor type.
inline std::string render_model(const Json& m, const std::set<std::string>& latents) {
  const ModelSpec spec = model_spec_from_json(m.at("spec"));
  std::map<std::string, CoefCell> by_name;
  for (const auto& p : m.at("parameters"))
    by_name[p.at("name").get<std::string>()] = CoefCell{num(p.at("estimate")), num(p.at("t_stat")), true};
  auto cell = [&](const std::string& name) {
    auto it = by_name.find(name);
    return it == by_name.end() ? CoefCell{} : it->second;
  };
  std::vector<std::string> labels{"rho23 (" + spec.y2 + ", " + spec.y3 + ")", "rho13 (" + spec.y1 + ", " + spec.y3 + ")",
                                  "rho12 (" + spec.y1 + ", " + spec.y2 + ")", spec.y1, spec.y2};
  for (int q = 1; q <= 3; ++q)
    for (const auto& c : spec.equation(q).covariates) labels.push_back(c);
  std::size_t lw = 30;
  for (const auto& l : labels) lw = std::max(lw, l.size() + 4);
  std::string out;
  out += pad("", lw);
  for (const auto* y : {&spec.y1, &spec.y2, &spec.y3}) out += pad(*y, 19, false);
  out += "\n" + pad("", lw);
  for (int q = 0; q < 3; ++q) out += pad("coef.", 10, false) + pad("t-stat", 9, false);
  out += "\n";
  auto line = [&](const std::string& label, const std::vector<CoefCell>& row) {
    out += pad("  " + label, lw) + cells(row) + "\n";
  };
  auto eq_cell = [&](int q, const std::string& col) { return cell("eq" + std::to_string(q) + ":" + col); };

  out += "Endogenous variables\n";
  line(spec.y1, {CoefCell{}, cell("theta12"), cell("theta13")});
  line(spec.y2, {CoefCell{}, CoefCell{}, cell("theta23")});

  std::vector<std::string> order;
  std::set<std::string> seen;
  for (int q = 1; q <= 3; ++q)
    for (const auto& c : spec.equation(q).covariates)
      if (seen.insert(c).second) order.push_back(c);
  for (const bool latent_group : {true, false}) {
    bool header = false;
    for (const auto& c : order) {
      if (latents.contains(c) != latent_group) continue;
      if (!header) out += latent_group ? "Latent variables\n" : "Exogenous variables\n";
      header = true;
      line(c, {eq_cell(1, c), eq_cell(2, c), eq_cell(3, c)});
    }
  }
  line("Constant", {eq_cell(1, "constant"), eq_cell(2, "constant"), eq_cell(3, "constant")});
  out += "Error scale and correlations\n";
  line("sigma1", {cell("sigma1"), CoefCell{}, CoefCell{}});
  line("rho12 (" + spec.y1 + ", " + spec.y2 + ")", {cell("rho12"), CoefCell{}, CoefCell{}});
  line("rho13 (" + spec.y1 + ", " + spec.y3 + ")", {cell("rho13"), CoefCell{}, CoefCell{}});
  line("rho23 (" + spec.y2 + ", " + spec.y3 + ")", {cell("rho23"), CoefCell{}, CoefCell{}});
  out += "Thresholds (first fixed at 0)\n";
  for (int j = 2; j <= std::max(spec.j2, spec.j3) - 1; ++j) {
    const std::string idx = "[" + std::to_string(j) + "]";
    line("mu" + idx, {CoefCell{}, j <= spec.j2 - 1 ? cell("mu2" + idx) : CoefCell{},
                      j <= spec.j3 - 1 ? cell("mu3" + idx) : CoefCell{}});
  }
  const Json& f = m.at("fit");
  out += "Notes: N = " + std::to_string(f.at("n").get<std::size_t>()) + ", LL = " + fmt("%.3f", num(f.at("loglik"))) +
         ", LL(constants only) = " + fmt("%.3f", num(f.at("loglik_constants_only"))) +
         ", rho_c^2 = " + fmt("%.3f", num(f.at("rho_c_sq"))) + ", AIC = " + fmt("%.3f", num(f.at("aic_per_obs"))) +
         ", BIC = " + fmt("%.3f", num(f.at("bic_per_obs"))) + " (per observation), free parameters = " +
         std::to_string(f.at("k_free").get<int>()) + "\n";
  out += "Optimizer: " + std::string(m.at("converged").get<bool>() ? "converged" : "NOT converged") + " after " +
         std::to_string(m.at("iterations").get<int>()) + " iterations (" + m.at("message").get<std::string>() + ")";
  if (!m.at("std_errors_available").get<bool>()) out += "; standard errors unavailable";
  out += "\n";
  return out;
}

inline std::string render_sem(const Json& s) {
  std::string out = "Latent-variable model\n";
  const auto latents = s.at("latents").get<std::vector<std::string>>();
  out += pad("", 30);
  for (const auto& l : latents) out += pad(l, 19, false);
  out += "\n";
  auto table = [&](const char* title, const Json& entries, const char* key) {
    out += title;
    out += "\n";
    std::vector<std::string> rows;
    std::set<std::string> seen;
    for (const auto& e : entries)
      if (seen.insert(e.at(key).get<std::string>()).second) rows.push_back(e.at(key).get<std::string>());
    for (const auto& r : rows) {
      std::vector<CoefCell> row(latents.size());
      for (const auto& e : entries) {
        if (e.at(key).get<std::string>() != r) continue;
        const auto l = std::find(latents.begin(), latents.end(), e.at("latent").get<std::string>()) - latents.begin();
        const double est = num(e.at("estimate")), se = num(e.at("std_error"));
        row[static_cast<std::size_t>(l)] = CoefCell{est, est / se, true};
      }
      out += pad("  " + r, 30) + cells(row) + "\n";
    }
  };
  table("Measurement equations", s.at("loadings"), "indicator");
  table("Structural equations", s.at("structural"), "exogenous");
  const Json& f = s.at("fit");
  out += "Notes: N = " + std::to_string(s.at("n").get<std::size_t>()) + ", chi-square = " +
         fmt("%.3f", num(f.at("chi_square"))) + " (df = " + std::to_string(f.at("df").get<int>()) + "), GFI = " +
         fmt("%.3f", num(f.at("gfi"))) + ", AGFI = " + fmt("%.3f", num(f.at("agfi"))) + ", SRMR = " +
         fmt("%.3f", num(f.at("srmr"))) + ", RMSEA = " + fmt("%.3f", num(f.at("rmsea"))) + "\n";
  out += "Optimizer: " + std::string(s.at("converged").get<bool>() ? "converged" : "NOT converged") + " after " +
         std::to_string(s.at("iterations").get<int>()) + " iterations\n";
  return out;
}

}  // namespace detail

inline std::string render_report(const Json& doc) {
  using detail::fmt;
  using detail::num;
  using detail::pad;
  std::string out;
  const std::string rule(87, '=');
  out += rule + "\n";
  out += std::string(kArtifactName) + " " + doc.at("artifact").at("version").get<std::string>() +
         " | seed " + std::to_string(doc.at("seed").get<std::uint64_t>()) + " | config " +
         doc.at("config_hash").get<std::string>() + "\n";
  if (doc.contains("data")) {
    const Json& d = doc.at("data");
    out += "data: " + d.at("path").get<std::string>() + " (" + std::to_string(d.at("rows_used").get<std::size_t>()) +
           " rows used, " + std::to_string(d.at("rows_dropped").get<std::size_t>()) + " dropped for missing values)\n";
  }
  out += rule + "\n";
  std::set<std::string> latents;
  if (doc.contains("sem")) {
    out += "\n" + detail::render_sem(doc.at("sem"));
    for (const auto& l : doc.at("sem").at("latents")) latents.insert(l.get<std::string>());
  }
  if (doc.contains("models")) {
    const Json& models = doc.at("models");
    if (models.contains("joint")) out += "\nRecursive trivariate model (joint)\n" + detail::render_model(models.at("joint"), latents);
    for (const auto& [name, m] : models.items()) {
      if (name == "joint" || name == "constants_only") continue;
      out += "\nRestricted model: " + name + "\n" + detail::render_model(m, latents);
    }
    if (models.contains("constants_only"))
      out += "\nConstants-only model: LL = " + fmt("%.3f", num(models.at("constants_only").at("loglik"))) + "\n";
  }
  if (doc.contains("lr_tests") && !doc.at("lr_tests").empty()) {
    out += "\nLikelihood-ratio tests against the joint model\n";
    for (const auto& t : doc.at("lr_tests"))
      out += "  " + pad(t.at("restricted").get<std::string>(), 16) + " statistic = " + fmt("%.3f", num(t.at("statistic"))) +
             ", df = " + std::to_string(t.at("df").get<int>()) + ", p = " + fmt("%.4g", num(t.at("p_value"))) + "\n";
  }
  if (doc.contains("marginal_effects") && !doc.at("marginal_effects").empty()) {
    out += "\nAverage marginal effects on level probabilities (joint model)\n";
    std::size_t levels = 0;
    for (const auto& m : doc.at("marginal_effects")) levels = std::max(levels, m.at("effects").size());
    out += pad("  variable", 30) + pad("eq", 4, false) + pad("kind", 12, false);
    for (std::size_t j = 1; j <= levels; ++j) out += pad("level " + std::to_string(j), 10, false);
    out += "\n";
    for (const auto& m : doc.at("marginal_effects")) {
      out += pad("  " + m.at("variable").get<std::string>(), 30) + pad(std::to_string(m.at("equation").get<int>()), 4, false) +
             pad(m.at("kind").get<std::string>(), 12, false);
      for (const auto& e : m.at("effects")) out += pad(fmt("%.4f", num(e)), 10, false);
      out += "\n";
    }
  }
  return out;
}

}  // namespace rtm
