#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rtm/pipeline.hpp"

namespace {

using rtm::Json;

/// A log-likelihood given either as a number or as a saved result (joint model).
double loglik_argument(const std::string& arg) {
  double v = 0.0;
  const char* end = arg.data() + arg.size();
  const auto [ptr, ec] = std::from_chars(arg.data(), end, v);
  if (ec == std::errc() && ptr == end) return v;
  const Json doc = rtm::load_result_document(arg);
  return rtm::detail::number_from(doc.at("models").at(rtm::kJointModelKey).at("loglik"));
}

int run_estimate(const std::string& config, int workers) {
  rtm::RunConfig c = rtm::load_run_config(config);
  if (workers > 0) c.estimation.workers = workers;
  const auto out = rtm::run_pipeline(c, &std::cerr);
  if (out.exit_code != 0) {
    std::cerr << "error: " << out.error << "\n";
    return out.exit_code;
  }
  std::cout << out.report;
  return 0;
}

int run_simulate(const std::string& config, const std::string& out) {
  const rtm::RunConfig c = rtm::load_run_config(config);
  const rtm::Dataset d = rtm::simulate_from_config(c);
  rtm::write_csv(d, out);
  std::cerr << "wrote " << d.rows() << " rows to " << out << "\n";
  return 0;
}

int run_margins(const std::string& result, const std::string& variable, int equation, const std::string& kind) {
  const Json doc = rtm::load_result_document(result);
  const rtm::EstimationResult r = rtm::estimation_result_from_json(doc.at("models").at(rtm::kJointModelKey));
  const rtm::Dataset data = rtm::analysis_data_for(doc, &std::cerr);
  bool dummy = kind == "dummy";
  if (kind == "auto")
    dummy = variable != r.spec.y1 && variable != r.spec.y2 && rtm::is_binary_column(data.column(variable));
  const Eigen::VectorXd me = dummy ? rtm::marginal_effect_dummy(r, data, variable, equation)
                                   : rtm::marginal_effect_continuous(r, data, variable, equation);
  std::cout << "variable,equation,kind,level,effect\n";
  for (Eigen::Index j = 0; j < me.size(); ++j)
    std::cout << variable << "," << equation << "," << (dummy ? "dummy" : "continuous") << "," << (j + 1) << ","
              << rtm::format_double(me(j)) << "\n";
  return 0;
}

int run_compare(const std::string& full, const std::string& restricted, int df) {
  const rtm::LrTest t = rtm::lr_test(loglik_argument(full), loglik_argument(restricted), df);
  std::cout << "statistic " << rtm::format_double(t.statistic) << "\n"
            << "df " << t.df << "\n"
            << "p_value " << rtm::format_double(t.p_value) << "\n";
  return 0;
}

int run_sem(const std::string& config) {
  const rtm::RunConfig c = rtm::load_run_config(config);
  const auto out = rtm::run_sem_stage(c, &std::cerr);
  if (out.exit_code != 0) {
    std::cerr << "error: " << out.error << "\n";
    return out.exit_code;
  }
  std::cout << out.report;
  return 0;
}

int run_describe(const std::string& data) {
  std::cout << rtm::render_description(rtm::describe(rtm::load_csv(data, &std::cerr)));
  return 0;
}

int run_report(const std::string& result, const std::string& out) {
  const std::string text = rtm::render_report(rtm::load_result_document(result));
  if (out.empty())
    std::cout << text;
  else
    rtm::atomic_write(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive trivariate model estimation"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config, out, result, variable, kind = "auto", full, restricted, data;
  int workers = 0, equation = 2, df = 0;

  auto* est = app.add_subcommand("estimate", "Run the configured pipeline");
  est->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  est->add_option("--workers", workers, "Worker threads for the likelihood")->check(CLI::NonNegativeNumber);

  auto* sim = app.add_subcommand("simulate", "Write a simulated dataset as CSV");
  sim->add_option("--config", config, "Run config with a simulation block")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output CSV path")->required();

  auto* mar = app.add_subcommand("margins", "Average marginal effects from a saved result");
  mar->add_option("--result", result, "Result document")->required()->check(CLI::ExistingFile);
  mar->add_option("--variable", variable, "Variable name")->required();
  mar->add_option("--equation", equation, "Ordinal equation")->required()->check(CLI::IsMember({2, 3}));
  mar->add_option("--kind", kind, "auto, continuous or dummy")->check(CLI::IsMember({"auto", "continuous", "dummy"}));

  auto* cmp = app.add_subcommand("compare", "Likelihood-ratio test");
  cmp->add_option("--full", full, "Log-likelihood or result document of the unrestricted model")->required();
  cmp->add_option("--restricted", restricted, "Log-likelihood or result document of the restricted model")->required();
  cmp->add_option("--df", df, "Degrees of freedom")->required()->check(CLI::PositiveNumber);

  auto* sem = app.add_subcommand("sem", "Latent-variable stage only");
  sem->add_option("--config", config, "Run config with a sem block")->required()->check(CLI::ExistingFile);

  auto* des = app.add_subcommand("describe", "Column summaries of a CSV file");
  des->add_option("--data", data, "CSV path")->required()->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("report", "Render the report of a saved result");
  rep->add_option("--result", result, "Result document")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out, "Report path (standard output when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*est) return run_estimate(config, workers);
    if (*sim) return run_simulate(config, out);
    if (*mar) return run_margins(result, variable, equation, kind);
    if (*cmp) return run_compare(full, restricted, df);
    if (*sem) return run_sem(config);
    if (*des) return run_describe(data);
    if (*rep) return run_report(result, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
