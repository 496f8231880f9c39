// Command-line front end: fit / test / simulate / calibrate.
//
// Exit codes: 0 success, 1 runtime failure (breakdown, excessive failed
// replicates, I/O), 2 usage error. Failures emit a machine-readable JSON
// object on stderr. Outputs are byte-stable for a fixed seed regardless of
// the thread count; the thread count is therefore not echoed into reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cqr/cqr.hpp"

namespace {

using nlohmann::ordered_json;

struct CommonOptions {
  std::uint64_t seed = 2024;
  int threads = 0;  // 0 = auto (env CQR_THREADS or hardware)
  double grid_step = 0.01;
  double tau_lo = 0.1;
  double tau_hi = 0.6;
  double alpha = 0.05;
  int n_boot = 500;
  std::string scheme = "multiplier";
  bool no_standardize = false;
  std::string statistic = "all";
  bool paired = false;
  bool upper_tail = false;

  int resolved_threads() const {
    return threads > 0 ? threads : cqr::default_thread_count();
  }
  cqr::BootstrapScheme bootstrap_scheme() const {
    if (scheme == "multiplier") return cqr::BootstrapScheme::multiplier();
    if (scheme == "naive") return cqr::BootstrapScheme::naive();
    throw CLI::ValidationError("--scheme", "must be multiplier or naive");
  }
  cqr::StatKind stat_kind() const {
    if (statistic == "l2") return cqr::StatKind::L2;
    if (statistic == "linf") return cqr::StatKind::Linf;
    if (statistic == "bonf") return cqr::StatKind::Bonferroni;
    if (statistic == "all") return cqr::StatKind::All;
    throw CLI::ValidationError("--statistic", "must be l2, linf, bonf or all");
  }
};

struct SchemaOptions {
  std::string input;
  std::string time_col = "time";
  std::string status_col = "status";
  std::string group_col, pair_col, arm_col;
  std::vector<std::string> covariates;
  std::string delimiter = ",";
  bool no_header = false;
  std::string group_one, arm_one;

  cqr::DatasetSchema schema() const {
    cqr::DatasetSchema s;
    s.time_col = time_col;
    s.status_col = status_col;
    s.group_col = group_col;
    s.pair_col = pair_col;
    s.arm_col = arm_col;
    s.covariate_cols = covariates;
    s.delimiter = delimiter.empty() ? ',' : delimiter[0];
    s.header = !no_header;
    s.group_one = group_one;
    s.arm_one = arm_one;
    return s;
  }
};

struct DgpOptions {
  int model = 1;
  int setting = 1;
  double eta = 0.2;
  int n1 = 200, n2 = 200;
  double diff = 0.0;
  double censoring = 0.2;  // 0 disables censoring

  cqr::DgpConfig config(bool paired) const {
    cqr::DgpConfig c;
    c.model = model;
    c.setting = setting == 2 ? cqr::CovariateSetting::shifted : cqr::CovariateSetting::equal;
    c.paired = paired;
    c.eta = paired ? eta : 0.0;
    c.n1 = n1;
    c.n2 = paired ? n1 : n2;
    c.beta2(1) = c.beta1(1) + diff;
    if (censoring > 0.0) c.censor_target = censoring;
    return c;
  }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Master random seed")->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads (0 = auto)")->capture_default_str();
  cmd->add_option("--grid-step", o.grid_step, "Estimation grid step")->capture_default_str();
  cmd->add_option("--tau-lo", o.tau_lo, "Lower analysis quantile")->capture_default_str();
  cmd->add_option("--tau-hi", o.tau_hi, "Upper analysis quantile (also tau_R)")
      ->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Significance level")->capture_default_str();
  cmd->add_option("--boot", o.n_boot, "Bootstrap draw count")->capture_default_str();
  cmd->add_option("--scheme", o.scheme, "Bootstrap scheme: multiplier|naive")
      ->capture_default_str();
  cmd->add_flag("--no-standardize", o.no_standardize, "Skip covariance standardization");
  cmd->add_option("--statistic", o.statistic, "Statistic: l2|linf|bonf|all")
      ->capture_default_str();
  cmd->add_flag("--paired", o.paired, "Treat the two samples as paired");
  cmd->add_flag("--upper-tail", o.upper_tail, "One-sided upper-tail rejection");
  cmd->set_config("--config", "", "Read options from a config file");
}

void add_schema(CLI::App* cmd, SchemaOptions& s) {
  cmd->add_option("--input", s.input, "Dataset CSV path")->required();
  cmd->add_option("--time-col", s.time_col, "Time column")->capture_default_str();
  cmd->add_option("--status-col", s.status_col, "Status column (0/1)")->capture_default_str();
  cmd->add_option("--covariates", s.covariates, "Covariate columns")->delimiter(',');
  cmd->add_option("--group-col", s.group_col, "Group column (independent samples)");
  cmd->add_option("--pair-col", s.pair_col, "Pair id column (paired samples)");
  cmd->add_option("--arm-col", s.arm_col, "Arm column ordering rows within a pair");
  cmd->add_option("--delimiter", s.delimiter, "Field delimiter")->capture_default_str();
  cmd->add_flag("--no-header", s.no_header, "No header row; address columns as c0,c1,...");
  cmd->add_option("--group-one", s.group_one, "Group label taken as sample 1");
  cmd->add_option("--arm-one", s.arm_one, "Arm label taken as sample 1");
}

void add_dgp(CLI::App* cmd, DgpOptions& d) {
  cmd->add_option("--model", d.model, "Simulation model 1|2|3")->capture_default_str();
  cmd->add_option("--setting", d.setting, "Covariate setting 1|2")->capture_default_str();
  cmd->add_option("--eta", d.eta, "Paired error covariance")->capture_default_str();
  cmd->add_option("--n1", d.n1, "Sample 1 size")->capture_default_str();
  cmd->add_option("--n2", d.n2, "Sample 2 size")->capture_default_str();
  cmd->add_option("--diff", d.diff, "beta_21 - beta_11 difference")->capture_default_str();
  cmd->add_option("--censoring", d.censoring, "Target censoring rate (0 = none)")
      ->capture_default_str();
}

std::vector<std::string> coef_names(const SchemaOptions& s, int p) {
  std::vector<std::string> names{"intercept"};
  for (const auto& c : s.covariates) names.push_back(c);
  while (static_cast<int>(names.size()) < p + 1)
    names.push_back("z" + std::to_string(names.size()));
  names.resize(static_cast<std::size_t>(p) + 1);
  return names;
}

ordered_json config_json(const CommonOptions& o) {
  ordered_json j;
  j["seed"] = o.seed;
  j["grid_step"] = o.grid_step;
  j["tau_lo"] = o.tau_lo;
  j["tau_hi"] = o.tau_hi;
  j["alpha"] = o.alpha;
  j["boot"] = o.n_boot;
  j["scheme"] = o.scheme;
  j["standardize"] = !o.no_standardize;
  j["statistic"] = o.statistic;
  j["paired"] = o.paired;
  j["upper_tail"] = o.upper_tail;
  return j;
}

ordered_json outcome_json(const cqr::StatOutcome& o) {
  ordered_json j;
  j["value"] = o.value;
  j["p_value"] = o.p_value;
  j["critical_interval"] = {o.critical_lo, o.critical_hi};
  j["reject"] = o.reject;
  return j;
}

void write_or_print(const std::string& path, const std::string& content) {
  if (path.empty())
    std::cout << content;
  else
    cqr::write_file_atomic(path, content);
}

// ---------------------------------------------------------------- fit ----

int run_fit(const CommonOptions& common, const SchemaOptions& schema_opt,
            const std::string& out_path) {
  const auto grid =
      cqr::TauGrid::make(common.tau_hi, common.grid_step, common.tau_lo, common.tau_hi);

  std::vector<std::pair<std::string, cqr::CoefficientProcess>> fitted;
  int p = 0;
  if (!schema_opt.group_col.empty() || !schema_opt.pair_col.empty()) {
    const cqr::LoadedData data = cqr::load_csv(schema_opt.input, schema_opt.schema());
    p = data.input.p();
    fitted.emplace_back(data.label1, cqr::ph_fit(data.input.sample1, grid, false));
    fitted.emplace_back(data.label2, cqr::ph_fit(data.input.sample2, grid, false));
  } else {
    const cqr::SampleData sample =
        cqr::load_single_csv(schema_opt.input, schema_opt.schema());
    p = sample.p();
    fitted.emplace_back("all", cqr::ph_fit(sample, grid, false));
  }

  for (const auto& [label, proc] : fitted)
    if (!proc.covers_analysis())
      std::cerr << ordered_json{
                       {"warning", "sample '" + label + "' breaks down at tau = " +
                                       cqr::format_double(
                                           proc.defined_upto >= 1
                                               ? grid.level(proc.defined_upto)
                                               : 0.0)}}
                       .dump()
                << "\n";

  std::vector<std::pair<std::string, const cqr::CoefficientProcess*>> refs;
  for (const auto& [label, proc] : fitted) refs.emplace_back(label, &proc);
  write_or_print(out_path, cqr::coefficient_csv(refs, coef_names(schema_opt, p)));
  return 0;
}

// --------------------------------------------------------------- test ----

int run_test_cmd(const CommonOptions& common, const SchemaOptions& schema_opt,
                 const std::vector<int>& components, const std::string& report_path,
                 const std::string& bands_path) {
  cqr::DatasetSchema schema = schema_opt.schema();
  const cqr::LoadedData data = cqr::load_csv(schema_opt.input, schema);
  if (common.paired && !data.input.paired)
    throw std::invalid_argument("--paired requires a pair/arm column schema");

  const auto grid =
      cqr::TauGrid::make(common.tau_hi, common.grid_step, common.tau_lo, common.tau_hi);

  cqr::TestConfig config;
  config.statistic = common.stat_kind();
  config.alpha = common.alpha;
  config.standardize = !common.no_standardize;
  config.component_subset = components;
  config.n_boot = common.n_boot;
  config.seed = common.seed;
  config.upper_tail_only = common.upper_tail;
  config.threads = common.resolved_threads();

  const cqr::PengHuangEstimator estimator;
  cqr::DifferenceDrawOptions dopt;
  dopt.threads = config.threads;
  const auto point_and_draws = cqr::difference_draws(
      data.input, estimator, grid, common.bootstrap_scheme(), config.n_boot, config.seed,
      dopt);
  const cqr::TestResult result = cqr::run_test(data.input, estimator, grid,
                                               common.bootstrap_scheme(), config,
                                               &point_and_draws);

  const auto names = coef_names(schema_opt, data.input.p());

  ordered_json report;
  report["tool"] = "cqrtest";
  report["command"] = "test";
  ordered_json cfg = config_json(common);
  cfg["input"] = schema_opt.input;
  cfg["components"] = result.components;
  report["config"] = cfg;
  report["data"] = {{"n1", data.input.sample1.n()},
                    {"n2", data.input.sample2.n()},
                    {"p", data.input.p()},
                    {"paired", data.input.paired},
                    {"sample1", data.label1},
                    {"sample2", data.label2}};
  report["grid"] = {{"analysis_taus", grid.analysis_levels()},
                    {"defined_tau_sample1", result.defined_tau_1},
                    {"defined_tau_sample2", result.defined_tau_2}};
  ordered_json stats;
  if (result.l2) stats["l2"] = outcome_json(*result.l2);
  if (result.linf) stats["linf"] = outcome_json(*result.linf);
  if (!result.bonferroni.empty()) {
    ordered_json bonf;
    bonf["alpha_per_component"] = result.bonferroni_alpha;
    ordered_json comps = ordered_json::array();
    for (std::size_t i = 0; i < result.bonferroni.size(); ++i) {
      ordered_json c = outcome_json(result.bonferroni[i]);
      const int coef = result.components[i];
      c["coef"] = names[static_cast<std::size_t>(coef)];
      comps.push_back(std::move(c));
    }
    bonf["components"] = std::move(comps);
    bonf["reject"] = result.bonferroni_reject;
    stats["bonferroni"] = std::move(bonf);
  }
  report["results"] = std::move(stats);
  report["diagnostics"] = {{"n_draws", result.n_draws},
                           {"failed_replicates", result.failed_replicates},
                           {"n_effective", result.n_effective}};

  write_or_print(report_path, report.dump(2) + "\n");

  if (!bands_path.empty()) {
    // Bands in coefficient units: the raw (unstandardized) difference process
    // and centered bootstrap draws, rescaled by 1/sqrt(n).
    const double inv = 1.0 / std::sqrt(point_and_draws.second.n_effective);
    Eigen::MatrixXd point_u = inv * point_and_draws.first;
    cqr::BootstrapDraws draws_u = point_and_draws.second;
    for (auto& d : draws_u.draws) d *= inv;
    write_or_print(bands_path, cqr::band_csv(cqr::band_table(point_u, draws_u, grid, names)));
  }
  return 0;
}

// ----------------------------------------------------------- simulate ----

cqr::Scenario scenario_from_json(const ordered_json& j, const CommonOptions& common) {
  DgpOptions d;
  d.model = j.value("model", 1);
  d.setting = j.value("setting", 1);
  d.eta = j.value("eta", 0.2);
  d.n1 = j.value("n1", 200);
  d.n2 = j.value("n2", 200);
  d.diff = j.value("diff", 0.0);
  d.censoring = j.value("censoring", 0.2);
  const bool paired = j.value("paired", false);

  cqr::Scenario s;
  s.dgp = d.config(paired);
  s.label = j.value("label", std::string());
  s.grid_step = j.value("grid_step", common.grid_step);
  s.analysis_lo = j.value("tau_lo", 0.5);
  s.analysis_hi = j.value("tau_hi", 0.5);
  s.alpha = j.value("alpha", common.alpha);
  s.standardize = j.value("standardize", !common.no_standardize);
  s.scheme = j.value("scheme", common.scheme) == "naive" ? cqr::BootstrapScheme::naive()
                                                         : cqr::BootstrapScheme::multiplier();
  s.replications = j.value("replications", 500);
  s.pilot_draws = j.value("pilot_draws", 20);
  s.n_boot = j.value("n_boot", common.n_boot);
  if (s.label.empty())
    s.label = "model" + std::to_string(d.model) + (paired ? "_paired" : "_setting") +
              (paired ? "" : std::to_string(d.setting)) + "_n" + std::to_string(d.n2) +
              "_diff" + cqr::format_double(d.diff);
  return s;
}

std::string simulation_csv(const std::vector<cqr::Scenario>& scenarios,
                           const cqr::SimulationReport& report) {
  std::ostringstream out;
  out << "label,model,paired,setting,eta,n1,n2,diff,censoring,tau_lo,tau_hi,alpha,"
         "replications,failed,reject_bonf,se_bonf,reject_l2,se_l2,reject_linf,se_linf\n";
  for (std::size_t i = 0; i < report.scenarios.size(); ++i) {
    const auto& r = report.scenarios[i];
    const auto& s = scenarios[i];
    out << r.label << ',' << s.dgp.model << ',' << (s.dgp.paired ? 1 : 0) << ','
        << (s.dgp.setting == cqr::CovariateSetting::shifted ? 2 : 1) << ','
        << cqr::format_double(s.dgp.paired ? s.dgp.eta : 0.0) << ',' << s.dgp.n1 << ','
        << s.dgp.n2 << ',' << cqr::format_double(s.dgp.beta2(1) - s.dgp.beta1(1)) << ','
        << cqr::format_double(s.dgp.censor_target.value_or(0.0)) << ','
        << cqr::format_double(s.analysis_lo) << ',' << cqr::format_double(s.analysis_hi)
        << ',' << cqr::format_double(s.alpha) << ',' << r.replications << ','
        << r.failed_replicates << ',' << cqr::format_double(r.reject_bonf) << ','
        << cqr::format_double(r.se_bonf) << ',' << cqr::format_double(r.reject_l2) << ','
        << cqr::format_double(r.se_l2) << ',' << cqr::format_double(r.reject_linf) << ','
        << cqr::format_double(r.se_linf) << '\n';
  }
  return out.str();
}

int run_simulate(const CommonOptions& common, const DgpOptions& dgp_opt,
                 const std::string& scenarios_path, const std::string& mode, int reps,
                 int pilot, double tau_lo, double tau_hi, const std::string& out_path) {
  std::vector<cqr::Scenario> scenarios;
  std::string effective_mode = mode;
  if (!scenarios_path.empty()) {
    std::ifstream in(scenarios_path);
    if (!in) throw std::runtime_error("cannot open " + scenarios_path);
    ordered_json doc = ordered_json::parse(in);
    if (mode == "auto") effective_mode = doc.value("mode", "warp");
    for (const auto& j : doc.at("scenarios")) scenarios.push_back(scenario_from_json(j, common));
  } else {
    ordered_json j;
    j["model"] = dgp_opt.model;
    j["setting"] = dgp_opt.setting;
    j["paired"] = common.paired;
    j["eta"] = dgp_opt.eta;
    j["n1"] = dgp_opt.n1;
    j["n2"] = dgp_opt.n2;
    j["diff"] = dgp_opt.diff;
    j["censoring"] = dgp_opt.censoring;
    j["tau_lo"] = tau_lo;
    j["tau_hi"] = tau_hi;
    j["replications"] = reps;
    j["pilot_draws"] = pilot;
    scenarios.push_back(scenario_from_json(j, common));
    if (effective_mode == "auto") effective_mode = "warp";
  }

  const cqr::PengHuangEstimator estimator;
  const cqr::SimulationReport report =
      effective_mode == "full"
          ? cqr::full_bootstrap_study(scenarios, estimator, common.seed,
                                      common.resolved_threads())
          : cqr::warp_speed_study(scenarios, estimator, common.seed,
                                  common.resolved_threads());

  for (const auto& r : report.scenarios)
    std::cerr << ordered_json{{"scenario", r.label}, {"seconds", r.seconds}}.dump() << "\n";
  write_or_print(out_path, simulation_csv(scenarios, report));
  return 0;
}

// ---------------------------------------------------------- calibrate ----

int run_calibrate(const CommonOptions& common, const DgpOptions& dgp_opt, double target,
                  double precision, long draws, const std::string& out_path) {
  cqr::DgpConfig config = dgp_opt.config(common.paired);
  config.seed = common.seed;
  const auto [c1, c2] = cqr::calibrate_censoring(config, target, precision, draws);
  ordered_json j;
  j["target"] = target;
  j["precision"] = precision;
  j["draws_per_eval"] = draws;
  j["c1"] = c1;
  j["c2"] = c2;
  write_or_print(out_path, j.dump(2) + "\n");
  return 0;
}

ordered_json error_json(const std::string& type, const std::string& message) {
  return ordered_json{{"error", {{"type", type}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Comparison of censored linear quantile regression curves"};
  app.require_subcommand(1);

  CommonOptions common;
  SchemaOptions schema_opt;
  DgpOptions dgp_opt;
  std::string out_path, report_path, bands_path, scenarios_path;
  std::vector<int> components;
  std::string mode = "auto";
  int reps = 500, pilot = 20;
  double sim_tau_lo = 0.5, sim_tau_hi = 0.5;
  double target = 0.2, precision = 2e-3;
  long cal_draws = 1000000;

  CLI::App* fit = app.add_subcommand("fit", "Fit coefficient processes to a dataset");
  add_common(fit, common);
  add_schema(fit, schema_opt);
  fit->add_option("--out", out_path, "Output coefficient CSV (default stdout)");

  CLI::App* test = app.add_subcommand("test", "Run the two-sample comparison test");
  add_common(test, common);
  add_schema(test, schema_opt);
  test->add_option("--components", components, "Coefficient subset indices")->delimiter(',');
  test->add_option("--report", report_path, "Output JSON report (default stdout)");
  test->add_option("--bands", bands_path, "Output band-table CSV");

  CLI::App* sim = app.add_subcommand("simulate", "Estimate rejection probabilities");
  add_common(sim, common);
  add_dgp(sim, dgp_opt);
  sim->add_option("--scenarios", scenarios_path, "Scenario grid JSON file");
  sim->add_option("--mode", mode, "warp|full (default warp)")->capture_default_str();
  sim->add_option("--reps", reps, "Replications per scenario")->capture_default_str();
  sim->add_option("--pilot", pilot, "Warp-speed pilot draws")->capture_default_str();
  sim->add_option("--sim-tau-lo", sim_tau_lo, "Analysis lower endpoint")->capture_default_str();
  sim->add_option("--sim-tau-hi", sim_tau_hi, "Analysis upper endpoint")->capture_default_str();
  sim->add_option("--out", out_path, "Output report CSV (default stdout)");

  CLI::App* cal = app.add_subcommand("calibrate", "Calibrate censoring bounds");
  add_common(cal, common);
  add_dgp(cal, dgp_opt);
  cal->add_option("--target", target, "Target censoring fraction")->capture_default_str();
  cal->add_option("--precision", precision, "Calibration tolerance")->capture_default_str();
  cal->add_option("--draws", cal_draws, "Monte Carlo draws per evaluation")
      ->capture_default_str();
  cal->add_option("--out", out_path, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) return run_fit(common, schema_opt, out_path);
    if (test->parsed())
      return run_test_cmd(common, schema_opt, components, report_path, bands_path);
    if (sim->parsed())
      return run_simulate(common, dgp_opt, scenarios_path, mode, reps, pilot, sim_tau_lo,
                          sim_tau_hi, out_path);
    if (cal->parsed())
      return run_calibrate(common, dgp_opt, target, precision, cal_draws, out_path);
  } catch (const cqr::BreakdownError& e) {
    std::cerr << error_json("breakdown", e.what()).dump() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << error_json("invalid_input", e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << error_json("runtime", e.what()).dump() << "\n";
    return 1;
  }
  return 2;
}
