// Command-line front end: run, coverage and table subcommands.

#include "qbcmr/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace qbcmr;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_run_error = 1;
constexpr int exit_config_error = 2;

struct FlagSet {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option *>> options;

  void add(CLI::App *app, const std::string &flag, const std::string &key, const std::string &help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }

  // config-file settings first, explicit flags override
  std::map<std::string, std::string> merged(const std::string &config_path) const {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = read_key_values(config_path);
    for (const auto &[key, opt] : options)
      if (opt->count() > 0) kv[key] = values.at(key);
    return kv;
  }
};

void add_run_flags(CLI::App *app, FlagSet &f) {
  f.add(app, "--design", "design", "design name (np, s, cns, cw, cck, exo) or key such as np-uni");
  f.add(app, "--variant", "variant", "uni or multi");
  f.add(app, "--estimator", "estimator", "qb_npiv, qb_npqiv, tsls, ols_sieve or oracle");
  f.add(app, "--n", "n", "sample size");
  f.add(app, "--K", "k", "first-stage dimension");
  f.add(app, "--J", "j", "2SLS structural dimension");
  f.add(app, "--reps", "reps", "number of replications");
  f.add(app, "--seed", "seed", "master seed");
  f.add(app, "--out", "out", "output path (stdout when omitted)");
  f.add(app, "--format", "format", "csv or json");
  f.add(app, "--explore-iters", "explore_iters", "exploration iterations");
  f.add(app, "--burnin", "burnin", "posterior burn-in");
  f.add(app, "--draws", "draws", "posterior draws kept");
  f.add(app, "--thin", "thin", "posterior thinning");
  f.add(app, "--inducing-cap", "inducing_cap", "maximum grid size before inducing points are used");
  f.add(app, "--pilot-iters", "pilot_iters", "pilot chain length for optimal weights");
  f.add(app, "--tau", "tau", "quantile level for qb_npqiv");
  f.add(app, "--weighting", "weighting", "identity, optimal or cu");
  f.add(app, "--alpha", "alpha", "Matern smoothness (0.5, 1.5 or 2.5)");
  f.add(app, "--test-size", "test_size", "out-of-sample draws per replication");
  f.add(app, "--y-scale", "y_scale", "multiply Y (and h0) by this factor");
  f.add(app, "--workers", "workers", "worker threads");
  f.add(app, "--timing", "timing", "record runtime_s (true/false)");
}

std::string coverage_csv(const CoverageReport &r) {
  const auto &c = r.config;
  std::ostringstream s;
  s << "design,variant,estimator,n,K,replications,seed,gamma,functional,coverage,mean_halfwidth,failures,"
       "runtime_s\n";
  s << to_string(c.design.name) << ',' << to_string(c.design.variant) << ',' << c.estimator_label() << ','
    << c.design.n << ',' << c.K << ',' << c.replications << ',' << c.seed << ',' << format_double(c.gamma) << ','
    << (c.functional == FunctionalKind::mean ? "mean" : "zero") << ',' << format_double(r.coverage) << ','
    << format_double(r.mean_halfwidth) << ',' << r.failed_replications.size() << ','
    << format_double(r.runtime_s) << '\n';
  return s.str();
}

std::string coverage_json(const CoverageReport &r) {
  nlohmann::json j;
  j["design"] = to_string(r.config.design.name);
  j["variant"] = to_string(r.config.design.variant);
  j["estimator"] = r.config.estimator_label();
  j["n"] = r.config.design.n;
  j["K"] = r.config.K;
  j["replications"] = r.config.replications;
  j["seed"] = r.config.seed;
  j["gamma"] = r.config.gamma;
  j["coverage"] = r.coverage;
  j["mean_halfwidth"] = r.mean_halfwidth;
  j["failures"] = r.failed_replications.size();
  j["runtime_s"] = r.runtime_s;
  j["centers"] = r.centers;
  j["halfwidths"] = r.halfwidths;
  j["truths"] = r.truths;
  return j.dump(2) + "\n";
}

void deliver(const std::string &text, const std::string &path) {
  if (path.empty())
    std::cout << text;
  else
    write_text(path, text);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Quasi-Bayes estimation for conditional moment restriction models"};
  app.require_subcommand(1);

  FlagSet run_flags, cov_flags, table_flags;
  std::string run_config, cov_config, table_config;

  auto *run = app.add_subcommand("run", "Monte Carlo risk of one estimator on one design");
  run->add_option("--config", run_config, "key=value config file");
  add_run_flags(run, run_flags);

  auto *cov = app.add_subcommand("coverage", "Frequentist coverage of credible sets for a linear functional");
  cov->add_option("--config", cov_config, "key=value config file");
  add_run_flags(cov, cov_flags);
  cov_flags.add(cov, "--gamma", "gamma", "credible level is 1 - gamma");
  cov_flags.add(cov, "--functional", "functional", "mean or zero");

  auto *table = app.add_subcommand("table", "Replay a published results table from a config file");
  table->add_option("--config", table_config, "config file with table = 1|2|3")->required();
  table_flags.add(table, "--reps", "reps", "override replications");
  table_flags.add(table, "--out", "out", "output path (stdout when omitted)");
  table_flags.add(table, "--format", "format", "csv or json");
  table_flags.add(table, "--workers", "workers", "worker threads");
  table_flags.add(table, "--timing", "timing", "record runtime_s (true/false)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config_error;
  }

  try {
    if (*run) {
      const RunConfig cfg = config_from_key_values(run_flags.merged(run_config));
      cfg.validate();
      const RiskReport report = run_replications(cfg);
      deliver(cfg.format == "json" ? to_json_text({report}) : to_csv({report}), cfg.out);
      std::cerr << design_key(cfg.design) << ' ' << cfg.estimator_label() << ": mean risk "
                << format_double(report.mean_risk) << " (se " << format_double(report.se_risk) << "), "
                << report.failures() << " failures\n";
    } else if (*cov) {
      const RunConfig cfg = config_from_key_values(cov_flags.merged(cov_config));
      cfg.validate();
      const CoverageReport report = coverage_experiment(cfg);
      deliver(cfg.format == "json" ? coverage_json(report) : coverage_csv(report), cfg.out);
      std::cerr << "coverage " << format_double(report.coverage) << " over " << report.completed
                << " replications\n";
    } else if (*table) {
      auto kv = table_flags.merged(table_config);
      const std::string out = kv.count("out") ? kv["out"] : "";
      const std::string format = kv.count("format") ? kv["format"] : "csv";
      kv.erase("out");
      kv.erase("format");
      const auto cells = table_cells(kv);
      if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");
      std::vector<RiskReport> reports;
      for (const auto &cell : cells) {
        reports.push_back(run_replications(cell));
        std::cerr << design_key(cell.design) << ' ' << cell.estimator_label() << " K=" << cell.K
                  << ": mean risk " << format_double(reports.back().mean_risk) << '\n';
      }
      deliver(format == "json" ? to_json_text(reports) : to_csv(reports), out);
    }
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config_error;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_run_error;
  }
  return exit_ok;
}
