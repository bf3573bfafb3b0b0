#pragma once

// Monte Carlo harness: the quasi-Bayes fitting pipeline, seeded replication
// runs, coverage experiments, result emission and config parsing.

#include "qbcmr/dgp.hpp"
#include "qbcmr/sampler.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <thread>

namespace qbcmr {

struct RunError : Error {
  using Error::Error;
};

enum class EstimatorKind { qb_npiv, qb_npqiv, tsls, ols_sieve, oracle };

inline std::string to_string(EstimatorKind e) {
  switch (e) {
  case EstimatorKind::qb_npiv: return "qb_npiv";
  case EstimatorKind::qb_npqiv: return "qb_npqiv";
  case EstimatorKind::tsls: return "tsls";
  case EstimatorKind::ols_sieve: return "ols_sieve";
  case EstimatorKind::oracle: return "oracle";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string &s) {
  if (s == "qb_npiv") return EstimatorKind::qb_npiv;
  if (s == "qb_npqiv") return EstimatorKind::qb_npqiv;
  if (s == "tsls" || s == "2sls") return EstimatorKind::tsls;
  if (s == "ols_sieve" || s == "ols") return EstimatorKind::ols_sieve;
  if (s == "oracle") return EstimatorKind::oracle;
  throw ConfigError("unknown estimator '" + s + "'");
}

inline std::string to_string(Weighting w) {
  switch (w) {
  case Weighting::identity: return "identity";
  case Weighting::estimated: return "optimal";
  case Weighting::continuous_update: return "cu";
  }
  return "?";
}

inline Weighting parse_weighting(const std::string &s) {
  if (s == "identity") return Weighting::identity;
  if (s == "optimal" || s == "estimated") return Weighting::estimated;
  if (s == "cu" || s == "continuous_update") return Weighting::continuous_update;
  throw ConfigError("unknown weighting '" + s + "'");
}

enum class FunctionalKind { mean, zero };

struct RunConfig {
  DesignSpec design;
  EstimatorKind estimator = EstimatorKind::qb_npiv;
  double tau = 0.5;
  Index J = 3;
  Index K = 5;
  int replications = 100;
  std::uint64_t seed = 20240601;
  SamplerConfig sampler;
  Weighting weighting = Weighting::identity;
  double alpha = 1.5;
  double weight_lo = 0.05;
  double weight_hi = 20.0;
  double y_scale = 1.0;
  unsigned workers = 1;
  bool record_runtime = true;
  std::string out;
  std::string format = "csv";
  // coverage only
  double gamma = 0.1;
  FunctionalKind functional = FunctionalKind::mean;

  void validate() const {
    if (replications < 1) throw ConfigError("replications must be at least 1");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
    if (design.n < 2) throw ConfigError("n must be at least 2");
    if (K < 1) throw ConfigError("K must be positive");
    if (J < 2) throw ConfigError("J must be at least 2");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
    if (!(y_scale > 0.0) || !std::isfinite(y_scale)) throw ConfigError("y_scale must be positive");
    if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");
    try {
      sampler.validate();
    } catch (const Error &e) {
      throw ConfigError(e.what());
    }
  }

  std::string estimator_label() const {
    std::ostringstream s;
    s << to_string(estimator);
    if (estimator == EstimatorKind::qb_npqiv) s << "(tau=" << tau << ")";
    if (estimator == EstimatorKind::tsls) s << "(J=" << J << ")";
    if ((estimator == EstimatorKind::qb_npiv || estimator == EstimatorKind::qb_npqiv) &&
        weighting != Weighting::identity)
      s << "[" << to_string(weighting) << "]";
    return s.str();
  }
};

// ---------------------------------------------------------------- pipeline

struct QbOptions {
  ResidualModel model = ResidualModel::npiv();
  Index K = 5;
  Weighting weighting = Weighting::identity;
  SamplerConfig sampler;
  double alpha = 1.5;
  double weight_lo = 0.05;
  double weight_hi = 20.0;
};

/// A fitted quasi-Bayes posterior. Paths live on standardized scales; the
/// predictors map back to the original scale of Y.
struct QbFit {
  Standardizer x_scale;
  double y_mean = 0.0;
  double y_sd = 1.0;
  MatrixXd grid_points; // standardized
  GPGrid grid;          // factored at theta_hat
  GPHyper theta_hat;
  PosteriorDraws draws;
  VectorXd mean_path; // standardized, at the grid points
  double explore_accept_z = 0.0;
  VectorXd explore_accept_hyper;
  WeightDiagnostics weight_diagnostics;

  /// Posterior mean of h at arbitrary X (original scale).
  VectorXd predict(const MatrixXd &x) const {
    const VectorXd h = kriging_predict(grid, mean_path, x_scale.apply(x), theta_hat);
    return (y_mean + y_sd * h.array()).matrix();
  }

  /// Grid weights c such that c . path = mean over the rows of x of the
  /// kriged path.
  VectorXd average_weights(const MatrixXd &x) const {
    const MatrixXd cross = grid_cross_correlation(grid, x_scale.apply(x), theta_hat);
    const VectorXd avg = cross.colwise().mean().transpose();
    return grid.solve(avg);
  }
};

namespace detail {

inline VectorXd values_at(const GPGrid &grid, const VectorXd &path, const MatrixXd &points,
                          bool grid_is_data, const GPHyper &hyper) {
  if (grid_is_data) return path;
  return kriging_predict(grid, path, points, hyper);
}

} // namespace detail

inline QbFit fit_quasi_bayes(const Dataset &data, const QbOptions &opt, Rng &rng) {
  data.validate();
  if (data.has_lag()) throw InputError("fit_quasi_bayes: lagged models are fitted through the sampler API");
  QbFit fit;
  fit.x_scale = Standardizer::fit(data.x);
  const Standardizer w_scale = Standardizer::fit(data.w);
  const Standardizer y_scale = Standardizer::fit(data.y);
  fit.y_mean = y_scale.mean(0);
  fit.y_sd = y_scale.sd(0);

  Dataset std_data;
  std_data.x = fit.x_scale.apply(data.x);
  std_data.w = w_scale.apply(data.w);
  std_data.y = y_scale.apply(data.y).col(0);

  const BasisDesign design = build_thin_plate(std_data.w, opt.K, rng);

  const Index n = data.size();
  const bool grid_is_data = n <= opt.sampler.inducing_cap;
  fit.grid_points = grid_is_data ? std_data.x : select_inducing(std_data.x, opt.sampler.inducing_cap, rng).centers;

  const double prior_scale = 1.0 / std::sqrt(static_cast<double>(design.dimension()));
  const Weighting first_pass = opt.weighting == Weighting::continuous_update ? Weighting::continuous_update
                                                                               : Weighting::identity;
  FirstStage fs(design, first_pass, opt.weight_lo, opt.weight_hi);
  PathTarget target =
      make_quasi_target(std_data, opt.model, fs, fit.grid_points, grid_is_data, opt.alpha, prior_scale);

  GPHyper initial;
  initial.sigma = 1.0;
  initial.lengthscale = VectorXd::Ones(std_data.x.cols());
  initial.alpha = opt.alpha;
  initial.prior_scale = prior_scale;

  ExplorationResult explore = run_exploration(target, opt.sampler, initial, rng);
  fit.theta_hat = explore.theta_hat;
  fit.explore_accept_z = explore.accept_z;
  fit.explore_accept_hyper = explore.accept_hyper;
  VectorXd z0 = explore.final_state.z;
  const double beta = explore.final_state.beta;

  if (opt.weighting == Weighting::estimated) {
    SamplerConfig pilot_cfg = opt.sampler;
    pilot_cfg.burnin = opt.sampler.pilot_iters / 2;
    pilot_cfg.draws = std::max(1, opt.sampler.pilot_iters - pilot_cfg.burnin);
    pilot_cfg.thin = 1;
    const PosteriorDraws pilot = run_posterior(target, fit.theta_hat, pilot_cfg, rng, z0, beta);
    const GPGrid pilot_grid = factor_grid(fit.grid_points, fit.theta_hat);
    const VectorXd h_data = detail::values_at(pilot_grid, posterior_mean(pilot), std_data.x, grid_is_data,
                                              fit.theta_hat);
    const MatrixXd resid = opt.model.evaluate(std_data.y, h_data);
    fs = FirstStage::with_estimated_weights(design, resid, opt.weight_lo, opt.weight_hi);
    fit.weight_diagnostics = fs.diagnostics();
    target = make_quasi_target(std_data, opt.model, fs, fit.grid_points, grid_is_data, opt.alpha, prior_scale);
  }

  fit.draws = run_posterior(target, fit.theta_hat, opt.sampler, rng, z0, beta);
  fit.grid = factor_grid(fit.grid_points, fit.theta_hat);
  fit.mean_path = posterior_mean(fit.draws);
  return fit;
}

inline QbOptions qb_options(const RunConfig &cfg) {
  QbOptions opt;
  opt.model = cfg.estimator == EstimatorKind::qb_npqiv ? ResidualModel::npqiv(cfg.tau) : ResidualModel::npiv();
  opt.K = cfg.K;
  opt.weighting = cfg.weighting;
  opt.sampler = cfg.sampler;
  opt.alpha = cfg.alpha;
  opt.weight_lo = cfg.weight_lo;
  opt.weight_hi = cfg.weight_hi;
  return opt;
}

// ------------------------------------------------------------ replications

struct ReplicationResult {
  bool failed = false;
  std::string error;
  double risk = 0.0; // out-of-sample RMSE
  double accept_z = 0.0;
  double explore_accept_z = 0.0;
};

struct RiskReport {
  RunConfig config;
  std::vector<double> risks; // successful replications, in replication order
  std::vector<int> failed_replications;
  double mean_risk = 0.0;
  double se_risk = 0.0;
  double root_mean_mse = 0.0; // sqrt of the mean squared risk
  double mean_mse = 0.0;
  double runtime_s = 0.0;
  double mean_accept_z = 0.0;
  double mean_explore_accept_z = 0.0;

  int failures() const { return static_cast<int>(failed_replications.size()); }
};

inline GeneratedSample draw_replication(const RunConfig &cfg, int r, Rng &rng) {
  DesignSpec spec = cfg.design;
  GeneratedSample sample = generate(spec, rng);
  (void)r;
  if (cfg.y_scale != 1.0) sample.data.y *= cfg.y_scale;
  return sample;
}

inline VectorXd true_values(const RunConfig &cfg, const GeneratedSample &sample, const MatrixXd &x) {
  return cfg.y_scale * sample.h0(x).array();
}

inline ReplicationResult run_replication(const RunConfig &cfg, int r) {
  ReplicationResult out;
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
  try {
    const GeneratedSample sample = draw_replication(cfg, r, rng);
    const VectorXd truth = true_values(cfg, sample, sample.test_x);
    VectorXd pred;
    switch (cfg.estimator) {
    case EstimatorKind::oracle: pred = truth; break;
    case EstimatorKind::tsls: pred = tsls_fit(sample.data, cfg.J, cfg.K, rng).predict(sample.test_x); break;
    case EstimatorKind::ols_sieve: pred = ols_sieve_fit(sample.data).predict(sample.test_x); break;
    case EstimatorKind::qb_npiv:
    case EstimatorKind::qb_npqiv: {
      const QbFit fit = fit_quasi_bayes(sample.data, qb_options(cfg), rng);
      pred = fit.predict(sample.test_x);
      out.accept_z = fit.draws.accept_z;
      out.explore_accept_z = fit.explore_accept_z;
      break;
    }
    }
    if (!pred.allFinite()) throw NumericalError("non-finite predictions");
    out.risk = std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
  } catch (const ConfigError &) {
    throw;
  } catch (const Error &e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

/// Calls task(i) for i in [0, count) on `workers` threads. Results must be
/// written to per-index slots.
template <class Task> void parallel_for(int count, unsigned workers, Task &&task) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max(count, 1))));
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto loop = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(loop);
    for (auto &t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

inline void summarize(RiskReport &report) {
  const auto &r = report.risks;
  const double m = static_cast<double>(r.size());
  report.mean_risk = report.se_risk = report.mean_mse = report.root_mean_mse = 0.0;
  if (r.empty()) return;
  double sum = 0.0, sum_sq = 0.0;
  for (double v : r) {
    sum += v;
    sum_sq += v * v;
  }
  report.mean_risk = sum / m;
  report.mean_mse = sum_sq / m;
  report.root_mean_mse = std::sqrt(report.mean_mse);
  if (r.size() > 1) {
    double ss = 0.0;
    for (double v : r) ss += (v - report.mean_risk) * (v - report.mean_risk);
    report.se_risk = std::sqrt(ss / (m - 1.0)) / std::sqrt(m);
  }
}

/// Runs all replications. Replication r always uses seed derive_seed(seed, r),
/// so the report does not depend on the worker count.
inline RiskReport run_replications(const RunConfig &cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<ReplicationResult> results(static_cast<std::size_t>(cfg.replications));
  parallel_for(cfg.replications, cfg.workers,
               [&](int r) { results[static_cast<std::size_t>(r)] = run_replication(cfg, r); });

  RiskReport report;
  report.config = cfg;
  double acc = 0.0, exp_acc = 0.0;
  for (int r = 0; r < cfg.replications; ++r) {
    const auto &res = results[static_cast<std::size_t>(r)];
    if (res.failed) {
      report.failed_replications.push_back(r);
      continue;
    }
    report.risks.push_back(res.risk);
    acc += res.accept_z;
    exp_acc += res.explore_accept_z;
  }
  summarize(report);
  if (!report.risks.empty()) {
    report.mean_accept_z = acc / static_cast<double>(report.risks.size());
    report.mean_explore_accept_z = exp_acc / static_cast<double>(report.risks.size());
  }
  if (cfg.record_runtime)
    report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (report.failures() > 0.05 * cfg.replications) {
    std::ostringstream msg;
    msg << report.failures() << " of " << cfg.replications << " replications failed";
    const auto &first = results[static_cast<std::size_t>(report.failed_replications.front())];
    msg << " (first: " << first.error << ")";
    throw RunError(msg.str());
  }
  return report;
}

// ---------------------------------------------------------------- coverage

struct CoverageReport {
  RunConfig config;
  int covered = 0;
  int completed = 0;
  std::vector<int> failed_replications;
  std::vector<double> centers, halfwidths, truths;
  double coverage = 0.0;
  double mean_halfwidth = 0.0;
  double runtime_s = 0.0;
};

/// Fraction of replications whose credible set for L(h) contains L(h0).
/// The mean functional is the sample average of h over the observed X.
inline CoverageReport coverage_experiment(const RunConfig &cfg) {
  cfg.validate();
  if (cfg.estimator != EstimatorKind::qb_npiv && cfg.estimator != EstimatorKind::qb_npqiv)
    throw ConfigError("coverage: estimator must be a quasi-Bayes estimator");
  const auto start = std::chrono::steady_clock::now();
  struct Slot {
    bool failed = false;
    std::string error;
    double center = 0.0, halfwidth = 0.0, truth = 0.0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(cfg.replications));
  parallel_for(cfg.replications, cfg.workers, [&](int r) {
    Slot &slot = slots[static_cast<std::size_t>(r)];
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    try {
      const GeneratedSample sample = draw_replication(cfg, r, rng);
      const QbFit fit = fit_quasi_bayes(sample.data, qb_options(cfg), rng);
      if (cfg.functional == FunctionalKind::zero) {
        const CredibleSet cs = credible_set(fit.draws, VectorXd::Zero(fit.grid_points.rows()), cfg.gamma);
        slot.center = cs.center;
        slot.halfwidth = cs.halfwidth;
        slot.truth = 0.0;
      } else {
        const VectorXd c = fit.average_weights(sample.data.x);
        const CredibleSet cs = credible_set(fit.draws, c, cfg.gamma);
        // L is affine in the standardization of Y
        const double mass = c.sum() == 0.0 ? 0.0 : 1.0;
        slot.center = fit.y_mean * mass + fit.y_sd * cs.center;
        slot.halfwidth = fit.y_sd * cs.halfwidth;
        slot.truth = true_values(cfg, sample, sample.data.x).mean();
      }
    } catch (const ConfigError &) {
      throw;
    } catch (const Error &e) {
      slot.failed = true;
      slot.error = e.what();
    }
  });

  CoverageReport out;
  out.config = cfg;
  for (int r = 0; r < cfg.replications; ++r) {
    const Slot &s = slots[static_cast<std::size_t>(r)];
    if (s.failed) {
      out.failed_replications.push_back(r);
      continue;
    }
    ++out.completed;
    out.centers.push_back(s.center);
    out.halfwidths.push_back(s.halfwidth);
    out.truths.push_back(s.truth);
    if (std::abs(s.truth - s.center) <= s.halfwidth) ++out.covered;
    out.mean_halfwidth += s.halfwidth;
  }
  if (out.completed > 0) {
    out.coverage = static_cast<double>(out.covered) / out.completed;
    out.mean_halfwidth /= out.completed;
  }
  if (cfg.record_runtime)
    out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (static_cast<double>(out.failed_replications.size()) > 0.05 * cfg.replications)
    throw RunError("coverage: more than 5% of replications failed (first: " +
                   slots[static_cast<std::size_t>(out.failed_replications.front())].error + ")");
  return out;
}

// ---------------------------------------------------------------- emission

inline const char *csv_header() {
  return "design,variant,estimator,n,K,replications,seed,mean_risk,se_risk,failures,runtime_s";
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

inline std::string csv_row(const RiskReport &r) {
  const auto &c = r.config;
  std::ostringstream s;
  s << to_string(c.design.name) << ',' << to_string(c.design.variant) << ',' << c.estimator_label() << ','
    << c.design.n << ',' << c.K << ',' << c.replications << ',' << c.seed << ',' << format_double(r.mean_risk)
    << ',' << format_double(r.se_risk) << ',' << r.failures() << ',' << format_double(r.runtime_s);
  return s.str();
}

/// CSV for zero or more reports: header, then one row per report.
inline std::string to_csv(const std::vector<RiskReport> &reports) {
  std::string out = std::string(csv_header()) + "\n";
  for (const auto &r : reports) out += csv_row(r) + "\n";
  return out;
}

inline nlohmann::json to_json(const RiskReport &r) {
  const auto &c = r.config;
  nlohmann::json j;
  j["design"] = to_string(c.design.name);
  j["variant"] = to_string(c.design.variant);
  j["estimator"] = c.estimator_label();
  j["n"] = c.design.n;
  j["K"] = c.K;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  j["mean_risk"] = r.mean_risk;
  j["se_risk"] = r.se_risk;
  j["failures"] = r.failures();
  j["runtime_s"] = r.runtime_s;
  j["risks"] = r.risks;
  j["failed_replications"] = r.failed_replications;
  j["mean_mse"] = r.mean_mse;
  j["root_mean_mse"] = r.root_mean_mse;
  j["mean_accept_z"] = r.mean_accept_z;
  j["mean_explore_accept_z"] = r.mean_explore_accept_z;
  return j;
}

/// Inverse of to_json for the fields it writes. The estimator label is kept
/// as emitted; only the numeric results are restored bit-exactly.
inline RiskReport report_from_json(const nlohmann::json &j) {
  RiskReport r;
  r.config.design.name = parse_design_name(j.at("design").get<std::string>());
  r.config.design.variant = parse_variant(j.at("variant").get<std::string>());
  const std::string label = j.at("estimator").get<std::string>();
  r.config.estimator = parse_estimator(label.substr(0, label.find_first_of("([")));
  r.config.design.n = j.at("n").get<Index>();
  r.config.K = j.at("K").get<Index>();
  r.config.replications = j.at("replications").get<int>();
  r.config.seed = j.at("seed").get<std::uint64_t>();
  r.mean_risk = j.at("mean_risk").get<double>();
  r.se_risk = j.at("se_risk").get<double>();
  r.runtime_s = j.at("runtime_s").get<double>();
  r.risks = j.at("risks").get<std::vector<double>>();
  r.failed_replications = j.at("failed_replications").get<std::vector<int>>();
  r.mean_mse = j.at("mean_mse").get<double>();
  r.root_mean_mse = j.at("root_mean_mse").get<double>();
  r.mean_accept_z = j.at("mean_accept_z").get<double>();
  r.mean_explore_accept_z = j.at("mean_explore_accept_z").get<double>();
  return r;
}

inline std::string to_json_text(const std::vector<RiskReport> &reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

inline void write_text(const std::string &path, const std::string &text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

inline void emit_results(const std::vector<RiskReport> &reports, const std::string &format,
                         const std::string &path) {
  if (format == "csv")
    write_text(path, to_csv(reports));
  else if (format == "json")
    write_text(path, to_json_text(reports));
  else
    throw ConfigError("format must be csv or json");
}

inline void emit_results(const RiskReport &report, const std::string &format, const std::string &path) {
  emit_results(std::vector<RiskReport>{report}, format, path);
}

// ------------------------------------------------------------ config files

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

namespace detail {

template <class T> T parse_number(const std::string &key, const std::string &value) {
  try {
    std::size_t pos = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>)
      out = std::stod(value, &pos);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      out = std::stoull(value, &pos);
    else
      out = static_cast<T>(std::stoll(value, &pos));
    if (pos != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception &) {
    throw ConfigError("bad value for '" + key + "': '" + value + "'");
  }
}

inline bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + v + "'");
}

} // namespace detail

/// Applies one key=value setting; keys mirror the CLI flags (dashes or
/// underscores). Returns false for keys it does not know.
inline bool apply_setting(RunConfig &cfg, std::string key, const std::string &value) {
  std::replace(key.begin(), key.end(), '-', '_');
  using detail::parse_number;
  if (key == "design") {
    if (value.find('-') != std::string::npos) {
      const DesignSpec parsed = parse_design_key(value, cfg.design.n);
      cfg.design.name = parsed.name;
      cfg.design.variant = parsed.variant;
    } else {
      cfg.design.name = parse_design_name(value);
    }
  } else if (key == "variant") cfg.design.variant = parse_variant(value);
  else if (key == "estimator") cfg.estimator = parse_estimator(value);
  else if (key == "n") cfg.design.n = parse_number<Index>(key, value);
  else if (key == "test_size") cfg.design.test_size = parse_number<Index>(key, value);
  else if (key == "k") cfg.K = parse_number<Index>(key, value);
  else if (key == "j") cfg.J = parse_number<Index>(key, value);
  else if (key == "reps" || key == "replications") cfg.replications = parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "tau") cfg.tau = parse_number<double>(key, value);
  else if (key == "weighting") cfg.weighting = parse_weighting(value);
  else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
  else if (key == "y_scale") cfg.y_scale = parse_number<double>(key, value);
  else if (key == "workers") cfg.workers = parse_number<unsigned>(key, value);
  else if (key == "timing") cfg.record_runtime = detail::parse_bool(key, value);
  else if (key == "out") cfg.out = value;
  else if (key == "format") cfg.format = value;
  else if (key == "gamma") cfg.gamma = parse_number<double>(key, value);
  else if (key == "functional") {
    if (value == "mean") cfg.functional = FunctionalKind::mean;
    else if (value == "zero") cfg.functional = FunctionalKind::zero;
    else throw ConfigError("functional must be mean or zero");
  } else if (key == "explore_iters") cfg.sampler.explore_iters = parse_number<int>(key, value);
  else if (key == "burnin") cfg.sampler.burnin = parse_number<int>(key, value);
  else if (key == "draws") cfg.sampler.draws = parse_number<int>(key, value);
  else if (key == "thin") cfg.sampler.thin = parse_number<int>(key, value);
  else if (key == "inducing_cap" || key == "inducing") cfg.sampler.inducing_cap = parse_number<Index>(key, value);
  else if (key == "pilot_iters") cfg.sampler.pilot_iters = parse_number<int>(key, value);
  else if (key == "weight_lo") cfg.weight_lo = parse_number<double>(key, value);
  else if (key == "weight_hi") cfg.weight_hi = parse_number<double>(key, value);
  else return false;
  return true;
}

/// Flat key=value text: '#' starts a comment, blank lines are ignored.
inline std::map<std::string, std::string> parse_key_values(std::istream &in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> read_key_values(const std::string &path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  return parse_key_values(f);
}

inline RunConfig config_from_key_values(const std::map<std::string, std::string> &kv, RunConfig base = {}) {
  for (const auto &[k, v] : kv)
    if (!apply_setting(base, k, v)) throw ConfigError("unknown config key '" + k + "'");
  return base;
}

// ------------------------------------------------------------ table replay

namespace detail {

inline std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

} // namespace detail

/// Expands a table config into one RunConfig per cell. Keys: table = 1|2|3,
/// optional designs = np,s,... and ks = 5,7,10 / js = 3,4,5,6 lists; all other
/// keys are run settings shared by every cell.
inline std::vector<RunConfig> table_cells(const std::map<std::string, std::string> &kv) {
  auto settings = kv;
  const auto take = [&](const std::string &key, const std::string &fallback) {
    auto it = settings.find(key);
    if (it == settings.end()) return fallback;
    std::string v = it->second;
    settings.erase(it);
    return v;
  };
  const std::string table = take("table", "");
  const std::string designs = take("designs", "np,s,cns,cw,cck");
  const std::string ks = take("ks", table == "2" ? "5,7,10" : table == "3" ? "15" : "");
  const std::string js = take("js", "3,4,5,6");
  const std::string estimators =
      take("estimators", table == "1" ? "tsls" : table == "2" ? "qb_npiv,qb_npqiv" : "qb_npiv,qb_npqiv,ols_sieve");

  RunConfig base;
  if (table == "3") {
    base.design.variant = Variant::multivariate;
    base.design.n = 2000;
  } else if (table == "1" || table == "2") {
    base.design.variant = Variant::univariate;
    base.design.n = 1000;
  } else {
    throw ConfigError("table must be 1, 2 or 3");
  }
  base = config_from_key_values(settings, base);

  std::vector<RunConfig> cells;
  for (const auto &d : detail::split_list(designs)) {
    for (const auto &e : detail::split_list(estimators)) {
      RunConfig c = base;
      c.design.name = parse_design_name(d);
      c.estimator = parse_estimator(e);
      if (table == "1") {
        for (const auto &j : detail::split_list(js)) {
          RunConfig cj = c;
          cj.J = detail::parse_number<Index>("js", j);
          cj.K = cj.J;
          cells.push_back(cj);
        }
      } else {
        for (const auto &k : detail::split_list(ks)) {
          RunConfig ck = c;
          ck.K = detail::parse_number<Index>("ks", k);
          cells.push_back(ck);
        }
      }
    }
  }
  for (const auto &c : cells) c.validate();
  return cells;
}

} // namespace qbcmr
