// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run every criterion
//   acceptance 3 7        run the listed criteria
// The exit status is nonzero when any selected criterion fails.

#include "qbcmr/harness.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/ooura_fourier_integrals.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>

using namespace qbcmr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// Desk-scale profile shared by the risk criteria.
RunConfig desk_profile(const std::string &design, Index n, EstimatorKind est) {
  RunConfig c;
  c.design = parse_design_key(design, n);
  c.estimator = est;
  c.K = 5;
  c.replications = 100;
  c.seed = 20240601;
  c.sampler.explore_iters = 10000;
  c.sampler.burnin = 5000;
  c.sampler.draws = 10000;
  c.sampler.inducing_cap = 50;
  c.workers = std::max(1u, std::thread::hardware_concurrency());
  return c;
}

Outcome risk_cells(EstimatorKind est, const std::vector<double> &published, double tol) {
  const std::vector<std::string> designs = {"np", "s", "cns", "cw", "cck"};
  Outcome out{true, ""};
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const RunConfig c = desk_profile(designs[i] + "-uni", 1000, est);
    const RiskReport r = run_replications(c);
    const double rel = r.root_mean_mse / published[i] - 1.0;
    const bool ok = std::abs(rel) <= tol;
    out.pass = out.pass && ok;
    std::printf("    %-4s risk %.4f (mean per-replication RMSE %.4f, se %.4f) published %.3f rel %+.1f%% failures %d  %s\n",
                designs[i].c_str(), r.root_mean_mse, r.mean_risk, r.se_risk, published[i], 100.0 * rel, r.failures(),
                ok ? "ok" : "outside band");
    std::fflush(stdout);
  }
  out.detail = "risk (root of mean MSE) within +/-" + fmt(100.0 * tol, 3) + "% of the published values";
  return out;
}

Outcome criterion1() { return risk_cells(EstimatorKind::qb_npiv, {0.155, 0.232, 0.138, 0.126, 0.285}, 0.25); }

Outcome criterion2() { return risk_cells(EstimatorKind::qb_npqiv, {0.362, 0.608, 0.105, 0.176, 0.330}, 0.30); }

Outcome criterion3() {
  RunConfig c = desk_profile("s-uni", 1000, EstimatorKind::tsls);
  c.J = c.K = 3;
  const RiskReport r3 = run_replications(c);
  c.J = c.K = 6;
  const RiskReport r6 = run_replications(c);
  const bool ok = r3.root_mean_mse < 0.5 && r6.root_mean_mse > 10.0;
  return {ok, "2SLS on S: risk (root of mean MSE) J=3 " + fmt(r3.root_mean_mse) + " (< 0.5), J=6 " +
                  fmt(r6.root_mean_mse) + " (> 10); mean per-replication RMSE " + fmt(r3.mean_risk) + " and " +
                  fmt(r6.mean_risk)};
}

Outcome criterion4() {
  RunConfig c = desk_profile("cns-multi", 2000, EstimatorKind::qb_npiv);
  c.K = 15;
  c.replications = 25;
  c.sampler.inducing_cap = 100;
  const RiskReport r = run_replications(c);
  const double rel = r.mean_mse / 0.156 - 1.0;
  return {std::abs(rel) <= 0.40, "CNS multivariate, n=2000, K=15: mean squared risk " + fmt(r.mean_mse) +
                                     " vs 0.156 (rel " + fmt(100.0 * rel, 3) + "%, band +/-40%), failures " +
                                     std::to_string(r.failures())};
}

double batch_se(const VectorXd &x, Index batches = 50) {
  const Index len = x.size() / batches;
  VectorXd means(batches);
  for (Index b = 0; b < batches; ++b) means(b) = x.segment(b * len, len).mean();
  return std::sqrt((means.array() - means.mean()).square().sum() / (batches - 1) / batches);
}

Outcome criterion5() {
  const Index m = 8;
  MatrixXd grid(m, 1);
  grid.col(0) = VectorXd::LinSpaced(m, -2.0, 2.0);
  PathTarget flat(grid, grid, true, [](const VectorXd &, const VectorXd &) { return 0.0; });
  const GPHyper unit = flat.hyper(1.0, VectorXd::Ones(1));

  Rng rng(5);
  ChainState s = initial_state(flat, unit, 0.3, 0.5);
  const int steps = 20000;
  MatrixXd zs(steps, m);
  long accepted = 0;
  for (int i = 0; i < steps; ++i) {
    accepted += pcn_step(s, flat, rng) ? 1 : 0;
    zs.row(i) = s.z.transpose();
  }
  const double rate = static_cast<double>(accepted) / steps;
  double vmin = 1e9, vmax = -1e9;
  for (Index j = 0; j < m; ++j) {
    const VectorXd c = zs.col(j).array() - zs.col(j).mean();
    const double v = c.squaredNorm() / (steps - 1);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }

  ChainState h = initial_state(flat, unit, 0.3, 2.4);
  const int hsteps = 50000;
  VectorXd log_sigma(hsteps);
  for (int i = 0; i < hsteps; ++i) {
    hyper_step(h, flat, rng);
    log_sigma(i) = std::log(h.hyper.sigma);
  }
  const double mean = log_sigma.mean();
  const double se = batch_se(log_sigma);
  const bool ok = rate == 1.0 && vmin >= 0.9 && vmax <= 1.1 && std::abs(mean) <= 3.0 * se;
  return {ok, "pCN acceptance " + fmt(rate, 6) + ", z variances in [" + fmt(vmin) + ", " + fmt(vmax) +
                  "], log sigma mean " + fmt(mean) + " (3 MC se = " + fmt(3.0 * se) + ")"};
}

// Quasi log-likelihood through the normal equations, solved in quad precision.
double normal_equations_loglik(const MatrixXd &B, const VectorXd &r) {
  using Quad = boost::multiprecision::cpp_bin_float_quad;
  using QMat = Eigen::Matrix<Quad, Eigen::Dynamic, Eigen::Dynamic>;
  using QVec = Eigen::Matrix<Quad, Eigen::Dynamic, 1>;
  const QMat b = B.cast<Quad>();
  const QVec rr = r.cast<Quad>();
  const QVec coef = (b.transpose() * b).ldlt().solve(b.transpose() * rr);
  return -0.5 * static_cast<double>(Quad((b * coef).squaredNorm()));
}

Outcome criterion6() {
  Rng rng(6);
  double worst_route = 0.0, worst_idem = 0.0, worst_orth = 0.0;
  std::uniform_int_distribution<int> n_dist(10, 50), k_dist(3, 8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int inst = 0; inst < 100; ++inst) {
    const Index n = n_dist(rng);
    const Index K = std::min<Index>(k_dist(rng), n);
    MatrixXd w(n, 1);
    for (Index i = 0; i < n; ++i) w(i, 0) = u(rng);
    const FirstStage fs(build_thin_plate(w, K, rng));
    const VectorXd y = standard_normal(n, rng), h = standard_normal(n, rng);
    const double q_route = quasi_loglik(fs, ResidualModel::npiv(), y, h).loglik;
    const MatrixXd &B = fs.design().B();
    const VectorXd r = y - h;
    const double normal_route = normal_equations_loglik(B, r);
    worst_route = std::max(worst_route, std::abs(q_route - normal_route));
    const VectorXd p = fs.design().project(r);
    worst_idem = std::max(worst_idem, (fs.design().project(p) - p).cwiseAbs().maxCoeff());
    worst_orth = std::max(worst_orth, (B.transpose() * (r - p)).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_route <= 1e-10 && worst_idem <= 1e-10 && worst_orth <= 1e-10;
  return {ok, "max |Q-route - normal-equations route| " + fmt(worst_route) + ", idempotence " + fmt(worst_idem) +
                  ", orthogonality " + fmt(worst_orth) + " over 100 instances"};
}

Outcome criterion7() {
  auto density = [](double z) { return 1.0 / ((1.0 + z * z) * (1.0 + z * z)); };
  double worst = 0.0;
  for (int i = 1; i <= 20; ++i) {
    const double r = 0.15 * i;
    boost::math::quadrature::ooura_fourier_cos<double> integrator(1e-13);
    const double numeric = integrator.integrate(density, std::sqrt(3.0) * r).first / (std::numbers::pi / 4.0);
    worst = std::max(worst, std::abs(numeric / matern_correlation(r, 1.5) - 1.0));
  }
  Rng rng(7);
  MatrixXd pts(200, 2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (Index i = 0; i < pts.rows(); ++i) pts.row(i) << u(rng), u(rng);
  const MatrixXd centers = select_inducing(pts, 40, rng).centers;
  GPHyper hyper;
  hyper.lengthscale = VectorXd::Constant(2, 0.7);
  const GPGrid grid = factor_grid(centers, hyper);
  const VectorXd values = sample_path(grid, standard_normal(centers.rows(), rng), hyper);
  const double krig = (kriging_predict(grid, values, centers, hyper) - values).cwiseAbs().maxCoeff();
  const bool ok = worst <= 1e-6 && krig <= 10.0 * grid.jitter();
  return {ok, "max relative spectral error " + fmt(worst) + " at 20 radii; kriging error at inducing points " +
                  fmt(krig) + " (10 x jitter = " + fmt(10.0 * grid.jitter()) + ")"};
}

Outcome criterion8() {
  RunConfig c = desk_profile("exo-uni", 1000, EstimatorKind::qb_npiv);
  c.weighting = Weighting::estimated;
  c.gamma = 0.1;
  c.functional = FunctionalKind::mean;
  c.design.test_size = 0;
  const CoverageReport r = coverage_experiment(c);
  const bool ok = r.coverage >= 0.80 && r.coverage <= 0.98;
  return {ok, "empirical coverage " + fmt(r.coverage) + " over " + std::to_string(r.completed) +
                  " replications (band [0.80, 0.98]), mean halfwidth " + fmt(r.mean_halfwidth)};
}

Outcome criterion9() {
  bool ok = true;
  int idx = 0;
  for (const auto &d : test_support::benchmark_designs()) {
    const auto v = test_support::check_design(d, derive_seed(9, static_cast<std::uint64_t>(idx++)));
    const double corr_gap = (v.endogeneity - v.endogeneity_target).cwiseAbs().maxCoeff();
    const double stat = 1e4 * v.moment_rms * v.moment_rms;
    const double p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(5.0), stat));
    std::printf("    %-9s moment RMS %.4f (< %.4f; n*RMS^2 %.2f, chi2(5) p %.3f) min R2 %.3f (> 0.02) max corr gap "
                "%.4f (<= 0.05)  %s\n",
                design_key(d).c_str(), v.moment_rms, v.moment_threshold, stat, p_value, v.relevance_r2.minCoeff(),
                corr_gap, v.ok() ? "ok" : "FAILED");
    ok = ok && v.ok();
  }
  return {ok, "all ten designs at n=10,000"};
}

#ifndef QBCMR_CLI_PATH
#define QBCMR_CLI_PATH "qbcmr"
#endif

std::string read_file(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

Outcome criterion10() {
  const auto dir = std::filesystem::temp_directory_path() / "qbcmr_determinism";
  std::filesystem::create_directories(dir);
  const std::string base = std::string(QBCMR_CLI_PATH) +
                           " run --design cns --variant uni --estimator qb_npiv --n 500 --K 5 --reps 8"
                           " --seed 4242 --explore-iters 1000 --burnin 500 --draws 1000 --inducing-cap 40"
                           " --timing false --format csv";
  auto run = [&](const std::string &name, int workers) {
    const std::string path = (dir / name).string();
    const std::string cmd = base + " --workers " + std::to_string(workers) + " --out " + path + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return status == 0 ? read_file(path) : std::string();
  };
  const std::string a = run("a.csv", 1), b = run("b.csv", 1), c = run("c.csv", 8);
  const bool ok = !a.empty() && a == b && a == c;
  return {ok, ok ? "identical CSV across two invocations and 1 vs 8 workers"
                 : "CSV outputs differ or the CLI failed"};
}

} // namespace

int main(int argc, char **argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"NPIV risk, univariate designs", criterion1},
      {"NPQIV risk, univariate designs", criterion2},
      {"2SLS blow-up on design S", criterion3},
      {"risk spot check, CNS multivariate", criterion4},
      {"prior invariance of pCN and hyperparameter chains", criterion5},
      {"projection and likelihood oracles", criterion6},
      {"kernel spectral and kriging oracles", criterion7},
      {"credible-set coverage on an exogenous design", criterion8},
      {"DGP validity", criterion9},
      {"CLI determinism", criterion10},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) selected.push_back(i);

  int failures = 0;
  for (int id : selected) {
    if (id < 1 || id > static_cast<int>(criteria.size())) {
      std::printf("criterion %d: unknown\n", id);
      ++failures;
      continue;
    }
    const auto &[name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    std::printf("criterion %d (%s): running\n", id, name.c_str());
    std::fflush(stdout);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception &e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d: %s  %s  [%.0fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
