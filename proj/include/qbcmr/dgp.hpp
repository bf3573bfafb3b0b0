#pragma once

// Benchmark NPIV designs with structural-function oracles, and the 2SLS and
// OLS-sieve baselines.

#include "qbcmr/basis.hpp"
#include "qbcmr/residuals.hpp"

#include <array>
#include <functional>
#include <numbers>
#include <string>

namespace qbcmr {

enum class DesignName { np, s, cns, cw, cck, exo };
enum class Variant { univariate, multivariate };

struct DesignSpec {
  DesignName name = DesignName::np;
  Variant variant = Variant::univariate;
  Index n = 1000;
  Index test_size = 10000;

  Index dim() const { return variant == Variant::univariate ? 1 : 5; }
  Index instrument_dim() const {
    if (name == DesignName::exo) return dim();
    return variant == Variant::univariate ? 1 : 2;
  }
};

inline std::string to_string(DesignName name) {
  switch (name) {
  case DesignName::np: return "np";
  case DesignName::s: return "s";
  case DesignName::cns: return "cns";
  case DesignName::cw: return "cw";
  case DesignName::cck: return "cck";
  case DesignName::exo: return "exo";
  }
  return "?";
}

inline std::string to_string(Variant v) { return v == Variant::univariate ? "uni" : "multi"; }

inline DesignName parse_design_name(const std::string &s) {
  if (s == "np") return DesignName::np;
  if (s == "s") return DesignName::s;
  if (s == "cns") return DesignName::cns;
  if (s == "cw") return DesignName::cw;
  if (s == "cck") return DesignName::cck;
  if (s == "exo") return DesignName::exo;
  throw ConfigError("unknown design '" + s + "'");
}

inline Variant parse_variant(const std::string &s) {
  if (s == "uni" || s == "univariate") return Variant::univariate;
  if (s == "multi" || s == "multivariate") return Variant::multivariate;
  throw ConfigError("unknown variant '" + s + "'");
}

/// "np-uni", "cck-multi", ...
inline DesignSpec parse_design_key(const std::string &key, Index n = 1000) {
  const auto dash = key.find('-');
  if (dash == std::string::npos) throw ConfigError("design key must look like 'np-uni'");
  DesignSpec spec;
  spec.name = parse_design_name(key.substr(0, dash));
  spec.variant = parse_variant(key.substr(dash + 1));
  spec.n = n;
  return spec;
}

inline std::string design_key(const DesignSpec &spec) {
  return to_string(spec.name) + "-" + to_string(spec.variant);
}

namespace detail {

constexpr std::array<int, 5> round_robin = {0, 1, 0, 1, 0};

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

} // namespace detail

/// True structural function of each design.
inline double structural_value(const DesignSpec &spec, const Eigen::Ref<const Eigen::RowVectorXd> &x) {
  using std::numbers::pi;
  const bool uni = spec.variant == Variant::univariate;
  switch (spec.name) {
  case DesignName::np: {
    auto f = [](double v) { return std::log(std::abs(v - 1.0) + 1.0) * detail::sgn(v - 1.0); };
    if (uni) return f(x(0));
    double out = 0.0, inter = 0.0;
    for (Index j = 0; j < 5; ++j) {
      out += f(x(j));
      for (Index k = j + 1; k < 5; ++k) inter += std::sin(pi * x(j) * x(k));
    }
    return out + inter / 10.0;
  }
  case DesignName::s:
    if (uni) return 2.0 * std::sin(pi * x(0));
    return std::sin(pi * x(0)) + 0.5 * std::sin(pi * (x(2) - x(1))) + 0.5 * std::cos(pi * (x(4) - x(3)));
  case DesignName::cns: {
    double out = 0.0;
    for (Index j = 0; j < x.size(); ++j) out += 1.0 - 2.0 * normal_cdf(x(j) - 0.5);
    return out;
  }
  case DesignName::cw: {
    auto f = [](double v) {
      const double p = std::max(v - 0.5, 0.0);
      return 2.0 * p * p + 0.5 * v;
    };
    if (uni) return f(x(0));
    double out = 0.0;
    for (Index j = 0; j < 5; ++j) out += f(x(j));
    return out + x(2) * x(3) + std::log(1.0 + x(0) * x(1) * x(4));
  }
  case DesignName::cck:
    if (uni) return std::sin(4.0 * x(0)) * std::log(x(0));
    return std::sin(4.0 * x(0)) * std::log(x(0)) + 1.5 * std::cos(pi * x(1)) + x(2) * x(2) -
           0.5 * x(3) * x(4);
  case DesignName::exo: {
    double out = 0.0;
    for (Index j = 0; j < x.size(); ++j) out += std::sin(x(j)) + 0.25 * x(j) * x(j);
    return out;
  }
  }
  return 0.0;
}

inline VectorXd structural_function(const DesignSpec &spec, const MatrixXd &x) {
  VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = structural_value(spec, x.row(i));
  return out;
}

/// Nearest positive definite correlation matrix by repeated eigenvalue
/// clipping and diagonal rescaling. A matrix that is already positive
/// definite with unit diagonal is returned unchanged.
inline MatrixXd project_correlation(const MatrixXd &s, double floor = 1e-6, int max_rounds = 100) {
  if (s.rows() != s.cols()) throw DimensionError("project_correlation: matrix must be square");
  MatrixXd a = 0.5 * (s + s.transpose());
  auto min_eig = [](const MatrixXd &m) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  };
  auto diag_dev = [](const MatrixXd &m) { return (m.diagonal().array() - 1.0).abs().maxCoeff(); };
  if (min_eig(a) >= floor && diag_dev(a) <= 1e-12) return a;
  for (int round = 0; round < max_rounds; ++round) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
    const VectorXd clipped = es.eigenvalues().cwiseMax(floor);
    a = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    const VectorXd inv_sd = a.diagonal().cwiseSqrt().cwiseInverse();
    a = inv_sd.asDiagonal() * a * inv_sd.asDiagonal();
    a = 0.5 * (a + a.transpose());
    a.diagonal().setOnes();
    if (min_eig(a) >= floor && diag_dev(a) <= 1e-12) break;
  }
  return a;
}

/// Nearest correlation matrix with eigenvalues at least `floor` whose entries
/// flagged in `fixed` keep their input values. Alternating projections with
/// Dykstra's correction between the eigenvalue-clipped cone and the affine set
/// of unit-diagonal matrices that agree with `s` on the fixed entries.
inline MatrixXd project_correlation_fixed(const MatrixXd &s, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> &fixed,
                                          double floor = 1e-6, int max_rounds = 10000, double tol = 1e-13) {
  if (s.rows() != s.cols() || fixed.rows() != s.rows() || fixed.cols() != s.cols())
    throw DimensionError("project_correlation: matrix and mask must be square and conformable");
  const MatrixXd target = 0.5 * (s + s.transpose());
  auto to_affine = [&](MatrixXd m) {
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i)
        if (i == j || fixed(i, j) || fixed(j, i)) m(i, j) = i == j ? 1.0 : target(i, j);
    return m;
  };
  MatrixXd y = to_affine(target), correction = MatrixXd::Zero(s.rows(), s.cols());
  for (int round = 0; round < max_rounds; ++round) {
    const MatrixXd r = y - correction;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(r);
    const MatrixXd x = es.eigenvectors() * es.eigenvalues().cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
    correction = x - r;
    const MatrixXd next = to_affine(x);
    const double change = (next - y).cwiseAbs().maxCoeff();
    y = next;
    if (change < tol) break;
  }
  y = 0.5 * (y + y.transpose());
  const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(y, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (!(min_eig > 0.0)) throw NumericalError("project_correlation: constraints admit no positive definite completion");
  return y;
}

/// One draw of a design plus what the validity checks need: the structural
/// error, the latent drivers of X it is correlated with, and the implied
/// population correlations between them.
struct GeneratedSample {
  DesignSpec spec;
  Dataset data;
  MatrixXd test_x;
  VectorXd structural_error;
  MatrixXd latent_driver;      // n x d
  VectorXd endogeneity_target; // corr(structural_error, latent_driver_j)

  VectorXd h0(const MatrixXd &x) const { return structural_function(spec, x); }
};

namespace detail {

inline MatrixXd correlated_normals(const MatrixXd &corr, Index n, Rng &rng) {
  Eigen::LLT<MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw NumericalError("dgp: correlation matrix is not PD");
  const MatrixXd l = llt.matrixL();
  MatrixXd z(n, corr.rows());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < corr.rows(); ++j) z(i, j) = normal(rng);
  return z * l.transpose();
}

// Everything a single design draw produces before splitting off the test set.
struct RawDraw {
  MatrixXd x, w;
  VectorXd error;
  MatrixXd driver;
  VectorXd target;
};

inline MatrixXd three_block(double xz, double xe) {
  MatrixXd c = MatrixXd::Identity(3, 3);
  c(0, 1) = c(1, 0) = xz;
  c(0, 2) = c(2, 0) = xe;
  return c;
}

inline RawDraw draw_design(const DesignSpec &spec, Index n, Rng &rng) {
  const bool uni = spec.variant == Variant::univariate;
  const Index d = spec.dim();
  RawDraw out;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const double noise_scale = uni ? 1.0 : std::sqrt(static_cast<double>(d));
  auto phi = [](double v) { return normal_cdf(v); };

  switch (spec.name) {
  case DesignName::np:
  case DesignName::cck: {
    const bool np = spec.name == DesignName::np;
    const double c = np ? 0.5 : 0.75;
    // (error, v_1..v_d) with corr(error, v_j) = c, v independent
    MatrixXd corr = MatrixXd::Identity(d + 1, d + 1);
    corr.block(0, 1, 1, d).setConstant(c);
    corr.block(1, 0, d, 1).setConstant(c);
    corr = project_correlation(corr);
    const MatrixXd lat = correlated_normals(corr, n, rng);
    const Index dw = uni ? 1 : 2;
    MatrixXd zeta(n, dw);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < dw; ++k) zeta(i, k) = normal(rng);
    out.x.resize(n, d);
    out.w.resize(n, dw);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j) {
        const double zk = zeta(i, uni ? 0 : round_robin[static_cast<std::size_t>(j)]);
        const double v = lat(i, 1 + j);
        if (np)
          out.x(i, j) = uni ? v + zk : v + 0.5 * zk;
        else
          out.x(i, j) = phi(v + (coin(rng) ? zk : 0.0));
      }
      for (Index k = 0; k < dw; ++k) out.w(i, k) = np ? zeta(i, k) : phi(zeta(i, k));
    }
    out.error = noise_scale * lat.col(0);
    out.driver = lat.rightCols(d);
    out.target = corr.block(1, 0, d, 1);
    break;
  }
  case DesignName::cns:
  case DesignName::s: {
    const bool cns = spec.name == DesignName::cns;
    const Index dw = uni ? 1 : 2;
    // latent order: X*_1..X*_d, Z*_1..Z*_dw, eps
    MatrixXd corr;
    if (uni) {
      corr = three_block(0.5, 0.3);
    } else {
      corr = MatrixXd::Identity(d + dw + 1, d + dw + 1);
      for (Index j = 0; j < d; ++j) {
        const Index zk = cns ? (j < 3 ? 0 : 1) : round_robin[static_cast<std::size_t>(j)];
        corr(j, d + zk) = corr(d + zk, j) = 0.5;
        corr(j, d + dw) = corr(d + dw, j) = cns ? 0.3 : 0.5;
      }
      // instruments stay independent of each other and of the error
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> fixed =
          Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(d + dw + 1, d + dw + 1, false);
      fixed.block(d, d, dw + 1, dw + 1).setConstant(true);
      corr = project_correlation_fixed(corr, fixed);
    }
    const MatrixXd lat = correlated_normals(corr, n, rng);
    out.x.resize(n, d);
    out.w.resize(n, dw);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j)
        out.x(i, j) = cns ? phi(lat(i, j)) : 2.0 * (phi(lat(i, j) / 3.0) - 0.5);
      for (Index k = 0; k < dw; ++k)
        out.w(i, k) = cns ? phi(lat(i, d + k)) : 2.0 * (phi(lat(i, d + k) / 3.0) - 0.5);
    }
    out.error = noise_scale * lat.col(d + dw);
    out.driver = lat.leftCols(d);
    out.target = corr.block(0, d + dw, d, 1);
    break;
  }
  case DesignName::cw: {
    const double sigma = uni ? 0.5 : 1.0;
    const double rho = 0.3, eta = 0.3;
    const Index dw = uni ? 1 : 2;
    out.x.resize(n, d);
    out.w.resize(n, dw);
    out.error.resize(n);
    out.driver.resize(n, d);
    for (Index i = 0; i < n; ++i) {
      double zeta[2] = {normal(rng), uni ? 0.0 : normal(rng)};
      double sum_eps = 0.0;
      for (Index j = 0; j < d; ++j) {
        const double e = normal(rng);
        const double zk = zeta[uni ? 0 : (j < 3 ? 0 : 1)];
        out.x(i, j) = phi(rho * zk + std::sqrt(1.0 - rho * rho) * e);
        out.driver(i, j) = e;
        sum_eps += e;
      }
      const double nu = normal(rng);
      for (Index k = 0; k < dw; ++k) out.w(i, k) = phi(zeta[k]);
      out.error(i) = noise_scale * sigma * (eta * sum_eps + std::sqrt(1.0 - eta * eta) * nu);
    }
    const double dd = static_cast<double>(d);
    out.target = VectorXd::Constant(d, eta / std::sqrt(dd * eta * eta + 1.0 - eta * eta));
    break;
  }
  case DesignName::exo: {
    // strongly identified exogenous regression: W = X, independent noise
    out.x.resize(n, d);
    out.error.resize(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < d; ++j) out.x(i, j) = normal(rng);
      out.error(i) = 0.5 * normal(rng);
    }
    out.w = out.x;
    out.driver = out.x;
    out.target = VectorXd::Zero(d);
    break;
  }
  }
  return out;
}

} // namespace detail

/// Draw a sample of size spec.n plus spec.test_size independent test regressors.
inline GeneratedSample generate(const DesignSpec &spec, Rng &rng) {
  if (spec.n < 2) throw ConfigError("dgp: n must be at least 2");
  auto train = detail::draw_design(spec, spec.n, rng);
  GeneratedSample out;
  out.spec = spec;
  out.data.x = train.x;
  out.data.w = train.w;
  out.data.y = structural_function(spec, train.x) + train.error;
  out.structural_error = std::move(train.error);
  out.latent_driver = std::move(train.driver);
  out.endogeneity_target = std::move(train.target);
  if (spec.test_size > 0) out.test_x = detail::draw_design(spec, spec.test_size, rng).x;
  return out;
}

/// Two-period Cobb-Douglas panel y_t = b_k k_t + b_l l_t + omega_t + eps_t
/// with omega_t = g0 + g1 omega_{t-1} + xi_t and exact plug-ins
/// Phi_t = F(x_t) + omega_t.
struct AcfPanel {
  Dataset data; // x = (k_t, l_t), x_lag = (k_{t-1}, l_{t-1}), w = (k_t, l_{t-1})
  AcfPlugins plugins;
  VectorXd omega, omega_lag, eps;
  double beta_k = 0.4, beta_l = 0.6;
  double g0 = 0.2, g1 = 0.7;

  VectorXd production(const MatrixXd &x) const { return beta_k * x.col(0) + beta_l * x.col(1); }
};

inline AcfPanel synthetic_acf_panel(Index n, Rng &rng, double xi_sd = 0.0, double eps_sd = 0.1) {
  if (n < 2) throw ConfigError("acf panel: n must be at least 2");
  AcfPanel p;
  std::normal_distribution<double> normal(0.0, 1.0);
  p.omega.resize(n);
  p.omega_lag.resize(n);
  p.eps.resize(n);
  p.data.x.resize(n, 2);
  p.data.x_lag.resize(n, 2);
  p.data.w.resize(n, 2);
  p.data.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double wl = normal(rng);
    const double w = p.g0 + p.g1 * wl + xi_sd * normal(rng);
    const double k_lag = 0.5 * wl + normal(rng);
    const double l_lag = 0.5 * wl + normal(rng);
    const double k = 0.8 * k_lag + 0.3 * normal(rng);
    const double l = 0.5 * w + 0.5 * l_lag + 0.5 * normal(rng);
    p.omega(i) = w;
    p.omega_lag(i) = wl;
    p.eps(i) = eps_sd * normal(rng);
    p.data.x.row(i) << k, l;
    p.data.x_lag.row(i) << k_lag, l_lag;
    p.data.w.row(i) << k, l_lag;
  }
  p.data.y = p.production(p.data.x) + p.omega + p.eps;
  p.plugins.phi = p.production(p.data.x) + p.omega;
  p.plugins.phi_lag = p.production(p.data.x_lag) + p.omega_lag;
  return p;
}

/// Fitted structural function of a sieve estimator: f(x) = basis(x) . coef.
struct SieveFit {
  BasisFunctions basis;
  Standardizer x_scale;
  VectorXd coefficients;
  bool rank_deficient = false;

  VectorXd predict(const MatrixXd &x) const { return basis.evaluate(x_scale.apply(x)) * coefficients; }
};

/// Two-stage least squares: natural-spline basis of X (dimension J) projected
/// on a thin-plate basis of W (dimension first_k), then OLS of Y on the
/// projected basis. Univariate X only.
inline SieveFit tsls_fit(const Dataset &data, Index J, Index first_k, Rng &rng) {
  data.validate();
  if (data.x.cols() != 1) throw DimensionError("2sls: natural-spline structural basis is univariate");
  if (J > first_k || first_k > data.size()) throw DimensionError("2sls: need J <= K <= n");
  SieveFit fit;
  fit.x_scale = Standardizer::fit(data.x);
  const Standardizer w_scale = Standardizer::fit(data.w);
  const BasisDesign xb = build_natural_spline(fit.x_scale.apply(data.x).col(0), J);
  const BasisDesign wb = build_thin_plate(w_scale.apply(data.w), first_k, rng);
  const MatrixXd projected = wb.project(xb.B());
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(projected);
  cod.setThreshold(1e-10);
  fit.rank_deficient = cod.rank() < projected.cols();
  fit.coefficients = cod.solve(data.y);
  fit.basis = xb.functions();
  return fit;
}

/// OLS sieve regression of Y on an X-basis, ignoring endogeneity: natural
/// splines of dimension 5 for univariate X, a 56-term polynomial otherwise.
inline SieveFit ols_sieve_fit(const Dataset &data) {
  data.validate();
  SieveFit fit;
  fit.x_scale = Standardizer::fit(data.x);
  const MatrixXd xs = fit.x_scale.apply(data.x);
  const BasisDesign xb = xs.cols() == 1 ? build_natural_spline(xs.col(0), 5) : build_tensor_poly(xs, 56);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(xb.B());
  cod.setThreshold(1e-10);
  fit.rank_deficient = cod.rank() < xb.B().cols();
  fit.coefficients = cod.solve(data.y);
  fit.basis = xb.functions();
  return fit;
}

} // namespace qbcmr
