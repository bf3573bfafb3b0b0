#pragma once

// Whittle-Matern Gaussian process prior in its non-centred parametrization
// G = prior_scale * sigma * L_ell * z.

#include "qbcmr/core.hpp"
#include "qbcmr/kmeans.hpp"

#include <sstream>

namespace qbcmr {

struct GPHyper {
  double sigma = 1.0;
  VectorXd lengthscale = VectorXd::Ones(1);
  double alpha = 1.5;
  double prior_scale = 1.0; // 1/sqrt(K) for the rescaled prior

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("gp: sigma must be positive");
    if (lengthscale.size() == 0) throw ParameterError("gp: empty lengthscale");
    for (Index j = 0; j < lengthscale.size(); ++j)
      if (!(lengthscale(j) > 0.0) || !std::isfinite(lengthscale(j)))
        throw ParameterError("gp: lengthscales must be positive");
    if (!(alpha > 0.0)) throw ParameterError("gp: alpha must be positive");
    if (!(prior_scale > 0.0)) throw ParameterError("gp: prior_scale must be positive");
    if (alpha != 0.5 && alpha != 1.5 && alpha != 2.5)
      throw ParameterError("gp: only alpha in {1/2, 3/2, 5/2} has a closed form");
  }
};

/// Matern correlation at scaled distance r for half-integer smoothness.
inline double matern_correlation(double r, double alpha) {
  if (alpha == 0.5) return std::exp(-r);
  if (alpha == 1.5) {
    const double a = std::sqrt(3.0) * r;
    return (1.0 + a) * std::exp(-a);
  }
  if (alpha == 2.5) {
    const double a = std::sqrt(5.0) * r;
    return (1.0 + a + 5.0 * r * r / 3.0) * std::exp(-a);
  }
  throw ParameterError("gp: only alpha in {1/2, 3/2, 5/2} has a closed form");
}

/// Elementwise Matern correlation of an array of squared scaled distances.
inline Eigen::ArrayXXd matern_from_squared(const Eigen::ArrayXXd &r2, double alpha) {
  const Eigen::ArrayXXd r = r2.sqrt();
  if (alpha == 0.5) return (-r).exp();
  if (alpha == 1.5) {
    const Eigen::ArrayXXd a = std::sqrt(3.0) * r;
    return (1.0 + a) * (-a).exp();
  }
  if (alpha == 2.5) {
    const Eigen::ArrayXXd a = std::sqrt(5.0) * r;
    return (1.0 + a + (5.0 / 3.0) * r2) * (-a).exp();
  }
  throw ParameterError("gp: only alpha in {1/2, 3/2, 5/2} has a closed form");
}

inline double matern_kernel(const VectorXd &s, const VectorXd &t, const GPHyper &hyper) {
  hyper.validate();
  if (s.size() != t.size() || s.size() != hyper.lengthscale.size())
    throw DimensionError("matern: dimension mismatch");
  if (!s.allFinite() || !t.allFinite()) throw InputError("matern: non-finite input");
  const double r = ((s - t).array() / hyper.lengthscale.array()).matrix().norm();
  return hyper.sigma * hyper.sigma * matern_correlation(r, hyper.alpha);
}

/// Correlation (unit sigma) between every row of `a` and every row of `b`.
inline MatrixXd correlation_matrix(const MatrixXd &a, const MatrixXd &b, const GPHyper &hyper) {
  if (a.cols() != b.cols() || a.cols() != hyper.lengthscale.size())
    throw DimensionError("matern: dimension mismatch");
  Eigen::ArrayXXd r2 = Eigen::ArrayXXd::Zero(a.rows(), b.rows());
  for (Index j = 0; j < a.cols(); ++j) {
    const double inv = 1.0 / hyper.lengthscale(j);
    const Eigen::ArrayXd ac = a.col(j).array() * inv;
    const Eigen::ArrayXd bc = b.col(j).array() * inv;
    r2 += (ac.replicate(1, b.rows()) - bc.transpose().replicate(a.rows(), 1)).square();
  }
  return matern_from_squared(r2, hyper.alpha).matrix();
}

inline MatrixXd kernel_matrix(const MatrixXd &a, const MatrixXd &b, const GPHyper &hyper) {
  hyper.validate();
  return hyper.sigma * hyper.sigma * correlation_matrix(a, b, hyper);
}

/// Cholesky factor of the correlation matrix on a fixed set of locations.
/// `unit_factor()` is L_ell with L_ell L_ell' = C_ell + jitter I; the kernel
/// factor including the signal scale is `factor()`.
class GPGrid {
public:
  static constexpr double initial_jitter = 1e-8;
  static constexpr int max_retries = 3;

  GPGrid() = default;

  /// Factor a precomputed correlation matrix; used by the sampler, which
  /// keeps distance caches of its own.
  static GPGrid from_correlation(MatrixXd points, const MatrixXd &corr, const GPHyper &hyper) {
    GPGrid g;
    g.points_ = std::move(points);
    g.hyper_ = hyper;
    const Index m = corr.rows();
    double jitter = initial_jitter;
    for (int attempt = 0; attempt <= max_retries; ++attempt, jitter *= 10.0) {
      Eigen::LLT<MatrixXd> llt(corr + jitter * MatrixXd::Identity(m, m));
      if (llt.info() == Eigen::Success) {
        const MatrixXd l = llt.matrixL();
        if (l.diagonal().minCoeff() > 0.0) {
          g.chol_ = l;
          g.jitter_ = jitter;
          return g;
        }
      }
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(corr, Eigen::EigenvaluesOnly);
    std::ostringstream msg;
    msg << "gp: Cholesky failed after " << max_retries << " jitter retries; eigenvalue range ["
        << es.eigenvalues().minCoeff() << ", " << es.eigenvalues().maxCoeff() << "]";
    throw NumericalError(msg.str());
  }

  const MatrixXd &points() const { return points_; }
  const MatrixXd &unit_factor() const { return chol_; }
  MatrixXd factor() const { return hyper_.sigma * chol_; }
  double jitter() const { return jitter_; }
  const GPHyper &hyper() const { return hyper_; }
  Index size() const { return points_.rows(); }
  void set_sigma(double sigma) { hyper_.sigma = sigma; }

  /// (C + jitter I)^{-1} v via two triangular solves.
  VectorXd solve(const VectorXd &v) const {
    VectorXd tmp = chol_.triangularView<Eigen::Lower>().solve(v);
    return chol_.transpose().triangularView<Eigen::Upper>().solve(tmp);
  }

private:
  MatrixXd points_;
  MatrixXd chol_;
  double jitter_ = 0.0;
  GPHyper hyper_;
};

inline GPGrid factor_grid(const MatrixXd &points, const GPHyper &hyper) {
  hyper.validate();
  if (points.rows() < 1) throw DimensionError("gp: empty grid");
  if (!points.allFinite()) throw InputError("gp: non-finite grid points");
  return GPGrid::from_correlation(points, correlation_matrix(points, points, hyper), hyper);
}

/// Path values on the grid: prior_scale * sigma * L_ell z.
inline VectorXd sample_path(const GPGrid &grid, const VectorXd &z, const GPHyper &hyper) {
  if (z.size() != grid.size()) throw DimensionError("sample_path: z has the wrong length");
  VectorXd path = grid.unit_factor().triangularView<Eigen::Lower>() * z;
  return hyper.prior_scale * hyper.sigma * path;
}

/// Correlation between `query` rows and the grid under the grid's
/// lengthscales. A query row equal to a grid point picks up the grid's
/// jitter, so the jitter acts as a nugget of the process itself.
inline MatrixXd grid_cross_correlation(const GPGrid &grid, const MatrixXd &query, const GPHyper &hyper) {
  GPHyper h = hyper;
  h.lengthscale = grid.hyper().lengthscale;
  MatrixXd c = correlation_matrix(query, grid.points(), h);
  for (Index j = 0; j < c.cols(); ++j)
    for (Index i = 0; i < c.rows(); ++i)
      if (query.row(i) == grid.points().row(j)) c(i, j) += grid.jitter();
  return c;
}

/// Gaussian conditional mean of the process at `query` given `values` on the
/// grid: C_{q,m} (C_m + jitter I)^{-1} values.
inline VectorXd kriging_predict(const GPGrid &grid, const VectorXd &values, const MatrixXd &query,
                                const GPHyper &hyper) {
  if (values.size() != grid.size()) throw DimensionError("kriging: value length mismatch");
  if (!query.allFinite()) throw InputError("kriging: non-finite query rows");
  return grid_cross_correlation(grid, query, hyper) * grid.solve(values);
}

struct InducingSelection {
  MatrixXd centers;
  Index requested = 0;
  bool reduced = false;
};

inline InducingSelection select_inducing(const MatrixXd &points, Index m, Rng &rng) {
  if (m > points.rows()) throw DimensionError("inducing: m exceeds the number of points");
  auto km = kmeans(points, m, rng);
  return {std::move(km.centers), km.requested, km.reduced};
}

} // namespace qbcmr
