#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace qbcmr {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

// Error hierarchy. Every failure raised by the library derives from Error so
// callers (the harness in particular) can sort recoverable numerical trouble
// from configuration mistakes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct SummaryError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

/// n observations of (Y, X, W). `x_lag` is only populated for panel
/// restrictions that evaluate the structural function at lagged inputs.
struct Dataset {
  VectorXd y;
  MatrixXd x;
  MatrixXd w;
  MatrixXd x_lag;

  Index size() const { return y.size(); }
  bool has_lag() const { return x_lag.rows() > 0; }

  void validate() const {
    if (x.rows() != y.size() || w.rows() != y.size())
      throw DimensionError("dataset: y, x and w must have the same number of rows");
    if (has_lag() && (x_lag.rows() != x.rows() || x_lag.cols() != x.cols()))
      throw DimensionError("dataset: x_lag must match the shape of x");
  }
};

inline bool all_finite(const MatrixXd &m) { return m.allFinite(); }
inline bool all_finite(const VectorXd &v) { return v.allFinite(); }

/// SplitMix64 finalizer. Used to derive independent stream seeds from a master
/// seed and a counter, so the seed of replication r never depends on the
/// order in which replications are scheduled.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  return splitmix64(master ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline VectorXd standard_normal(Index n, Rng &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd out(n);
  for (Index i = 0; i < n; ++i) out(i) = normal(rng);
  return out;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Column-wise affine standardization (v - mean) / sd with the empirical
/// (1/n) variance.
struct Standardizer {
  VectorXd mean;
  VectorXd sd;

  static Standardizer fit(const MatrixXd &m) {
    if (m.rows() < 2) throw DimensionError("standardizer: need at least two rows");
    Standardizer s;
    s.mean = m.colwise().mean().transpose();
    s.sd.resize(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
      const double var =
          (m.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(m.rows());
      s.sd(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  MatrixXd apply(const MatrixXd &m) const {
    if (m.cols() != mean.size()) throw DimensionError("standardizer: column mismatch");
    return ((m.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array())
        .matrix();
  }
};

} // namespace qbcmr
