#pragma once

// First-stage sieve estimate of m(W, h) = E[rho(Y, h(X)) | W], weighting
// matrices, and the quasi-log-likelihood -(n/2) E_n[m' Sigma m].

#include "qbcmr/basis.hpp"
#include "qbcmr/residuals.hpp"

namespace qbcmr {

enum class Weighting { identity, estimated, continuous_update };

struct WeightDiagnostics {
  Index negative_variances = 0; // fitted variance eigenvalues <= 0 before clamping
  Index clamped = 0;            // weight eigenvalues moved into [lo, hi]
};

/// Per-observation weights, stored row-wise as vec(Sigma_i) (d_rho^2 columns).
struct WeightEstimate {
  MatrixXd weights;
  WeightDiagnostics diagnostics;
};

/// Regress the products rho_k rho_l on the W-basis, symmetrize, invert per
/// observation and clamp the eigenvalues of the inverse into [lo, hi].
inline WeightEstimate estimate_weight_matrices(const BasisDesign &design, const MatrixXd &resid,
                                               double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi))
    throw ParameterError("weights: need 0 < lo <= hi < inf");
  if (resid.rows() != design.rows()) throw DimensionError("weights: residual row mismatch");
  const Index n = resid.rows();
  const Index p = resid.cols();

  MatrixXd products(n, p * (p + 1) / 2);
  {
    Index c = 0;
    for (Index k = 0; k < p; ++k)
      for (Index l = k; l < p; ++l, ++c) products.col(c) = resid.col(k).cwiseProduct(resid.col(l));
  }
  const MatrixXd fitted = design.project(products);

  WeightEstimate out;
  out.weights.resize(n, p * p);
  auto clamp_inverse = [&](double lambda) {
    if (!(lambda > 0.0)) {
      ++out.diagnostics.negative_variances;
      ++out.diagnostics.clamped;
      return hi;
    }
    const double w = 1.0 / lambda;
    if (w < lo || w > hi) ++out.diagnostics.clamped;
    return std::clamp(w, lo, hi);
  };

  if (p == 1) {
    for (Index i = 0; i < n; ++i) out.weights(i, 0) = clamp_inverse(fitted(i, 0));
    return out;
  }
  MatrixXd s(p, p);
  for (Index i = 0; i < n; ++i) {
    Index c = 0;
    for (Index k = 0; k < p; ++k)
      for (Index l = k; l < p; ++l, ++c) s(k, l) = s(l, k) = fitted(i, c);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
    VectorXd inv(p);
    for (Index k = 0; k < p; ++k) inv(k) = clamp_inverse(es.eigenvalues()(k));
    const MatrixXd w = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    out.weights.row(i) = Eigen::Map<const Eigen::RowVectorXd>(w.data(), p * p);
  }
  return out;
}

/// Sieve first stage over W plus its weighting scheme. Immutable once built.
class FirstStage {
public:
  static constexpr double default_lo = 0.05;
  static constexpr double default_hi = 20.0;

  explicit FirstStage(BasisDesign design, Weighting weighting = Weighting::identity,
                      double lo = default_lo, double hi = default_hi)
      : design_(std::move(design)), weighting_(weighting), lo_(lo), hi_(hi) {
    if (!(lo_ > 0.0) || !(hi_ >= lo_)) throw ParameterError("first stage: need 0 < lo <= hi");
    if (weighting_ == Weighting::estimated)
      throw ParameterError("first stage: use with_weights() for estimated weighting");
  }

  /// Optimal two-step weighting from residuals at a preliminary estimate of h0.
  static FirstStage with_estimated_weights(BasisDesign design, const MatrixXd &prelim_resid,
                                           double lo = default_lo, double hi = default_hi) {
    FirstStage fs(std::move(design), Weighting::identity, lo, hi);
    auto est = estimate_weight_matrices(fs.design_, prelim_resid, lo, hi);
    fs.weighting_ = Weighting::estimated;
    fs.weights_ = std::move(est.weights);
    fs.diagnostics_ = est.diagnostics;
    return fs;
  }

  const BasisDesign &design() const { return design_; }
  Weighting weighting() const { return weighting_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const MatrixXd &weights() const { return weights_; }
  const WeightDiagnostics &diagnostics() const { return diagnostics_; }
  Index size() const { return design_.rows(); }

private:
  BasisDesign design_;
  Weighting weighting_;
  double lo_, hi_;
  MatrixXd weights_;
  WeightDiagnostics diagnostics_;
};

/// Column-wise projection of the residuals onto col(B): rows are m_hat(W_i, h).
inline MatrixXd mhat(const FirstStage &fs, const MatrixXd &resid) {
  return fs.design().project(resid);
}

inline WeightEstimate estimate_optimal_weights(const FirstStage &fs, const MatrixXd &prelim_resid,
                                               double lo, double hi) {
  return estimate_weight_matrices(fs.design(), prelim_resid, lo, hi);
}

struct QuasiObjective {
  double value = 0.0;  // E_n[m_hat' Sigma m_hat]
  double loglik = 0.0; // -(n/2) value
};

/// E_n[m_i' Sigma_i m_i] for row-stored weights.
inline double weighted_value(const MatrixXd &m, const MatrixXd &weights) {
  const Index n = m.rows();
  const Index p = m.cols();
  if (weights.rows() != n || weights.cols() != p * p)
    throw DimensionError("quasi objective: weight shape mismatch");
  double total = 0.0;
  if (p == 1) {
    total = (m.col(0).array().square() * weights.col(0).array()).sum();
  } else {
    for (Index i = 0; i < n; ++i) {
      const Eigen::Map<const MatrixXd> w(weights.row(i).eval().data(), p, p);
      total += m.row(i) * MatrixXd(w) * m.row(i).transpose();
    }
  }
  return total / static_cast<double>(n);
}

/// Quasi objective from a residual matrix already evaluated at h.
inline QuasiObjective quasi_objective(const FirstStage &fs, const MatrixXd &resid) {
  if (resid.rows() != fs.size()) throw DimensionError("quasi objective: residual row mismatch");
  if (!resid.allFinite()) throw NumericalError("quasi objective: non-finite residuals");
  const double n = static_cast<double>(resid.rows());
  QuasiObjective out;
  const auto &design = fs.design();
  switch (fs.weighting()) {
  case Weighting::identity:
    if (design.ridge() == 0.0) {
      out.value = (design.Q().transpose() * resid).squaredNorm() / n;
    } else {
      out.value = design.project(resid).squaredNorm() / n;
    }
    break;
  case Weighting::estimated:
    out.value = weighted_value(design.project(resid), fs.weights());
    break;
  case Weighting::continuous_update: {
    const auto est = estimate_weight_matrices(design, resid, fs.lo(), fs.hi());
    out.value = weighted_value(design.project(resid), est.weights);
    break;
  }
  }
  out.loglik = -0.5 * n * out.value;
  return out;
}

inline QuasiObjective quasi_loglik(const FirstStage &fs, const ResidualModel &model,
                                   const VectorXd &y, const VectorXd &hvals,
                                   const VectorXd &hvals_lag = VectorXd()) {
  if (!hvals.allFinite() || (hvals_lag.size() > 0 && !hvals_lag.allFinite()))
    throw NumericalError("quasi objective: non-finite structural values");
  return quasi_objective(fs, model.evaluate(y, hvals, hvals_lag));
}

} // namespace qbcmr
