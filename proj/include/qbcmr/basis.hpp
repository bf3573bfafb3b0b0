#pragma once

// First-stage approximating functions and least-squares projection onto
// their span.

#include "qbcmr/core.hpp"
#include "qbcmr/kmeans.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace qbcmr {

enum class BasisKind { thin_plate, natural_spline, tensor_poly };

struct BasisSpec {
  BasisKind kind = BasisKind::thin_plate;
  Index dimension = 5;
  std::optional<MatrixXd> knots;
};

/// Radial profile of the thin-plate spline in `d` dimensions:
/// r^2 log r for even d, r^3 for odd d, with eta(0) = 0.
inline double thin_plate_eta(double r, Index d) {
  if (r <= 0.0) return 0.0;
  if (d % 2 == 0) return r * r * std::log(r);
  return r * r * r;
}

/// Stateless description of a basis: knows how to evaluate b^K at any point.
class BasisFunctions {
public:
  static BasisFunctions thin_plate(MatrixXd knots) {
    BasisFunctions f;
    f.kind_ = BasisKind::thin_plate;
    f.input_dim_ = knots.cols();
    f.knots_ = std::move(knots);
    return f;
  }

  static BasisFunctions natural_spline(VectorXd knots) {
    if (knots.size() < 2) throw DimensionError("natural spline: need at least two knots");
    for (Index k = 1; k < knots.size(); ++k)
      if (!(knots(k) > knots(k - 1)))
        throw InputError("natural spline: knots must be strictly increasing");
    BasisFunctions f;
    f.kind_ = BasisKind::natural_spline;
    f.input_dim_ = 1;
    f.knots_ = knots;
    return f;
  }

  /// First `k` monomials of `d` variables in graded lexicographic order.
  static BasisFunctions tensor_poly(Index d, Index k) {
    if (d < 1 || k < 1) throw DimensionError("tensor poly: bad dimensions");
    BasisFunctions f;
    f.kind_ = BasisKind::tensor_poly;
    f.input_dim_ = d;
    std::vector<std::vector<int>> exps;
    for (int total = 0; static_cast<Index>(exps.size()) < k; ++total) {
      std::vector<int> e(static_cast<std::size_t>(d), 0);
      // enumerate compositions of `total` into d parts, lexicographically descending
      std::vector<std::vector<int>> level;
      auto rec = [&](auto &&self, std::size_t pos, int left) -> void {
        if (pos + 1 == e.size()) {
          e[pos] = left;
          level.push_back(e);
          return;
        }
        for (int a = left; a >= 0; --a) {
          e[pos] = a;
          self(self, pos + 1, left - a);
        }
      };
      rec(rec, 0, total);
      for (auto &v : level) {
        if (static_cast<Index>(exps.size()) == k) break;
        exps.push_back(v);
      }
    }
    f.exponents_ = std::move(exps);
    return f;
  }

  BasisKind kind() const { return kind_; }
  Index input_dim() const { return input_dim_; }
  const MatrixXd &knots() const { return knots_; }

  Index dimension() const {
    switch (kind_) {
    case BasisKind::thin_plate:
      return input_dim_ + 1 + knots_.rows();
    case BasisKind::natural_spline:
      return knots_.size();
    case BasisKind::tensor_poly:
      return static_cast<Index>(exponents_.size());
    }
    return 0;
  }

  MatrixXd evaluate(const MatrixXd &points) const {
    if (points.cols() != input_dim_) throw DimensionError("basis: point dimension mismatch");
    if (!points.allFinite()) throw InputError("basis: non-finite evaluation points");
    const Index n = points.rows();
    MatrixXd out(n, dimension());
    switch (kind_) {
    case BasisKind::thin_plate: {
      out.col(0).setOnes();
      out.middleCols(1, input_dim_) = points;
      for (Index j = 0; j < knots_.rows(); ++j)
        for (Index i = 0; i < n; ++i)
          out(i, 1 + input_dim_ + j) =
              thin_plate_eta((points.row(i) - knots_.row(j)).norm(), input_dim_);
      break;
    }
    case BasisKind::natural_spline: {
      const Index J = knots_.size();
      const double last = knots_(J - 1);
      auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
      auto dk = [&](double x, Index k) {
        return (cube(x - knots_(k)) - cube(x - last)) / (last - knots_(k));
      };
      for (Index i = 0; i < n; ++i) {
        const double x = points(i, 0);
        out(i, 0) = 1.0;
        out(i, 1) = x;
        const double tail = J > 2 ? dk(x, J - 2) : 0.0;
        for (Index k = 0; k + 2 < J; ++k) out(i, k + 2) = dk(x, k) - tail;
      }
      break;
    }
    case BasisKind::tensor_poly: {
      for (Index c = 0; c < dimension(); ++c) {
        const auto &e = exponents_[static_cast<std::size_t>(c)];
        for (Index i = 0; i < n; ++i) {
          double v = 1.0;
          for (Index j = 0; j < input_dim_; ++j) v *= std::pow(points(i, j), e[static_cast<std::size_t>(j)]);
          out(i, c) = v;
        }
      }
      break;
    }
    }
    return out;
  }

private:
  BasisKind kind_ = BasisKind::thin_plate;
  Index input_dim_ = 0;
  MatrixXd knots_;
  std::vector<std::vector<int>> exponents_;
};

/// Basis evaluated at the sample together with its orthonormal factor.
/// Immutable after construction.
class BasisDesign {
public:
  BasisDesign() = default;

  BasisDesign(BasisFunctions functions, const MatrixXd &points, Index requested_dimension = -1)
      : functions_(std::move(functions)) {
    b_ = functions_.evaluate(points);
    requested_ = requested_dimension < 0 ? b_.cols() : requested_dimension;
    const Index n = b_.rows();
    const Index k = b_.cols();
    if (k > n) throw DimensionError("basis: more columns than observations");

    gram_ = (b_.transpose() * b_) / static_cast<double>(n);

    // Rank test on unit-norm columns.
    VectorXd norms = b_.colwise().norm().transpose();
    for (Index j = 0; j < k; ++j)
      if (norms(j) == 0.0) norms(j) = 1.0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(b_ * norms.cwiseInverse().asDiagonal());
    qr.setThreshold(1e-10);
    rank_ = qr.rank();

    if (rank_ == k) {
      Eigen::HouseholderQR<MatrixXd> hqr(b_);
      q_ = hqr.householderQ() * MatrixXd::Identity(n, k);
      r_ = hqr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    } else {
      ridge_ = 1e-9 * gram_.trace() / static_cast<double>(k);
      MatrixXd full_q = qr.householderQ() * MatrixXd::Identity(n, rank_);
      q_ = full_q;
      r_ = qr.matrixR().topLeftCorner(rank_, k).triangularView<Eigen::Upper>();
      ridge_solver_.compute(b_.transpose() * b_ +
                            static_cast<double>(n) * ridge_ * MatrixXd::Identity(k, k));
    }
  }

  const BasisFunctions &functions() const { return functions_; }
  const MatrixXd &B() const { return b_; }
  const MatrixXd &Q() const { return q_; }
  const MatrixXd &R() const { return r_; }
  const MatrixXd &gram() const { return gram_; }
  double ridge() const { return ridge_; }
  Index rank() const { return rank_; }
  Index rows() const { return b_.rows(); }
  Index dimension() const { return b_.cols(); }
  Index requested_dimension() const { return requested_; }
  bool reduced() const { return requested_ != b_.cols(); }

  MatrixXd evaluate(const MatrixXd &points) const { return functions_.evaluate(points); }

  /// Fitted values of the least-squares regression of each target column on B.
  MatrixXd project(const MatrixXd &targets) const {
    if (targets.rows() != b_.rows()) throw DimensionError("project: row count mismatch");
    if (!targets.allFinite()) throw InputError("project: non-finite targets");
    if (ridge_ > 0.0) return b_ * ridge_solver_.solve(b_.transpose() * targets);
    return q_ * (q_.transpose() * targets);
  }

  VectorXd project(const VectorXd &target) const {
    return project(MatrixXd(target)).col(0);
  }

  /// Least-squares coefficients c with fitted values B c.
  MatrixXd coefficients(const MatrixXd &targets) const {
    if (targets.rows() != b_.rows()) throw DimensionError("coefficients: row count mismatch");
    if (ridge_ > 0.0) return ridge_solver_.solve(b_.transpose() * targets);
    return r_.triangularView<Eigen::Upper>().solve(q_.transpose() * targets);
  }

private:
  BasisFunctions functions_;
  MatrixXd b_, q_, r_, gram_;
  double ridge_ = 0.0;
  Index rank_ = 0;
  Index requested_ = 0;
  Eigen::LDLT<MatrixXd> ridge_solver_;
};

namespace detail {

inline MatrixXd unique_rows(const MatrixXd &m) {
  const auto keep = distinct_rows(m);
  MatrixXd out(static_cast<Index>(keep.size()), m.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Index>(k)) = m.row(keep[k]);
  return out;
}

} // namespace detail

/// Low-rank thin-plate regression basis: the polynomial null space
/// {1, w_1, ..., w_d} plus K - d - 1 radial functions centred at k-means knots.
inline BasisDesign build_thin_plate(const MatrixXd &points, Index K, Rng &rng,
                                    const std::optional<MatrixXd> &knots = std::nullopt) {
  const Index n = points.rows();
  const Index d = points.cols();
  if (K > n) throw DimensionError("thin plate: K exceeds the number of observations");
  if (K < d + 2) throw DimensionError("thin plate: K must be at least d_w + 2");
  if (!points.allFinite()) throw InputError("thin plate: non-finite points");

  MatrixXd centers;
  if (knots) {
    if (knots->cols() != d) throw DimensionError("thin plate: knot dimension mismatch");
    if (detail::unique_rows(*knots).rows() != knots->rows())
      throw InputError("thin plate: knots must be distinct");
    centers = *knots;
  } else {
    centers = detail::unique_rows(kmeans(points, K - d - 1, rng).centers);
  }
  return BasisDesign(BasisFunctions::thin_plate(std::move(centers)), points, K);
}

/// Natural cubic spline basis of dimension J with knots at equispaced
/// quantiles of x (the extreme knots are min and max of x).
inline BasisDesign build_natural_spline(const VectorXd &x, Index J) {
  if (J < 2) throw DimensionError("natural spline: J must be at least 2");
  if (!x.allFinite()) throw InputError("natural spline: non-finite x");
  std::vector<double> sorted(x.data(), x.data() + x.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq = sorted;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<Index>(uniq.size()) < J)
    throw DimensionError("natural spline: fewer distinct values than J");

  VectorXd knots(J);
  const double nm1 = static_cast<double>(sorted.size() - 1);
  for (Index k = 0; k < J; ++k) {
    // type-7 quantile (linear interpolation between order statistics)
    const double h = nm1 * static_cast<double>(k) / static_cast<double>(J - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    knots(k) = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  for (Index k = 1; k < J; ++k)
    if (!(knots(k) > knots(k - 1)))
      throw DimensionError("natural spline: quantile knots collapse; too many ties in x");
  return BasisDesign(BasisFunctions::natural_spline(knots), MatrixXd(x), J);
}

inline BasisDesign build_tensor_poly(const MatrixXd &points, Index K) {
  if (K > points.rows()) throw DimensionError("tensor poly: K exceeds the number of observations");
  return BasisDesign(BasisFunctions::tensor_poly(points.cols(), K), points, K);
}

inline BasisDesign build_basis(const BasisSpec &spec, const MatrixXd &points, Rng &rng) {
  if (spec.dimension < 1) throw DimensionError("basis: K must be positive");
  switch (spec.kind) {
  case BasisKind::thin_plate:
    return build_thin_plate(points, spec.dimension, rng, spec.knots);
  case BasisKind::natural_spline:
    if (points.cols() != 1) throw DimensionError("natural spline: univariate input only");
    return build_natural_spline(points.col(0), spec.dimension);
  case BasisKind::tensor_poly:
    return build_tensor_poly(points, spec.dimension);
  }
  throw ParameterError("basis: unknown kind");
}

} // namespace qbcmr
