#pragma once

#include "qbcmr/core.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace qbcmr {

struct KMeansResult {
  MatrixXd centers;
  std::vector<Index> assignment;
  Index requested = 0;
  bool reduced = false; // fewer distinct rows than requested centers
};

namespace detail {

inline std::vector<Index> distinct_rows(const MatrixXd &points) {
  std::vector<Index> order(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  auto less = [&](Index a, Index b) {
    for (Index j = 0; j < points.cols(); ++j) {
      if (points(a, j) < points(b, j)) return true;
      if (points(a, j) > points(b, j)) return false;
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), less);
  std::vector<Index> keep;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k == 0 || less(order[k - 1], order[k])) keep.push_back(order[k]);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

} // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given rng
/// state. When `k` exceeds the number of distinct rows it is reduced to that
/// count and `reduced` is set.
inline KMeansResult kmeans(const MatrixXd &points, Index k, Rng &rng, int max_iter = 25) {
  if (k < 1) throw DimensionError("kmeans: need at least one center");
  if (!points.allFinite()) throw InputError("kmeans: non-finite points");
  const Index n = points.rows();
  const Index d = points.cols();
  if (k > n) throw DimensionError("kmeans: more centers than points");

  const auto distinct = detail::distinct_rows(points);
  KMeansResult out;
  out.requested = k;
  if (static_cast<Index>(distinct.size()) < k) {
    k = static_cast<Index>(distinct.size());
    out.reduced = true;
  }

  MatrixXd centers(k, d);
  VectorXd best = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto update_best = [&](Index c) {
    for (Index i = 0; i < n; ++i)
      best(i) = std::min(best(i), (points.row(i) - centers.row(c)).squaredNorm());
  };

  {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    centers.row(0) = points.row(pick(rng));
    update_best(0);
  }
  for (Index c = 1; c < k; ++c) {
    const double total = best.sum();
    Index chosen = 0;
    if (total > 0.0) {
      double u = unif(rng) * total;
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        u -= best(i);
        if (u < 0.0 && best(i) > 0.0) {
          chosen = i;
          break;
        }
      }
      // guard against rounding leaving us on an already chosen point
      while (best(chosen) == 0.0 && chosen > 0) --chosen;
    }
    centers.row(c) = points.row(chosen);
    update_best(c);
  }

  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = iter == 0;
    for (Index i = 0; i < n; ++i) {
      Index arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double dist = (points.row(i) - centers.row(c)).squaredNorm();
        if (dist < dmin) {
          dmin = dist;
          arg = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != arg) changed = true;
      assign[static_cast<std::size_t>(i)] = arg;
    }
    if (!changed) break;
    MatrixXd sums = MatrixXd::Zero(k, d);
    VectorXd counts = VectorXd::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts(assign[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Index c = 0; c < k; ++c) {
      if (counts(c) > 0.0) centers.row(c) = sums.row(c) / counts(c);
    }
  }

  out.centers = std::move(centers);
  out.assignment = std::move(assign);
  return out;
}

} // namespace qbcmr
