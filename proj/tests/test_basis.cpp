#include "qbcmr/basis.hpp"

#include <gtest/gtest.h>

using namespace qbcmr;

namespace {

MatrixXd uniform_points(Index n, Index d, Rng &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixXd p(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) p(i, j) = u(rng);
  return p;
}

} // namespace

TEST(ThinPlate, EtaAtZeroIsZero) {
  EXPECT_EQ(thin_plate_eta(0.0, 1), 0.0);
  EXPECT_EQ(thin_plate_eta(0.0, 2), 0.0);
  EXPECT_NEAR(thin_plate_eta(2.0, 2), 4.0 * std::log(2.0), 1e-14);
  EXPECT_NEAR(thin_plate_eta(2.0, 3), 8.0, 1e-14);
}

TEST(ThinPlate, ThreePointsOneKnot) {
  Rng rng(1);
  MatrixXd w(3, 1);
  w << 0.0, 0.5, 1.0;
  auto b = build_thin_plate(w, 3, rng);
  ASSERT_EQ(b.dimension(), 3);
  ASSERT_EQ(b.functions().knots().rows(), 1);
  const double c = b.functions().knots()(0, 0);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(b.B()(i, 0), 1.0);
    EXPECT_DOUBLE_EQ(b.B()(i, 1), w(i, 0));
    EXPECT_NEAR(b.B()(i, 2), std::pow(std::abs(w(i, 0) - c), 3), 1e-14);
  }
}

TEST(ThinPlate, FiftyUniformPointsFullRank) {
  Rng rng(7);
  auto b = build_thin_plate(uniform_points(50, 1, rng), 10, rng);
  EXPECT_EQ(b.rank(), 10);
  EXPECT_EQ(b.dimension(), 10);
  const MatrixXd qtq = b.Q().transpose() * b.Q();
  EXPECT_LT((qtq - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ThinPlate, TwoDimensionalUsesLogKernel) {
  Rng rng(3);
  const MatrixXd w = uniform_points(40, 2, rng);
  auto b = build_thin_plate(w, 8, rng);
  const MatrixXd &k = b.functions().knots();
  ASSERT_EQ(k.rows(), 5);
  const double r = (w.row(4) - k.row(2)).norm();
  EXPECT_NEAR(b.B()(4, 3 + 2), r * r * std::log(r), 1e-12);
}

TEST(ThinPlate, DimensionErrors) {
  Rng rng(1);
  const MatrixXd w = uniform_points(5, 1, rng);
  EXPECT_THROW(build_thin_plate(w, 6, rng), DimensionError);
  EXPECT_THROW(build_thin_plate(w, 2, rng), DimensionError);
}

TEST(ThinPlate, DuplicatePointsReduceK) {
  Rng rng(1);
  MatrixXd w(10, 1);
  w << 0, 0, 0, 0, 0, 1, 1, 1, 1, 1;
  auto b = build_thin_plate(w, 6, rng);
  EXPECT_LT(b.dimension(), 6);
  EXPECT_EQ(b.requested_dimension(), 6);
  EXPECT_TRUE(b.reduced());
}

TEST(ThinPlate, SuppliedKnotsMustBeDistinct) {
  Rng rng(1);
  const MatrixXd w = uniform_points(20, 1, rng);
  MatrixXd knots(2, 1);
  knots << 0.5, 0.5;
  EXPECT_THROW(build_thin_plate(w, 4, rng, knots), InputError);
}

TEST(NaturalSpline, TwoKnotsIsLinear) {
  Rng rng(2);
  const VectorXd x = uniform_points(30, 1, rng).col(0);
  auto b = build_natural_spline(x, 2);
  ASSERT_EQ(b.dimension(), 2);
  for (Index i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(b.B()(i, 0), 1.0);
    EXPECT_DOUBLE_EQ(b.B()(i, 1), x(i));
  }
}

TEST(NaturalSpline, ContinuousAtBoundaryKnots) {
  Rng rng(5);
  const VectorXd x = uniform_points(100, 1, rng).col(0);
  auto b = build_natural_spline(x, 5);
  const VectorXd knots = b.functions().knots();
  for (double edge : {knots(0), knots(knots.size() - 1)}) {
    MatrixXd pts(3, 1);
    pts << edge - 1e-12, edge, edge + 1e-12;
    const MatrixXd v = b.evaluate(pts);
    EXPECT_LT((v.row(0) - v.row(1)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((v.row(2) - v.row(1)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(NaturalSpline, LinearBeyondBoundary) {
  Rng rng(5);
  const VectorXd x = uniform_points(100, 1, rng).col(0);
  auto b = build_natural_spline(x, 6);
  const double hi = b.functions().knots().maxCoeff();
  MatrixXd pts(3, 1);
  pts << hi + 1.0, hi + 2.0, hi + 3.0;
  const MatrixXd v = b.evaluate(pts);
  // second differences vanish when the basis is linear
  EXPECT_LT((v.row(0) - 2.0 * v.row(1) + v.row(2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NaturalSpline, FourKnotsFullRank) {
  Rng rng(11);
  auto b = build_natural_spline(uniform_points(200, 1, rng).col(0), 4);
  EXPECT_EQ(b.rank(), 4);
}

TEST(NaturalSpline, TooFewDistinctValues) {
  VectorXd x(6);
  x << 1, 1, 2, 2, 3, 3;
  EXPECT_THROW(build_natural_spline(x, 4), DimensionError);
  EXPECT_THROW(build_natural_spline(x, 1), DimensionError);
}

TEST(TensorPoly, GradedMonomials) {
  MatrixXd p(1, 2);
  p << 2.0, 3.0;
  const MatrixXd v = BasisFunctions::tensor_poly(2, 6).evaluate(p);
  Eigen::RowVectorXd expected(6);
  expected << 1, 2, 3, 4, 6, 9;
  EXPECT_LT((v.row(0) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Project, MeanProjection) {
  MatrixXd ones = MatrixXd::Ones(2, 1);
  BasisDesign b(BasisFunctions::tensor_poly(1, 1), MatrixXd::Zero(2, 1));
  ASSERT_LT((b.B() - ones).norm(), 1e-15);
  VectorXd t(2);
  t << 1.0, 3.0;
  const VectorXd f = b.project(t);
  EXPECT_NEAR(f(0), 2.0, 1e-14);
  EXPECT_NEAR(f(1), 2.0, 1e-14);
}

TEST(Project, SaturatedBasisIsIdentity) {
  Rng rng(4);
  const MatrixXd w = uniform_points(8, 1, rng);
  auto b = build_tensor_poly(w, 8);
  const MatrixXd t = uniform_points(8, 3, rng);
  EXPECT_LT((b.project(t) - t).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Project, Idempotent) {
  Rng rng(9);
  const MatrixXd w = uniform_points(60, 1, rng);
  auto b = build_thin_plate(w, 7, rng);
  const VectorXd inside = b.B() * VectorXd::LinSpaced(7, -1.0, 2.0);
  EXPECT_LT((b.project(inside) - inside).cwiseAbs().maxCoeff(), 1e-10);
  const MatrixXd t = uniform_points(60, 2, rng);
  const MatrixXd once = b.project(t);
  EXPECT_LT((b.project(once) - once).cwiseAbs().maxCoeff(), 1e-10);
  // residual orthogonal to the basis
  EXPECT_LT((b.B().transpose() * (t - once)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Project, RidgeRouteOnRankDeficientBasis) {
  Rng rng(12);
  MatrixXd w = uniform_points(30, 1, rng);
  for (Index i = 0; i < 30; ++i) w(i, 0) = std::round(w(i, 0) * 2.0); // three support points
  BasisDesign b(BasisFunctions::tensor_poly(1, 5), w);
  EXPECT_LT(b.rank(), 5);
  EXPECT_GT(b.ridge(), 0.0);
  const VectorXd t = uniform_points(30, 1, rng).col(0);
  const MatrixXd &B = b.B();
  const MatrixXd lhs = B.transpose() * B + 30.0 * b.ridge() * MatrixXd::Identity(5, 5);
  const VectorXd expected = B * lhs.ldlt().solve(B.transpose() * t);
  EXPECT_LT((b.project(t) - expected).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Project, RejectsNonFiniteTargets) {
  Rng rng(1);
  auto b = build_thin_plate(uniform_points(10, 1, rng), 4, rng);
  VectorXd t = VectorXd::Zero(10);
  t(3) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(b.project(t), InputError);
  EXPECT_THROW(b.project(VectorXd(VectorXd::Zero(9))), DimensionError);
}

TEST(Gram, SymmetricPsd) {
  Rng rng(6);
  auto b = build_thin_plate(uniform_points(40, 2, rng), 9, rng);
  const MatrixXd &g = b.gram();
  EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
}
