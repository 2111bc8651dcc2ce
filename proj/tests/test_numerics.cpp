#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "pwls/numerics.hpp"

using namespace pwls;

namespace {

Matrix random_matrix(Index n, Index p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(n, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) m(i, j) = normal(rng);
  }
  return m;
}

Vector random_vector(Index n, std::uint64_t seed) { return random_matrix(n, 1, seed).col(0); }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected pwls::Error";
  return ErrorCode::Io;
}

}  // namespace

TEST(Dataset, RejectsBadShapes) {
  EXPECT_EQ(code_of([] { Dataset(Matrix::Ones(2, 2), Vector::Ones(2)); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { Dataset(Matrix::Ones(3, 1), Vector::Ones(2)); }), ErrorCode::InvalidArgument);
  Matrix x = Matrix::Ones(4, 1);
  x(2, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { Dataset(x, Vector::Ones(4)); }), ErrorCode::InvalidArgument);
}

TEST(Dataset, RejectsRankDeficientDesign) {
  Matrix x(5, 2);
  x.col(0) = Vector::LinSpaced(5, 1, 5);
  x.col(1) = 2.0 * x.col(0);
  EXPECT_EQ(code_of([&] { Dataset(x, Vector::Ones(5)); }), ErrorCode::SingularDesign);
}

TEST(OlsSolve, IdentityDesign) {
  const Vector b = ols_solve(Matrix::Identity(2, 2), Vector((Vector(2) << 1, 2).finished()));
  EXPECT_NEAR(b(0), 1.0, 1e-14);
  EXPECT_NEAR(b(1), 2.0, 1e-14);
}

TEST(OlsSolve, InterceptOnlyIsMean) {
  const Dataset d(Matrix::Ones(3, 1), (Vector(3) << 1, 2, 3).finished());
  EXPECT_NEAR(ols_solve(d)(0), 2.0, 1e-14);
}

TEST(OlsSolve, MatchesNormalEquations) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Matrix x = random_matrix(6, 2, seed);
    const Vector y = random_vector(6, seed + 100);
    const Vector oracle = (x.transpose() * x).inverse() * (x.transpose() * y);
    const Vector b = ols_solve(x, y);
    EXPECT_LT((b - oracle).norm() / oracle.norm(), 1e-10);

    Vector w = random_vector(6, seed + 200).cwiseAbs();
    const Vector woracle =
        (x.transpose() * w.asDiagonal() * x).inverse() * (x.transpose() * w.asDiagonal() * y);
    EXPECT_LT((ols_solve(x, y, w) - woracle).norm() / woracle.norm(), 1e-10);
  }
}

TEST(OlsSolve, WeightedResidualsOrthogonalToColumns) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix x = random_matrix(40, 4, seed);
    const Vector y = random_vector(40, seed + 7);
    const Vector w = random_vector(40, seed + 9).cwiseAbs();
    const Vector r = y - x * ols_solve(x, y, w);
    EXPECT_LT((x.transpose() * w.cwiseProduct(r)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(OlsSolve, WeightPreconditions) {
  const Matrix x = random_matrix(5, 2, 3);
  const Vector y = random_vector(5, 4);
  Vector w = Vector::Ones(5);
  w(0) = -1.0;
  EXPECT_EQ(code_of([&] { ols_solve(x, y, w); }), ErrorCode::InvalidArgument);
  w = Vector::Zero(5);
  w(0) = 1.0;
  EXPECT_EQ(code_of([&] { ols_solve(x, y, w); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { ols_solve(x, y, Vector(Vector::Ones(4))); }), ErrorCode::InvalidArgument);
}

TEST(OlsSolve, SingularWeightedDesign) {
  Matrix x(4, 2);
  x << 1, 0, 1, 0, 0, 1, 0, 1;
  Vector w(4);
  w << 1, 1, 0, 0;  // only the first column survives
  EXPECT_EQ(code_of([&] { ols_solve(x, Vector(Vector::Ones(4)), w); }), ErrorCode::SingularDesign);
}

TEST(HatDiag, Examples) {
  EXPECT_TRUE(hat_diag(Matrix(Matrix::Identity(4, 4))).isApprox(Vector::Ones(4), 1e-12));
  EXPECT_TRUE(hat_diag(Matrix(Matrix::Ones(4, 1))).isApprox(Vector::Constant(4, 0.25), 1e-12));
  EXPECT_NEAR(hat_diag(random_matrix(8, 3, 5)).sum(), 3.0, 1e-10);
}

TEST(HatDiag, MatchesExplicitHatMatrixAndBounds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Matrix x = random_matrix(12, 3, seed);
    x.col(0).setOnes();
    const Matrix hat = x * (x.transpose() * x).inverse() * x.transpose();
    const Vector h = hat_diag(x);
    EXPECT_LT((h - hat.diagonal()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(h.sum(), 3.0, 1e-10);
    EXPECT_GE(h.minCoeff(), 1.0 / 12.0 - 1e-12);  // intercept designs
    EXPECT_LE(h.maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(LambdaMax, HandComputedExample) {
  const Dataset d(Matrix::Ones(2, 1), (Vector(2) << 0, 2).finished());
  EXPECT_NEAR(lambda_max(d), std::sqrt(2.0), 1e-14);
}

TEST(LambdaMax, ZeroWhenResponseInColumnSpace) {
  const Matrix x = random_matrix(10, 2, 1);
  const Dataset d(x, x * Vector::Ones(2));
  EXPECT_NEAR(lambda_max(d), 0.0, 1e-12);
}

TEST(LambdaMax, MatchesElementwiseFormula) {
  const Matrix x = random_matrix(10, 2, 2);
  const Vector y = random_vector(10, 3);
  const Matrix ih = Matrix::Identity(10, 10) - x * (x.transpose() * x).inverse() * x.transpose();
  const Vector r = ih * y;
  double oracle = 0.0;
  for (Index i = 0; i < 10; ++i) oracle = std::max(oracle, std::abs(r(i)) / std::sqrt(ih(i, i)));
  EXPECT_NEAR(lambda_max(Dataset(x, y)), oracle, 1e-12 * oracle);
}

TEST(LambdaMax, PermutationInvariant) {
  const Matrix x = random_matrix(15, 3, 4);
  const Vector y = random_vector(15, 5);
  std::vector<Index> perm(15);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(6));
  Matrix xp(15, 3);
  Vector yp(15);
  for (Index i = 0; i < 15; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp(i) = y(perm[static_cast<std::size_t>(i)]);
  }
  EXPECT_NEAR(lambda_max(Dataset(x, y)), lambda_max(Dataset(xp, yp)), 1e-12);
}

TEST(LambdaMax, DegenerateLeverage) {
  Matrix x(3, 2);
  x << 1, 0, 1, 0, 0, 1;  // row 3 alone determines the second coefficient
  const Dataset d(x, (Vector(3) << 1, 2, 3).finished());
  EXPECT_EQ(code_of([&] { lambda_max(d); }), ErrorCode::DegenerateLeverage);
}

TEST(LambdaMax, PenaltyScaleFormFlagsNothingAtOls) {
  const Dataset d = fixtures::gaussian(30, 2, 3, 8.0, 9);
  const Vector varpi = Vector::Constant(30, 0.7);
  const Vector s = standardized_residuals(d);
  const double top = lambda_max(d, varpi);
  EXPECT_NEAR(top, 2.0 * s.cwiseAbs2().maxCoeff() / 0.7, 1e-10 * top);
  EXPECT_NEAR(lambda_max(d, Vector::Ones(30)), 2.0 * std::pow(lambda_max(d), 2), 1e-10 * top);
}
