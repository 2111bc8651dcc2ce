#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "pwls/hetero.hpp"
#include "pwls/pipeline.hpp"
#include "pwls/simbench.hpp"

using namespace pwls;

namespace {

Matrix random_design(Index n, Index q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, q);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < q; ++j) z(i, j) = j == 0 ? 1.0 : normal(rng);
  }
  return z;
}

SolverConfig tight() {
  SolverConfig c;
  c.epsilon = 1e-13;
  c.max_iter = 20000;
  return c;
}

}  // namespace

TEST(GKind, EvaluationAndNames) {
  EXPECT_EQ(g_eval(GKind::Absolute, -2.0), 2.0);
  EXPECT_NEAR(g_eval(GKind::ExpAbsolute, -1.0), std::exp(1.0), 1e-15);
  EXPECT_EQ(g_eval(GKind::SqrtAbsolute, -4.0), 2.0);
  EXPECT_EQ(g_eval(GKind::Identity, -4.0), -4.0);
  for (GKind k : {GKind::Absolute, GKind::ExpAbsolute, GKind::SqrtAbsolute, GKind::Identity}) {
    EXPECT_EQ(parse_g_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_g_kind("cubic"), Error);
}

TEST(GKind, DerivativesMatchFiniteDifferences) {
  const double h = 1e-6;
  for (GKind k : {GKind::Absolute, GKind::ExpAbsolute, GKind::SqrtAbsolute, GKind::Identity}) {
    for (double v : {-2.5, -0.3, 0.4, 1.7}) {
      const double fd = (g_eval(k, v + h) - g_eval(k, v - h)) / (2.0 * h);
      EXPECT_NEAR(g_deriv(k, v), fd, 1e-5);
    }
  }
}

TEST(VarianceModel, EvaluateFloorsAtZero) {
  Matrix x(3, 1);
  x << 0.0, 2.0, -1.0;
  const VarianceModel m{GKind::Absolute, (Vector(2) << 0.0, 1.0).finished(), {true, {0}}};
  const Vector g = m.evaluate(x);
  EXPECT_EQ(g(0), kVarianceFloor);
  EXPECT_EQ(g(1), 2.0);
  EXPECT_EQ(g(2), 1.0);
}

TEST(VarianceFit, IdentityIsOls) {
  const Matrix z = random_design(60, 3, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  Vector r(60);
  for (Index i = 0; i < 60; ++i) r(i) = u(rng);
  const Vector theta = variance_fit(z, r, GKind::Identity, Vector::Zero(3));
  EXPECT_LT((theta - ols_solve(z, r)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(VarianceFit, NoiselessRecoveryUpToSign) {
  const Matrix z = random_design(200, 2, 3);
  const Vector truth = (Vector(2) << 1.0, 0.7).finished();
  const Vector r = (z * truth).cwiseAbs();
  const Vector theta = variance_fit(z, r, GKind::Absolute, (Vector(2) << 1.0, 0.0).finished());
  const double gap = std::min((theta - truth).cwiseAbs().maxCoeff(),
                              (theta + truth).cwiseAbs().maxCoeff());
  EXPECT_LT(gap, 1e-3);
  EXPECT_LT(variance_objective(z, r, GKind::Absolute, theta), 1e-8);
}

TEST(VarianceFit, ConstantResponseInterceptOnly) {
  const Matrix z = Matrix::Ones(25, 1);
  const Vector r = Vector::Constant(25, 3.0);
  const Vector theta = variance_fit(z, r, GKind::Absolute, Vector::Ones(1));
  EXPECT_NEAR(std::abs(theta(0)), 3.0, 1e-8);
}

TEST(VarianceFit, NeverWorseThanStart) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Matrix z = random_design(80, 2, seed);
    std::mt19937_64 rng(seed + 50);
    std::exponential_distribution<double> e(1.0);
    Vector r(80);
    for (Index i = 0; i < 80; ++i) r(i) = e(rng) * (1.0 + std::abs(z(i, 1)));
    for (GKind k : {GKind::Absolute, GKind::ExpAbsolute, GKind::SqrtAbsolute}) {
      const Vector start = (Vector(2) << 1.0, 0.0).finished();
      const Vector theta = variance_fit(z, r, k, start);
      EXPECT_LE(variance_objective(z, r, k, theta), variance_objective(z, r, k, start));
    }
  }
}

TEST(VarianceFit, RejectsBadInput) {
  const Matrix z = Matrix::Ones(4, 1);
  EXPECT_THROW(variance_fit(z, -Vector::Ones(4), GKind::Absolute, Vector::Ones(1)), Error);
  EXPECT_THROW(variance_fit(z, Vector::Ones(3), GKind::Absolute, Vector::Ones(1)), Error);
  EXPECT_THROW(variance_fit(z, Vector::Ones(4), GKind::Absolute, Vector::Ones(2)), Error);
}

TEST(Hpwls, IdentityUnitVarianceReducesToPlainFit) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = fixtures::gaussian(40, 3, 3, 7.0, seed);
    const VarianceModel unit{GKind::Identity, Vector::Ones(1), ZSpec::intercept_only()};
    const PenaltyScales s = adaptive_scales(initial_estimates(d).w0);
    const Vector b0 = ols_solve(d);
    const HpwlsFit h = hpwls_refit(d, unit, s, 0.3, b0, Vector::Ones(40));
    const PwlsFit f = fit(d, 0.3, s, b0, Vector::Ones(40));
    EXPECT_EQ(h.flagged(), f.flagged);
    EXPECT_LT((h.beta() - f.beta).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Hpwls, ConstantVarianceMatchesRescaledLambda) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dataset d = fixtures::gaussian(60, 3, 3, 8.0, seed);
    HpwlsOptions opt;
    opt.z = ZSpec::intercept_only();
    opt.g = GKind::Absolute;
    const PenaltyScales s = adaptive_scales(initial_estimates(d).w0);
    const double lambda = 0.05;
    const HpwlsFit h = hpwls_fit(d, opt, s, lambda, tight());
    const double theta = std::abs(h.variance.theta(0));
    EXPECT_GT(theta, 0.0);
    EXPECT_LT((h.g_values.array() - theta).abs().maxCoeff(), 1e-12);  // constant variance
    const PwlsFit plain = fit(d, lambda * theta * theta, s, h.beta_homo, Vector::Ones(60), tight());
    EXPECT_EQ(h.flagged(), plain.flagged) << "seed " << seed;
    EXPECT_LT((h.beta() - plain.beta).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Hpwls, StepThreeFixedPoint) {
  sim::HeteroSimConfig cfg;
  cfg.n = 200;
  cfg.p = 3;
  cfg.k = 5;
  cfg.seed = 7;
  const sim::SimulatedHetero s = sim::gen_hetero(cfg);
  HpwlsOptions opt;
  opt.z = ZSpec::intercept_plus_last(3);
  const PenaltyScales scales = adaptive_scales(initial_estimates(s.data).w0);
  const double lambda = 0.02;
  const HpwlsFit h = hpwls_fit(s.data, opt, scales, lambda, tight());
  const Vector r = s.data.y() - s.data.x() * h.beta();
  for (Index i = 0; i < 200; ++i) {
    const double t = std::sqrt(0.5 * lambda * scales.varpi(i));
    const double scaled = std::abs(r(i)) / h.g_values(i);
    EXPECT_NEAR(h.w()(i), scaled > t ? t / scaled : 1.0, 1e-12);
  }
  const Vector rw = (h.w().array() / h.g_values.array()).square();
  EXPECT_LT((ols_solve(s.data, rw) - h.beta()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Hpwls, FlooredVarianceCompletes) {
  const Dataset d = fixtures::gaussian(30, 2, 2, 6.0, 3);
  Matrix x = d.x();
  x(4, 1) = 0.0;
  const Dataset dz(x, d.y());
  const VarianceModel m{GKind::Absolute, (Vector(1) << 1.0).finished(), {false, {1}}};
  const HpwlsFit h =
      hpwls_refit(dz, m, PenaltyScales::uniform(30), 0.5, ols_solve(dz), Vector::Ones(30));
  EXPECT_EQ(h.g_values(4), kVarianceFloor);
  EXPECT_TRUE(h.beta().allFinite());
  EXPECT_TRUE(h.w().allFinite());
}

TEST(HpwlsPath, TopFlagsNothingAndScaledData) {
  sim::HeteroSimConfig cfg;
  cfg.n = 300;
  cfg.p = 4;
  cfg.k = 6;
  cfg.seed = 11;
  const sim::SimulatedHetero s = sim::gen_hetero(cfg);
  HpwlsOptions opt;
  opt.z = ZSpec::intercept_plus_last(4);
  const HpwlsPath hp = hpwls_path(s.data, opt);
  EXPECT_TRUE(hp.run.path.fits.front().flagged.empty());
  EXPECT_NEAR(hp.run.path.lambdas(0), lambda_max(hp.scaled, hp.run.scales.varpi),
              1e-12 * hp.run.path.lambdas(0));
  for (Index i = 0; i < 300; ++i) {
    EXPECT_NEAR(hp.scaled.y()(i) * hp.g_values(i), s.data.y()(i), 1e-10 * (1 + std::abs(s.data.y()(i))));
  }
  EXPECT_EQ(hp.g_values, hp.variance.evaluate(s.data.x()));
}

TEST(HpwlsPath, WarmChainMatchesColdStarts) {
  sim::HeteroSimConfig cfg;
  cfg.n = 50;
  cfg.p = 2;
  cfg.k = 3;
  cfg.seed = 5;
  const sim::SimulatedHetero s = sim::gen_hetero(cfg);
  HpwlsOptions opt;
  opt.z = ZSpec::intercept_plus_last(2);
  const HpwlsPath hp = hpwls_path(s.data, opt);
  const SolutionPath& path = hp.run.path;
  for (std::size_t k = 0; k < path.fits.size(); ++k) {
    const PwlsFit cold = fit(hp.scaled, path.fits[k].lambda, path.scales, ols_solve(hp.scaled),
                             Vector::Ones(50));
    EXPECT_NEAR(cold.objective, path.fits[k].objective, 1e-6 * (1.0 + cold.objective))
        << "grid point " << k;
  }
}
