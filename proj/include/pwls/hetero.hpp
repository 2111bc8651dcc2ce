#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"
#include "pwls/pipeline.hpp"
#include "pwls/solver.hpp"
#include "pwls/tuning.hpp"

namespace pwls {

// Floor applied to every variance-function value before it divides anything.
inline constexpr double kVarianceFloor = 1e-6;

enum class GKind { Absolute, ExpAbsolute, SqrtAbsolute, Identity };

inline const char* to_string(GKind kind) {
  switch (kind) {
    case GKind::Absolute: return "abs";
    case GKind::ExpAbsolute: return "exp-abs";
    case GKind::SqrtAbsolute: return "sqrt-abs";
    case GKind::Identity: return "identity";
  }
  return "unknown";
}

inline GKind parse_g_kind(const std::string& name) {
  if (name == "abs") return GKind::Absolute;
  if (name == "exp-abs") return GKind::ExpAbsolute;
  if (name == "sqrt-abs") return GKind::SqrtAbsolute;
  if (name == "identity") return GKind::Identity;
  fail(ErrorCode::InvalidArgument, "unknown variance function '" + name + "'");
}

inline double g_eval(GKind kind, double v) {
  switch (kind) {
    case GKind::Absolute: return std::abs(v);
    case GKind::ExpAbsolute: return std::exp(std::abs(v));
    case GKind::SqrtAbsolute: return std::sqrt(std::abs(v));
    case GKind::Identity: return v;
  }
  return v;
}

// Derivative, with sign(0) taken as +1 so a start on the kink can move.
inline double g_deriv(GKind kind, double v) {
  const double sign = v < 0.0 ? -1.0 : 1.0;
  switch (kind) {
    case GKind::Absolute: return sign;
    case GKind::ExpAbsolute: return sign * std::exp(std::abs(v));
    case GKind::SqrtAbsolute: return sign / (2.0 * std::sqrt(std::max(std::abs(v), kVarianceFloor)));
    case GKind::Identity: return 1.0;
  }
  return 1.0;
}

// Which covariates enter the variance function: optional intercept plus
// 0-based columns of X.
struct ZSpec {
  bool intercept = true;
  std::vector<Index> columns;

  static ZSpec intercept_plus_last(Index p) { return {true, {p - 1}}; }
  static ZSpec intercept_only() { return {true, {}}; }
};

inline Matrix build_z(const Matrix& x, const ZSpec& spec) {
  const Index q = (spec.intercept ? 1 : 0) + static_cast<Index>(spec.columns.size());
  require(q >= 1, "ZSpec: selects no variance covariates");
  Matrix z(x.rows(), q);
  Index col = 0;
  if (spec.intercept) z.col(col++).setOnes();
  for (Index c : spec.columns) {
    require(c >= 0 && c < x.cols(), "ZSpec: column out of range");
    z.col(col++) = x.col(c);
  }
  return z;
}

struct VarianceModel {
  GKind kind = GKind::Absolute;
  Vector theta;
  ZSpec z;

  /// g(z_i' theta), floored.
  Vector evaluate(const Matrix& x) const {
    const Vector v = build_z(x, z) * theta;
    return v.unaryExpr([this](double t) { return std::max(g_eval(kind, t), kVarianceFloor); });
  }
};

struct VarianceFitOptions {
  int max_iter = 200;
  int max_halvings = 30;
  double grad_tol = 1e-10;
  int restarts = 5;
  std::uint64_t seed = 0x5eedULL;
};

inline double variance_objective(const Matrix& z, const Vector& r, GKind kind, const Vector& theta) {
  const Vector v = z * theta;
  double total = 0.0;
  for (Index i = 0; i < r.size(); ++i) {
    const double e = r(i) - g_eval(kind, v(i));
    total += e * e;
  }
  return total;
}

namespace detail {

struct GnResult {
  Vector theta;
  double objective = std::numeric_limits<double>::infinity();
};

// Damped Gauss-Newton from one start. Stops on a small gradient, on a step
// that no halving can make decrease the objective, or at max_iter.
inline GnResult gauss_newton(const Matrix& z, const Vector& r, GKind kind, Vector theta,
                             const VarianceFitOptions& opt) {
  GnResult out{theta, variance_objective(z, r, kind, theta)};
  if (!std::isfinite(out.objective)) return out;
  Matrix jac(z.rows(), z.cols());
  Vector resid(z.rows());
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const Vector v = z * theta;
    for (Index i = 0; i < z.rows(); ++i) {
      resid(i) = r(i) - g_eval(kind, v(i));
      jac.row(i) = g_deriv(kind, v(i)) * z.row(i);
    }
    if (!jac.allFinite() || !resid.allFinite()) break;
    const Vector grad = jac.transpose() * resid;
    if (grad.norm() < opt.grad_tol) break;
    const Vector step = jac.colPivHouseholderQr().solve(resid);
    if (!step.allFinite()) break;

    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h <= opt.max_halvings; ++h, scale *= 0.5) {
      const Vector trial = theta + scale * step;
      const double obj = variance_objective(z, r, kind, trial);
      if (std::isfinite(obj) && obj < out.objective) {
        theta = trial;
        out = {trial, obj};
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return out;
}

}  // namespace detail

/**
 * argmin_theta sum_i (R_i - g(z_i' theta))^2.
 *
 * Gauss-Newton with step halving, run from init_theta and from `restarts`
 * random perturbations of it (scale 0.5 ||init||, or 0.5 for a zero start).
 * Returns the best local minimizer found.
 */
inline Vector variance_fit(const Matrix& z, const Vector& r, GKind kind, const Vector& init_theta,
                           const VarianceFitOptions& opt = {}) {
  require(z.rows() == r.size(), "variance_fit: z rows and R length differ");
  require(z.cols() >= 1 && init_theta.size() == z.cols(),
          "variance_fit: init_theta length differs from q");
  require(r.allFinite() && (r.array() >= 0.0).all(), "variance_fit: R must be finite and >= 0");

  detail::GnResult best = detail::gauss_newton(z, r, kind, init_theta, opt);
  const double norm = init_theta.norm();
  const double spread = norm > 0.0 ? 0.5 * norm : 0.5;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < opt.restarts; ++s) {
    Vector start = init_theta;
    for (Index j = 0; j < start.size(); ++j) start(j) += spread * normal(rng);
    detail::GnResult cand = detail::gauss_newton(z, r, kind, start, opt);
    if (cand.objective < best.objective) best = std::move(cand);
  }
  if (!std::isfinite(best.objective) || !best.theta.allFinite()) {
    fail(ErrorCode::VarianceFitFailed, "variance fit failed: every start diverged");
  }
  return best.theta;
}

/// Rows of X and y divided by g; PWLS on this data is the variance-adjusted objective.
inline Dataset scaled_dataset(const Dataset& data, const Vector& g_values) {
  const Vector inv = g_values.cwiseInverse();
  return Dataset(inv.asDiagonal() * data.x(), inv.cwiseProduct(data.y()));
}

struct HpwlsFit {
  PwlsFit fit;  // residuals and objective are on the g-scaled problem
  VarianceModel variance;
  Vector beta_homo;
  Vector g_values;

  const Vector& beta() const { return fit.beta; }
  const Vector& w() const { return fit.w; }
  const std::vector<Index>& flagged() const { return fit.flagged; }
  double lambda() const { return fit.lambda; }
};

/// Step 3 alone: PWLS with residuals scaled by a given variance model.
inline HpwlsFit hpwls_refit(const Dataset& data, const VarianceModel& variance,
                            const PenaltyScales& scales, double lambda, const Vector& init_beta,
                            const Vector& init_w, const SolverConfig& config = {}) {
  HpwlsFit out;
  out.variance = variance;
  out.g_values = variance.evaluate(data.x());
  const Dataset scaled = scaled_dataset(data, out.g_values);
  out.fit = fit(scaled, lambda, scales, init_beta, init_w, config);
  out.beta_homo = init_beta;
  return out;
}

struct HpwlsOptions {
  ZSpec z;
  GKind g = GKind::Absolute;
  Vector init_theta;  // defaults to (1, 0, ..., 0)
  VarianceFitOptions variance;

  Vector start(Index q) const {
    if (init_theta.size() == q) return init_theta;
    Vector t = Vector::Zero(q);
    t(0) = 1.0;
    return t;
  }
};

inline VarianceModel fit_variance_model(const Dataset& data, const Vector& beta_homo,
                                        const HpwlsOptions& opt) {
  const Matrix z = build_z(data.x(), opt.z);
  const Vector r = (data.y() - data.x() * beta_homo).cwiseAbs();
  return {opt.g, variance_fit(z, r, opt.g, opt.start(z.cols()), opt.variance), opt.z};
}

/**
 * Three-step heteroscedastic fit at a single lambda: homogeneous aPWLS,
 * variance function from its absolute residuals, then the g-scaled refit.
 * The same lambda and scales serve steps 1 and 3.
 */
inline HpwlsFit hpwls_fit(const Dataset& data, const HpwlsOptions& opt,
                          const PenaltyScales& scales, double lambda,
                          const SolverConfig& config = {}) {
  const InitialEstimates init = initial_estimates(data);
  const PwlsFit homo = fit(data, lambda, scales, init.beta0, init.w0, config);
  const VarianceModel variance = fit_variance_model(data, homo.beta, opt);
  HpwlsFit out = hpwls_refit(data, variance, scales, lambda, homo.beta,
                             Vector::Ones(data.n()), config);
  out.beta_homo = homo.beta;
  return out;
}

struct HpwlsPath {
  ApwlsRun homo;  // step 1, BIC-tuned
  VarianceModel variance;
  Vector g_values;
  Dataset scaled;
  ApwlsRun run;  // step 3 on the g-scaled data

  const PwlsFit& selected() const { return run.selected(); }
};

/**
 * Path version: step 1 is a full BIC-tuned aPWLS run, step 2 runs once, and
 * step 3 repeats the aPWLS pipeline (pilot weights, adaptive scales, path,
 * BIC) on the g-scaled data, so lambda_max is taken on scaled residuals.
 */
inline HpwlsPath hpwls_path(const Dataset& data, const HpwlsOptions& opt,
                            const SolverConfig& config = {}) {
  ApwlsRun homo = apwls_bic(data, config);
  VarianceModel variance = fit_variance_model(data, homo.selected().beta, opt);
  Vector g_values = variance.evaluate(data.x());
  Dataset scaled = scaled_dataset(data, g_values);
  ApwlsRun run = apwls_bic(scaled, config);
  return {std::move(homo), std::move(variance), std::move(g_values), std::move(scaled),
          std::move(run)};
}

}  // namespace pwls
