#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"
#include "pwls/robust_init.hpp"

namespace pwls {

struct SolverConfig {
  double epsilon = 1e-6;  // stop when ||w_j - w_{j-1}||_inf < epsilon
  int max_iter = 500;
  int grid_size = 100;
  double lambda_min_rule = 0.5;  // flagged fraction that ends the grid

  void validate() const {
    require(epsilon > 0.0, "SolverConfig: epsilon must be positive");
    require(max_iter >= 1, "SolverConfig: max_iter must be >= 1");
    require(grid_size >= 2, "SolverConfig: grid_size must be >= 2");
    require(lambda_min_rule > 0.0 && lambda_min_rule < 1.0,
            "SolverConfig: lambda_min_rule must lie in (0, 1)");
  }
};

// Per-observation penalty multipliers. `cap` stands in for 1/0.
struct PenaltyScales {
  Vector varpi;
  double cap = 999.0;

  static PenaltyScales uniform(Index n) { return {Vector::Ones(n), 999.0}; }
};

struct PwlsFit {
  Vector beta;
  Vector w;
  Vector residuals;
  std::vector<Index> flagged;  // 0-based, ascending
  double objective = 0.0;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
  double sigma2 = 0.0;
  // Objective after the initial point and after every completed sweep.
  std::vector<double> objective_trace;
};

struct SolutionPath {
  Vector lambdas;  // strictly decreasing
  std::vector<PwlsFit> fits;
  PenaltyScales scales;
};

/// Exact minimizer of w^2 r^2 + lambda_i |log w| over w in (0, 1].
/// A residual sitting exactly on the threshold keeps weight 1.
inline double w_update(double residual, double lambda_i) {
  const double threshold = std::sqrt(0.5 * lambda_i);
  const double mag = std::abs(residual);
  return mag > threshold ? threshold / mag : 1.0;
}

/// PWLS objective with optional loss multipliers omega (perturbed form).
inline double pwls_objective(const Vector& residuals, const Vector& w, double lambda,
                             const Vector& varpi, const Vector* omega = nullptr) {
  double loss = 0.0;
  double penalty = 0.0;
  for (Index i = 0; i < residuals.size(); ++i) {
    const double wr = w(i) * residuals(i);
    loss += (omega ? (*omega)(i) : 1.0) * wr * wr;
    penalty += varpi(i) * std::abs(std::log(w(i)));
  }
  return loss + lambda * penalty;
}

inline std::vector<Index> flagged_set(const Vector& w) {
  std::vector<Index> out;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) < 1.0) out.push_back(i);
  }
  return out;
}

namespace detail {

// Alternating minimization shared by the plain and perturbed fits. With omega
// given, the loss is sum omega_i w_i^2 r_i^2 and the flag threshold becomes
// sqrt(lambda varpi_i / (2 omega_i)).
inline PwlsFit alternate(const Dataset& data, double lambda, const Vector& varpi,
                         const Vector& init_beta, const Vector& init_w,
                         const SolverConfig& config, const Vector* omega) {
  config.validate();
  const Index n = data.n();
  const Index p = data.p();
  require(lambda > 0.0 && std::isfinite(lambda), "fit: lambda must be positive");
  require(varpi.size() == n, "fit: varpi length differs from n");
  require(init_beta.size() == p, "fit: init_beta length differs from p");
  require(init_w.size() == n, "fit: init_w length differs from n");
  require((init_w.array() > 0.0).all() && (init_w.array() <= 1.0).all(),
          "fit: init_w entries must lie in (0, 1]");
  if (omega) {
    require(omega->size() == n && (omega->array() > 0.0).all() && omega->allFinite(),
            "fit: omega must be positive and finite");
  }

  Vector thresholds(n);
  for (Index i = 0; i < n; ++i) {
    const double om = omega ? (*omega)(i) : 1.0;
    thresholds(i) = std::sqrt(0.5 * lambda * varpi(i) / om);
  }

  PwlsFit fit;
  fit.lambda = lambda;
  Vector w = init_w;
  Vector beta = init_beta;
  Vector r = data.y() - data.x() * beta;
  fit.objective_trace.push_back(pwls_objective(r, w, lambda, varpi, omega));

  Vector row_weights(n);
  Vector w_next(n);
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    row_weights = w.array().square();
    if (omega) row_weights.array() *= omega->array();
    try {
      beta = ols_solve(data.x(), data.y(), row_weights);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularDesign) throw;
      fail(ErrorCode::DegenerateWeighting,
           "degenerate weighting: weighted design singular at iteration " +
               std::to_string(iter));
    }
    r = data.y() - data.x() * beta;
    for (Index i = 0; i < n; ++i) {
      const double mag = std::abs(r(i));
      w_next(i) = mag > thresholds(i) ? thresholds(i) / mag : 1.0;
    }
    const double change = (w_next - w).cwiseAbs().maxCoeff();
    w.swap(w_next);
    fit.iterations = iter;
    fit.objective_trace.push_back(pwls_objective(r, w, lambda, varpi, omega));
    if (change < config.epsilon) {
      fit.converged = true;
      break;
    }
  }

  fit.beta = std::move(beta);
  fit.residuals = std::move(r);
  fit.w = std::move(w);
  fit.flagged = flagged_set(fit.w);
  fit.objective = fit.objective_trace.back();
  fit.sigma2 = (fit.w.array() * fit.residuals.array()).square().sum() /
               static_cast<double>(n - p);
  return fit;
}

}  // namespace detail

/**
 * Alternating minimization of sum w_i^2 r_i^2 + lambda sum varpi_i |log w_i|.
 *
 * Each sweep solves the weighted least squares for beta at the current w and
 * then applies the closed-form w update to the new residuals, so the objective
 * never increases. The returned w is computed from the returned residuals.
 * Hitting max_iter is not an error; check `converged`.
 */
inline PwlsFit fit(const Dataset& data, double lambda, const PenaltyScales& scales,
                   const Vector& init_beta, const Vector& init_w,
                   const SolverConfig& config = {}) {
  return detail::alternate(data, lambda, scales.varpi, init_beta, init_w, config, nullptr);
}

/// varpi_i = 1/|log w0_i|, capped; a unit initial weight maps to the cap.
inline PenaltyScales adaptive_scales(const Vector& w0, double cap = 999.0) {
  require((w0.array() > 0.0).all() && (w0.array() <= 1.0).all(),
          "adaptive_scales: w0 entries must lie in (0, 1]");
  PenaltyScales scales{Vector(w0.size()), cap};
  for (Index i = 0; i < w0.size(); ++i) {
    const double mag = std::abs(std::log(w0(i)));
    scales.varpi(i) = (mag == 0.0 || 1.0 / mag > cap) ? cap : 1.0 / mag;
  }
  return scales;
}

struct InitialEstimates {
  Vector beta0;
  Vector w0;
  double lambda0 = 0.0;
};

/// lambda0 = ||r||^2 / (n - p) and w0_i = min(1, lambda0 / r_i^2); w0_i = 1 when r_i = 0.
inline std::pair<double, Vector> pilot_weights(const Vector& r, Index p) {
  require(r.size() > p, "pilot_weights: need n > p");
  const double lambda0 = r.squaredNorm() / static_cast<double>(r.size() - p);
  Vector w0 = Vector::Ones(r.size());
  for (Index i = 0; i < r.size(); ++i) {
    const double r2 = r(i) * r(i);
    if (r2 > lambda0) w0(i) = lambda0 / r2;
  }
  return {lambda0, std::move(w0)};
}

/// Robust pilot fit and the pilot weights of its residuals.
inline InitialEstimates initial_estimates(const Dataset& data,
                                          const RobustInitOptions& opt = {}) {
  InitialEstimates out;
  out.beta0 = robust_pilot(data, opt);
  Vector r = data.y() - data.x() * out.beta0;
  // rounding-level residuals of an exact fit count as zero
  if (r.norm() <= 1e-12 * data.y().norm()) r.setZero();
  auto [lambda0, w0] = pilot_weights(r, data.p());
  out.lambda0 = lambda0;
  out.w0 = std::move(w0);
  return out;
}

struct MultistartOptions {
  int max_subsets = 500;  // all p-row elemental fits when C(n, p) fits, else a random sample
  std::uint64_t seed = 0x2468aceULL;
};

namespace detail {

// Elemental starts: index sets of size p, exhaustive when few enough.
inline std::vector<std::vector<Index>> elemental_sets(Index n, Index p, const MultistartOptions& opt) {
  double count = 1.0;
  for (Index k = 0; k < p; ++k) count = count * static_cast<double>(n - k) / static_cast<double>(k + 1);
  std::vector<std::vector<Index>> out;
  if (count <= static_cast<double>(opt.max_subsets)) {
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), Index{0});
    while (true) {
      out.push_back(idx);
      Index k = p - 1;
      while (k >= 0 && idx[static_cast<std::size_t>(k)] == n - p + k) --k;
      if (k < 0) break;
      ++idx[static_cast<std::size_t>(k)];
      for (Index j = k + 1; j < p; ++j) {
        idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
      }
    }
    return out;
  }
  std::mt19937_64 rng(opt.seed);
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  for (int s = 0; s < opt.max_subsets; ++s) {
    std::shuffle(all.begin(), all.end(), rng);
    out.emplace_back(all.begin(), all.begin() + p);
  }
  return out;
}

}  // namespace detail

/**
 * Global search for small problems: the alternating solver run from the OLS
 * fit, the robust pilot and elemental p-row fits, each start paired with the
 * closed-form w of its residuals. Returns the lowest objective (first on ties).
 */
inline PwlsFit multistart_fit(const Dataset& data, double lambda, const PenaltyScales& scales,
                              const SolverConfig& config = {},
                              const MultistartOptions& opt = {}) {
  const Index n = data.n();
  const Index p = data.p();
  std::vector<Vector> starts{ols_solve(data), robust_pilot(data)};
  for (const auto& set : detail::elemental_sets(n, p, opt)) {
    Vector indicator = Vector::Zero(n);
    for (Index i : set) indicator(i) = 1.0;
    try {
      starts.push_back(ols_solve(data, indicator));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularDesign) throw;
    }
  }

  std::optional<PwlsFit> best;
  Vector w(n);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const Vector r = data.y() - data.x() * starts[k];
    if (k == 0) {
      w.setOnes();  // plain OLS start
    } else {
      for (Index i = 0; i < n; ++i) w(i) = std::max(w_update(r(i), lambda * scales.varpi(i)), 1e-300);
    }
    try {
      PwlsFit f = fit(data, lambda, scales, starts[k], w, config);
      if (!best || f.objective < best->objective) best = std::move(f);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateWeighting) throw;
    }
  }
  if (!best) fail(ErrorCode::DegenerateWeighting, "degenerate weighting: every start failed");
  return std::move(*best);
}

inline double flagged_fraction(const PwlsFit& f) {
  return static_cast<double>(f.flagged.size()) / static_cast<double>(f.w.size());
}

/// `count` points from hi down to lo, equally spaced on the log scale.
inline Vector log_grid(double hi, double lo, int count) {
  require(hi > lo && lo > 0.0 && count >= 2, "log_grid: need hi > lo > 0, count >= 2");
  Vector grid(count);
  const double a = std::log(hi);
  const double b = std::log(lo);
  for (int k = 0; k < count; ++k) {
    grid(k) = std::exp(a + (b - a) * k / (count - 1));
  }
  grid(0) = hi;
  grid(count - 1) = lo;
  return grid;
}

namespace detail {

inline std::string lambda_context(double lambda, const std::string& what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", lambda);
  return what + " (lambda=" + buf + ")";
}

template <typename FitFn>
PwlsFit annotate(double lambda, FitFn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), lambda_context(lambda, e.what()));
  }
}

}  // namespace detail

/// Halve from lambda_top until the flagged fraction first reaches `rule`.
inline double find_lambda_min(const Dataset& data, double lambda_top,
                              const PenaltyScales& scales, const SolverConfig& config) {
  Vector beta = ols_solve(data);
  Vector w = Vector::Ones(data.n());
  double lambda = lambda_top;
  for (int halving = 0; halving < 200; ++halving) {
    lambda *= 0.5;
    PwlsFit f = detail::annotate(lambda, [&] { return fit(data, lambda, scales, beta, w, config); });
    if (flagged_fraction(f) >= config.lambda_min_rule) return lambda;
    beta = std::move(f.beta);
    w = std::move(f.w);
  }
  fail(ErrorCode::LambdaSearchFailed,
       "lambda_min search failed: flagged fraction never reached the rule");
}

/// Warm-started fits over a given decreasing grid, starting from OLS with unit weights.
inline SolutionPath path_over(const Dataset& data, const Vector& lambdas,
                              const PenaltyScales& scales, const SolverConfig& config = {}) {
  SolutionPath path;
  path.lambdas = lambdas;
  path.scales = scales;
  path.fits.reserve(static_cast<std::size_t>(lambdas.size()));
  Vector beta = ols_solve(data);
  Vector w = Vector::Ones(data.n());
  for (Index k = 0; k < lambdas.size(); ++k) {
    require(k == 0 || lambdas(k) < lambdas(k - 1), "path: lambdas must strictly decrease");
    const double lambda = lambdas(k);
    path.fits.push_back(
        detail::annotate(lambda, [&] { return fit(data, lambda, scales, beta, w, config); }));
    beta = path.fits.back().beta;
    w = path.fits.back().w;
  }
  return path;
}

/**
 * Fits over a log-spaced grid from the smallest lambda at which the OLS fit
 * flags nothing (lambda_max carried to the penalty scale) down to the first
 * halving that flags lambda_min_rule of the observations. Each fit is
 * warm-started from the previous grid point.
 */
inline SolutionPath solution_path(const Dataset& data, const PenaltyScales& scales,
                                  const SolverConfig& config = {}) {
  config.validate();
  require(scales.varpi.size() == data.n(), "solution_path: varpi length differs from n");
  const double top = lambda_max(data, scales.varpi);
  if (!(top > 0.0)) {
    fail(ErrorCode::InvalidArgument, "solution_path: response lies in the column space of X");
  }
  const double bottom = find_lambda_min(data, top, scales, config);
  return path_over(data, log_grid(top, bottom, config.grid_size), scales, config);
}

}  // namespace pwls
