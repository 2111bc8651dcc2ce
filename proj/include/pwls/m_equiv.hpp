#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"
#include "pwls/robust_init.hpp"
#include "pwls/solver.hpp"

namespace pwls {

// The M-estimation view of PWLS: its implied rho/psi pair, the M-estimator
// with a concomitant scale, and the PWLS problem sharing that scale. The two
// estimators satisfy the same joint KKT system, so their fixed points agree.

struct MConfig {
  double c = 1.0;
  double lambda = 1.0;
  double tol = 1e-8;
  int max_iter = 500;

  void validate() const {
    require(c > 0.0, "MConfig: c must be positive");
    require(lambda > 0.0, "MConfig: lambda must be positive");
    require(tol > 0.0, "MConfig: tol must be positive");
    require(max_iter >= 1, "MConfig: max_iter must be >= 1");
  }
};

struct MFit {
  Vector beta;
  double sigma = 0.0;
  std::vector<Index> flagged;  // |r_i| > sqrt(lambda/2) sigma
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ScaledPwlsFit {
  PwlsFit fit;
  double sigma = 0.0;
};

struct Theorem1Report {
  double beta_gap = 0.0;
  double sigma_gap = 0.0;
  bool pass = false;
};

/// t^2 inside the knot sqrt(lambda/2), logarithmic growth outside. The knot itself is quadratic.
inline double rho(double t, double lambda) {
  const double knot = std::sqrt(0.5 * lambda);
  const double mag = std::abs(t);
  if (mag <= knot) return t * t;
  return lambda * std::log(mag * std::sqrt(2.0 / lambda)) + 0.5 * lambda;
}

/// Derivative of rho: 2t inside the knot, lambda/t (redescending) outside.
inline double psi(double t, double lambda) {
  const double knot = std::sqrt(0.5 * lambda);
  if (std::abs(t) <= knot) return 2.0 * t;
  return lambda / t;
}

inline double m_objective(const Vector& r, double sigma, double lambda, double c) {
  double total = 0.0;
  for (Index i = 0; i < r.size(); ++i) total += rho(r(i) / sigma, lambda);
  return total + 2.0 * c * static_cast<double>(r.size()) * std::log(sigma);
}

inline std::vector<Index> scale_flagged(const Vector& r, double sigma, double lambda) {
  const double cut = std::sqrt(0.5 * lambda) * sigma;
  std::vector<Index> out;
  for (Index i = 0; i < r.size(); ++i) {
    if (std::abs(r(i)) > cut) out.push_back(i);
  }
  return out;
}

/// sigma^2 = ||r over the unflagged||^2 / (cn - (lambda/2) #flagged).
inline double closed_form_sigma2(const Vector& r, double sigma, const MConfig& config) {
  const double cut = std::sqrt(0.5 * config.lambda) * sigma;
  double inlier_ss = 0.0;
  double count = 0.0;
  for (Index i = 0; i < r.size(); ++i) {
    if (std::abs(r(i)) > cut) {
      count += 1.0;
    } else {
      inlier_ss += r(i) * r(i);
    }
  }
  const double denom = config.c * static_cast<double>(r.size()) - 0.5 * config.lambda * count;
  if (!(denom > 0.0)) {
    fail(ErrorCode::ScaleDenominator,
         "scale denominator nonpositive: too many flagged for the chosen c and lambda");
  }
  return inlier_ss / denom;
}

namespace detail {

// Residuals at rounding level of y count as an exact fit.
inline void check_start_scale(double sigma, const Vector& y, double cn) {
  if (!(sigma > 1e-12 * std::sqrt(y.squaredNorm() / cn))) {
    fail(ErrorCode::InvalidArgument, "concomitant scale fit: OLS residuals are all zero");
  }
}

inline void check_scale(double sigma) {
  if (!(sigma > 0.0)) {
    fail(ErrorCode::ScaleDenominator, "concomitant scale collapsed to zero");
  }
}

// At a positive-scale fixed point c n sigma^2 = sum_i min(r_i^2, (lambda/2) sigma^2),
// which is at most n (lambda/2) sigma^2. With c >= lambda/2 the only candidates
// flag every observation and zero the scale denominator.
inline void check_feasible(const MConfig& config) {
  if (!(config.c < 0.5 * config.lambda)) {
    fail(ErrorCode::ScaleDenominator,
         "scale denominator nonpositive: no positive scale solves the estimating equation "
         "unless c < lambda/2");
  }
}

struct ScaleStart {
  Vector beta;
  double sigma = 0.0;
};

// OLS with sigma^2 = ||r||^2/(cn), then the robust pilot and up to 100 elemental
// fits, each at the MAD scale of its residuals. The objective is not convex, so
// each estimator keeps its lowest run.
inline std::vector<ScaleStart> scale_starts(const Dataset& data, const MConfig& config) {
  const double cn = config.c * static_cast<double>(data.n());
  std::vector<ScaleStart> out;
  ScaleStart ols{ols_solve(data), 0.0};
  ols.sigma = std::sqrt((data.y() - data.x() * ols.beta).squaredNorm() / cn);
  check_start_scale(ols.sigma, data.y(), cn);
  out.push_back(std::move(ols));
  std::vector<Vector> betas{robust_pilot(data)};
  MultistartOptions opt;
  opt.max_subsets = 100;
  for (const auto& set : elemental_sets(data.n(), data.p(), opt)) {
    Vector indicator = Vector::Zero(data.n());
    for (Index i : set) indicator(i) = 1.0;
    try {
      betas.push_back(ols_solve(data, indicator));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularDesign) throw;
    }
  }
  for (Vector& b : betas) {
    const double sigma = mad_scale(data.y() - data.x() * b);
    if (sigma > 0.0) out.push_back({std::move(b), sigma});
  }
  return out;
}

// Runs every start; keeps the first run unless a later one is strictly
// lower. A start that hits a nonpositive scale denominator is dropped.
template <class Fit, class Run, class Objective>
Fit best_over_starts(const std::vector<ScaleStart>& starts, Run run, Objective objective) {
  std::optional<Fit> best;
  std::optional<Error> first_error;
  for (const ScaleStart& s : starts) {
    try {
      Fit f = run(s);
      if (!best || objective(f) < objective(*best) - 1e-12 * (1.0 + std::abs(objective(*best)))) {
        best = std::move(f);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ScaleDenominator) throw;
      if (!first_error) first_error = e;
    }
  }
  if (!best) throw *first_error;
  return std::move(*best);
}

inline MFit concomitant_m_from(const Dataset& data, const MConfig& config, const ScaleStart& start) {
  Vector beta = start.beta;
  double sigma = start.sigma;
  Vector r = data.y() - data.x() * beta;

  MFit out;
  Vector weights(data.n());
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    for (Index i = 0; i < r.size(); ++i) {
      const double t = r(i) / sigma;
      weights(i) = t == 0.0 ? 1.0 : psi(t, config.lambda) / (2.0 * t);
    }
    Vector next_beta = ols_solve(data, weights);
    r = data.y() - data.x() * next_beta;
    const double next_sigma = std::sqrt(closed_form_sigma2(r, sigma, config));
    check_scale(next_sigma);
    const double beta_step = (next_beta - beta).cwiseAbs().maxCoeff();
    const double sigma_step = std::abs(next_sigma - sigma);
    beta.swap(next_beta);
    sigma = next_sigma;
    out.iterations = iter;
    if (beta_step < config.tol && sigma_step < config.tol) {
      out.converged = true;
      break;
    }
  }
  out.beta = std::move(beta);
  out.sigma = sigma;
  out.flagged = scale_flagged(r, sigma, config.lambda);
  out.objective = m_objective(r, sigma, config.lambda, config.c);
  return out;
}

inline ScaledPwlsFit pwls_with_scale_from(const Dataset& data, const MConfig& config,
                                          const ScaleStart& start) {
  const Index n = data.n();
  const double cn = config.c * static_cast<double>(n);
  Vector beta = start.beta;
  double sigma = start.sigma;
  Vector r = data.y() - data.x() * beta;

  ScaledPwlsFit out;
  Vector w(n);
  auto refresh_w = [&] {
    for (Index i = 0; i < n; ++i) w(i) = w_update(r(i) / sigma, config.lambda);
  };
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    refresh_w();
    closed_form_sigma2(r, sigma, config);  // same denominator check as the M-estimator
    Vector next_beta = ols_solve(data, Vector(w.array().square()));
    r = data.y() - data.x() * next_beta;
    const double next_sigma = std::sqrt((w.array() * r.array()).square().sum() / cn);
    check_scale(next_sigma);
    const double beta_step = (next_beta - beta).cwiseAbs().maxCoeff();
    const double sigma_step = std::abs(next_sigma - sigma);
    beta.swap(next_beta);
    sigma = next_sigma;
    out.fit.iterations = iter;
    if (beta_step < config.tol && sigma_step < config.tol) {
      out.fit.converged = true;
      break;
    }
  }
  refresh_w();

  PwlsFit& f = out.fit;
  f.beta = std::move(beta);
  f.residuals = r;
  f.w = w;
  f.flagged = flagged_set(w);
  f.lambda = config.lambda;
  f.sigma2 = sigma * sigma;
  // sum w^2 (r/sigma)^2 + lambda sum |log w| + 2cn log sigma; equals the M objective once w is profiled out
  f.objective = pwls_objective(r / sigma, w, config.lambda, Vector::Ones(n)) +
                2.0 * cn * std::log(sigma);
  f.objective_trace = {f.objective};
  out.sigma = sigma;
  return out;
}

}  // namespace detail

/**
 * Concomitant-scale M-estimate.
 *
 * beta step: IRLS with weights psi(t)/(2t) at t = r/sigma.
 * sigma step: the closed-form stationarity condition in sigma.
 * Run from the OLS, robust and elemental starts; the lowest objective wins.
 */
inline MFit fit_concomitant_m(const Dataset& data, const MConfig& config) {
  config.validate();
  detail::check_feasible(config);
  return detail::best_over_starts<MFit>(
      detail::scale_starts(data, config),
      [&](const detail::ScaleStart& s) { return detail::concomitant_m_from(data, config, s); },
      [](const MFit& f) { return f.objective; });
}

/**
 * PWLS with the same concomitant scale: block minimization over w (closed form
 * with threshold sigma sqrt(lambda/2)), beta (weighted least squares) and sigma
 * (cn sigma^2 = sum w^2 r^2). The returned w is refreshed at the final (r, sigma).
 * Same starts and selection rule as fit_concomitant_m.
 */
inline ScaledPwlsFit fit_pwls_with_scale(const Dataset& data, const MConfig& config) {
  config.validate();
  detail::check_feasible(config);
  return detail::best_over_starts<ScaledPwlsFit>(
      detail::scale_starts(data, config),
      [&](const detail::ScaleStart& s) { return detail::pwls_with_scale_from(data, config, s); },
      [](const ScaledPwlsFit& f) { return f.fit.objective; });
}

/// Fits both estimators and compares them at 1e-6 in beta (sup norm) and sigma.
inline Theorem1Report theorem1_check(const Dataset& data, const MConfig& config) {
  const MFit m = fit_concomitant_m(data, config);
  const ScaledPwlsFit pw = fit_pwls_with_scale(data, config);
  Theorem1Report report;
  report.beta_gap = (m.beta - pw.fit.beta).cwiseAbs().maxCoeff();
  report.sigma_gap = std::abs(m.sigma - pw.sigma);
  report.pass = report.beta_gap < 1e-6 && report.sigma_gap < 1e-6;
  return report;
}

}  // namespace pwls
