#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pwls/numerics.hpp"

namespace fixtures {

using pwls::Dataset;
using pwls::Index;
using pwls::Matrix;
using pwls::Vector;

/// x = (1..5), y = (1, 2, 3, 4, 50), no intercept.
inline Dataset five_point() {
  Matrix x(5, 1);
  x << 1, 2, 3, 4, 5;
  Vector y(5);
  y << 1, 2, 3, 4, 50;
  return Dataset(x, y);
}

/// Gaussian design with optional intercept, beta = 1, N(0, 1) noise, +shift on the first `shifted` rows.
inline Dataset gaussian(Index n, Index p, Index shifted, double shift, std::uint64_t seed,
                        bool intercept = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(n, p);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = (intercept && j == 0) ? 1.0 : normal(rng);
    y(i) = x.row(i).sum() + normal(rng) + (i < shifted ? shift : 0.0);
  }
  return Dataset(x, y);
}

/// n = 50, intercept plus one N(0,1) predictor, 5 shifts of +8 on rows 0..4.
inline Dataset planted50(std::uint64_t seed) { return gaussian(50, 2, 5, 8.0, seed, true); }

/// min over w in (0, 1] of a w^2 r^2 + b |log w| on a geometric grid of `points` values in (1e-8, 1].
inline double grid_min_w(double a_r2, double b, int points) {
  double best = a_r2;  // w = 1
  const double lo = std::log(1e-8);
  for (int k = 0; k < points; ++k) {
    const double w = std::exp(lo * (1.0 - static_cast<double>(k) / (points - 1)));
    best = std::min(best, w * w * a_r2 + b * std::abs(std::log(w)));
  }
  return best;
}

/// Exact inner minimum over w of w^2 r^2 + b |log w| (profile loss).
inline double profile_loss(double r, double b) {
  const double r2 = r * r;
  if (r2 <= 0.5 * b) return r2;
  return 0.5 * b + 0.5 * b * std::log(2.0 * r2 / b);
}

/// Profile objective of a one-predictor PWLS problem at slope beta.
inline double profile_objective(const Dataset& d, double beta, double lambda, const Vector& varpi) {
  double total = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    total += profile_loss(d.y()(i) - d.x()(i, 0) * beta, lambda * varpi(i));
  }
  return total;
}

/**
 * Brute-force global minimum over beta for p = 1: scan `points` values across
 * +-5 times the data range, then golden-section refine the best cell.
 */
inline double brute_force_min(const Dataset& d, double lambda, const Vector& varpi,
                              int points = 100000) {
  double range = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    if (d.x()(i, 0) != 0.0) range = std::max(range, std::abs(d.y()(i) / d.x()(i, 0)));
  }
  range = std::max(range, 1.0);
  const double lo = -5.0 * range;
  const double step = 10.0 * range / (points - 1);
  double best = std::numeric_limits<double>::infinity();
  Index best_k = 0;
  for (int k = 0; k < points; ++k) {
    const double f = profile_objective(d, lo + step * k, lambda, varpi);
    if (f < best) {
      best = f;
      best_k = k;
    }
  }
  double a = lo + step * (best_k - 1);
  double b = lo + step * (best_k + 1);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 200; ++it) {
    const double c = b - g * (b - a);
    const double e = a + g * (b - a);
    if (profile_objective(d, c, lambda, varpi) < profile_objective(d, e, lambda, varpi)) {
      b = e;
    } else {
      a = c;
    }
  }
  return std::min(best, profile_objective(d, 0.5 * (a + b), lambda, varpi));
}

/// Consistent concomitant constant for Gaussian errors: E[min(Z^2, lambda/2)].
inline double gaussian_c(double lambda) {
  const double k = std::sqrt(0.5 * lambda);
  const double tail = std::erfc(k / std::sqrt(2.0));  // P(|Z| > k)
  const double dens = std::exp(-0.5 * k * k) / std::sqrt(2.0 * M_PI);
  return (1.0 - tail) - 2.0 * k * dens + k * k * tail;
}

}  // namespace fixtures
