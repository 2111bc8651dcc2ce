#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"
#include "pwls/parallel.hpp"
#include "pwls/solver.hpp"

namespace pwls {

// ---------------------------------------------------------------------------
// BIC
// ---------------------------------------------------------------------------

struct BicReport {
  Vector values;
  Index argmin = 0;
  double lambda = 0.0;
};

/// (n-p) log(||w o r||^2 / ||w||^2) + k (log(n-p) + 1); -inf on a perfect fit.
inline double bic(const PwlsFit& f, Index n, Index p) {
  require(n > p, "bic: need n > p");
  require(f.w.size() == n && f.residuals.size() == n, "bic: fit does not match n");
  const double weighted_rss = (f.w.array() * f.residuals.array()).square().sum();
  if (weighted_rss == 0.0) return -std::numeric_limits<double>::infinity();
  const double dof = static_cast<double>(n - p);
  const double k = static_cast<double>(f.flagged.size());
  return dof * std::log(weighted_rss / f.w.squaredNorm()) + k * (std::log(dof) + 1.0);
}

/// Grid point of minimum BIC; on ties the larger lambda (earlier index) wins.
inline BicReport select_bic(const SolutionPath& path, const Dataset& data) {
  require(!path.fits.empty(), "select_bic: empty path");
  BicReport report;
  report.values.resize(static_cast<Index>(path.fits.size()));
  for (std::size_t k = 0; k < path.fits.size(); ++k) {
    const auto idx = static_cast<Index>(k);
    report.values(idx) = bic(path.fits[k], data.n(), data.p());
    if (report.values(idx) < report.values(report.argmin)) report.argmin = idx;
  }
  report.lambda = path.fits[static_cast<std::size_t>(report.argmin)].lambda;
  return report;
}

// ---------------------------------------------------------------------------
// Random weighting
// ---------------------------------------------------------------------------

struct RandomWeights {
  Vector omega;
  std::uint64_t seed = 0;
};

/// Standard exponential draws (mean 1, variance 1), reproducible from `seed`.
inline RandomWeights draw_weights(Index n, std::uint64_t seed) {
  require(n >= 1, "draw_weights: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> exp1(1.0);
  RandomWeights out{Vector(n), seed};
  for (Index i = 0; i < n; ++i) {
    double v = 0.0;
    while (!(v > 0.0)) v = exp1(rng);
    out.omega(i) = v;
  }
  return out;
}

/// Minimizer of sum omega_i w_i^2 r_i^2 + lambda sum varpi_i |log w_i|.
inline PwlsFit perturbed_fit(const Dataset& data, double lambda, const PenaltyScales& scales,
                             const RandomWeights& omega, const Vector& init_beta,
                             const Vector& init_w, const SolverConfig& config = {}) {
  return detail::alternate(data, lambda, scales.varpi, init_beta, init_w, config,
                           &omega.omega);
}

inline PwlsFit perturbed_fit(const Dataset& data, double lambda, const PenaltyScales& scales,
                             const RandomWeights& omega, const SolverConfig& config = {}) {
  return perturbed_fit(data, lambda, scales, omega, ols_solve(data, omega.omega),
                       Vector::Ones(data.n()), config);
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

/**
 * Cohen's kappa between two index sets viewed as binary ratings of n items.
 *
 * Sets are 0-based and need not be sorted. When the chance agreement is 1
 * (both sets empty, or both full) the ratings are identical and kappa is 1.
 */
inline double kappa(const std::vector<Index>& set_a, const std::vector<Index>& set_b, Index n) {
  require(n >= 1, "kappa: n must be >= 1");
  std::vector<char> in_a(static_cast<std::size_t>(n), 0);
  std::vector<char> in_b(static_cast<std::size_t>(n), 0);
  for (Index i : set_a) {
    require(i >= 0 && i < n, "kappa: index out of range");
    in_a[static_cast<std::size_t>(i)] = 1;
  }
  for (Index i : set_b) {
    require(i >= 0 && i < n, "kappa: index out of range");
    in_b[static_cast<std::size_t>(i)] = 1;
  }
  double count_a = 0.0, count_b = 0.0, agree = 0.0;
  for (std::size_t i = 0; i < in_a.size(); ++i) {
    count_a += in_a[i];
    count_b += in_b[i];
    agree += (in_a[i] == in_b[i]) ? 1.0 : 0.0;
  }
  const double nn = static_cast<double>(n);
  const double qa = count_a / nn;
  const double qb = count_b / nn;
  const double observed = agree / nn;
  const double chance = qa * qb + (1.0 - qa) * (1.0 - qb);
  if (chance >= 1.0) return 1.0;
  return (observed - chance) / (1.0 - chance);
}

// ---------------------------------------------------------------------------
// Stability selection
// ---------------------------------------------------------------------------

struct StabilityReport {
  Vector lambdas;
  Vector s_curve;
  Matrix outlier_prob;            // n x lambdas
  std::vector<int> failed_pairs;  // per lambda
  Index selected = 0;
  double lambda = 0.0;
  int pairs = 0;
  std::uint64_t seed = 0;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the (seed, stream) pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Draws pair b's two weight vectors from independent derived streams.
inline std::vector<std::pair<RandomWeights, RandomWeights>> draw_pairs(Index n, int pairs,
                                                                       std::uint64_t seed) {
  std::vector<std::pair<RandomWeights, RandomWeights>> out;
  out.reserve(static_cast<std::size_t>(pairs));
  for (int b = 0; b < pairs; ++b) {
    const auto stream = static_cast<std::uint64_t>(2 * b);
    out.emplace_back(draw_weights(n, derive_seed(seed, stream)),
                     draw_weights(n, derive_seed(seed, stream + 1)));
  }
  return out;
}

/**
 * Stability curve from explicit weight pairs.
 *
 * Each weight vector is pathed over the grid with warm starts. A fit that
 * throws is recorded as failed at that lambda (the next lambda restarts cold)
 * and its pair is left out of S and P at that lambda. More than 20% failed
 * pairs at any lambda is an error.
 */
inline StabilityReport stability_curve(
    const Dataset& data, const Vector& lambdas, const PenaltyScales& scales,
    const std::vector<std::pair<RandomWeights, RandomWeights>>& pairs,
    const SolverConfig& config = {}, unsigned threads = 1) {
  require(!pairs.empty(), "stability_curve: need at least one pair");
  require(lambdas.size() >= 1, "stability_curve: empty grid");
  const Index n = data.n();
  const auto grid = static_cast<std::size_t>(lambdas.size());
  const std::size_t vectors = 2 * pairs.size();

  struct Trace {
    std::vector<std::vector<Index>> flagged;
    std::vector<char> ok;
  };
  std::vector<Trace> traces(vectors);

  parallel_for(vectors, threads, [&](std::size_t m) {
    const RandomWeights& omega = (m % 2 == 0) ? pairs[m / 2].first : pairs[m / 2].second;
    Trace& trace = traces[m];
    trace.flagged.resize(grid);
    trace.ok.assign(grid, 0);
    Vector beta;
    Vector w;
    bool warm = false;
    for (std::size_t k = 0; k < grid; ++k) {
      try {
        if (!warm) {
          beta = ols_solve(data, omega.omega);
          w = Vector::Ones(n);
        }
        PwlsFit f = perturbed_fit(data, lambdas(static_cast<Index>(k)), scales, omega, beta, w,
                                  config);
        trace.flagged[k] = std::move(f.flagged);
        trace.ok[k] = 1;
        beta = std::move(f.beta);
        w = std::move(f.w);
        warm = true;
      } catch (const Error&) {
        warm = false;
      }
    }
  });

  StabilityReport report;
  report.lambdas = lambdas;
  report.s_curve = Vector::Zero(lambdas.size());
  report.outlier_prob = Matrix::Zero(n, lambdas.size());
  report.failed_pairs.assign(grid, 0);
  report.pairs = static_cast<int>(pairs.size());

  for (std::size_t k = 0; k < grid; ++k) {
    const auto col = static_cast<Index>(k);
    int used = 0;
    double kappa_sum = 0.0;
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      const Trace& t1 = traces[2 * b];
      const Trace& t2 = traces[2 * b + 1];
      if (!t1.ok[k] || !t2.ok[k]) {
        ++report.failed_pairs[k];
        continue;
      }
      ++used;
      kappa_sum += kappa(t1.flagged[k], t2.flagged[k], n);
      for (Index i : t1.flagged[k]) report.outlier_prob(i, col) += 1.0;
      for (Index i : t2.flagged[k]) report.outlier_prob(i, col) += 1.0;
    }
    if (report.failed_pairs[k] * 5 > report.pairs) {
      fail(ErrorCode::TooManyFailures,
           detail::lambda_context(lambdas(col), "stability_curve: more than 20% of pairs failed"));
    }
    report.s_curve(col) = kappa_sum / used;
    report.outlier_prob.col(col) /= 2.0 * used;
  }

  for (Index k = 1; k < report.s_curve.size(); ++k) {
    if (report.s_curve(k) > report.s_curve(report.selected)) report.selected = k;
  }
  report.lambda = lambdas(report.selected);
  return report;
}

/// Stability curve with `pairs` freshly drawn weight pairs from `seed`.
inline StabilityReport stability_curve(const Dataset& data, const Vector& lambdas,
                                       const PenaltyScales& scales, int pairs,
                                       std::uint64_t seed, const SolverConfig& config = {},
                                       unsigned threads = 1) {
  require(pairs >= 1, "stability_curve: B must be >= 1");
  StabilityReport report = stability_curve(data, lambdas, scales,
                                           draw_pairs(data.n(), pairs, seed), config, threads);
  report.seed = seed;
  return report;
}

}  // namespace pwls
