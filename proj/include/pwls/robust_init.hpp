#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/numerics.hpp"

namespace pwls {

// High-breakdown pilot regression: a least trimmed squares start found by
// random elemental subsets plus concentration steps, followed by a Tukey
// bisquare M-step at the LTS residual scale (an MM-type estimate).

struct RobustInitOptions {
  int subsets = 500;
  int initial_csteps = 2;
  int keep_best = 10;
  int max_csteps = 100;
  int bisquare_iter = 50;
  double bisquare_c = 4.685;  // 95% Gaussian efficiency
  std::uint64_t seed = 0x13579bdfULL;
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), "median of empty vector");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

/// median |r| / Phi^{-1}(3/4)
inline double mad_scale(const Vector& r) {
  std::vector<double> mags(static_cast<std::size_t>(r.size()));
  for (Index i = 0; i < r.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(r(i));
  return median_of(std::move(mags)) / 0.6744897501960817;
}

namespace detail {

struct LtsCandidate {
  Vector beta;
  double trimmed = std::numeric_limits<double>::infinity();
};

inline double trimmed_ss(const Vector& r, Index h, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(r.size()));
  for (Index i = 0; i < r.size(); ++i) buf[static_cast<std::size_t>(i)] = r(i) * r(i);
  std::nth_element(buf.begin(), buf.begin() + (h - 1), buf.end());
  return std::accumulate(buf.begin(), buf.begin() + h, 0.0);
}

// One concentration step: OLS on the h rows with the smallest squared residuals.
inline bool c_step(const Dataset& data, Index h, LtsCandidate& cand, std::vector<Index>& order) {
  const Vector r = data.y() - data.x() * cand.beta;
  order.resize(static_cast<std::size_t>(data.n()));
  std::iota(order.begin(), order.end(), Index{0});
  std::nth_element(order.begin(), order.begin() + (h - 1), order.end(),
                   [&](Index a, Index b) { return std::abs(r(a)) < std::abs(r(b)); });
  Matrix xs(h, data.p());
  Vector ys(h);
  for (Index j = 0; j < h; ++j) {
    xs.row(j) = data.x().row(order[static_cast<std::size_t>(j)]);
    ys(j) = data.y()(order[static_cast<std::size_t>(j)]);
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(xs);
  const auto d = qr.matrixR().diagonal().cwiseAbs();
  if (!(d(0) > 0.0) || d(data.p() - 1) / d(0) < kRankTolerance) return false;
  cand.beta = qr.solve(ys);
  std::vector<double> buf;
  cand.trimmed = trimmed_ss(data.y() - data.x() * cand.beta, h, buf);
  return true;
}

}  // namespace detail

/// Least trimmed squares coverage h = floor((n + p + 1) / 2).
inline Vector lts_fit(const Dataset& data, const RobustInitOptions& opt = {}) {
  const Index n = data.n();
  const Index p = data.p();
  const Index h = (n + p + 1) / 2;
  std::mt19937_64 rng(opt.seed);
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::vector<Index> order;

  std::vector<detail::LtsCandidate> pool;
  Matrix xs(p, p);
  Vector ys(p);
  for (int s = 0; s < opt.subsets; ++s) {
    // partial Fisher-Yates draw of p distinct rows
    for (Index j = 0; j < p; ++j) {
      std::uniform_int_distribution<Index> pick(j, n - 1);
      std::swap(rows[static_cast<std::size_t>(j)], rows[static_cast<std::size_t>(pick(rng))]);
      xs.row(j) = data.x().row(rows[static_cast<std::size_t>(j)]);
      ys(j) = data.y()(rows[static_cast<std::size_t>(j)]);
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(xs);
    const auto d = qr.matrixR().diagonal().cwiseAbs();
    if (!(d(0) > 0.0) || d(p - 1) / d(0) < kRankTolerance) continue;
    detail::LtsCandidate cand{qr.solve(ys)};
    bool ok = true;
    for (int c = 0; c < opt.initial_csteps && ok; ++c) ok = detail::c_step(data, h, cand, order);
    if (ok) pool.push_back(std::move(cand));
  }
  if (pool.empty()) return ols_solve(data);

  const auto keep = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(opt.keep_best));
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                    [](const auto& a, const auto& b) { return a.trimmed < b.trimmed; });
  pool.resize(keep);
  for (auto& cand : pool) {
    for (int c = 0; c < opt.max_csteps; ++c) {
      const double before = cand.trimmed;
      if (!detail::c_step(data, h, cand, order)) break;
      if (cand.trimmed >= before * (1.0 - 1e-12)) break;
    }
  }
  const auto best = std::min_element(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.trimmed < b.trimmed;
  });
  return best->beta;
}

/// Tukey bisquare IRLS at a fixed scale, started from `beta`.
inline Vector bisquare_m_step(const Dataset& data, Vector beta, double scale,
                              const RobustInitOptions& opt = {}) {
  if (!(scale > 0.0)) return beta;
  const double cut = opt.bisquare_c * scale;
  Vector weights(data.n());
  for (int iter = 0; iter < opt.bisquare_iter; ++iter) {
    const Vector r = data.y() - data.x() * beta;
    for (Index i = 0; i < r.size(); ++i) {
      const double u = r(i) / cut;
      weights(i) = std::abs(u) < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
    }
    if ((weights.array() > 0.0).count() < data.p()) break;
    Vector next;
    try {
      next = ols_solve(data, weights);
    } catch (const Error&) {
      break;
    }
    const double step = (next - beta).cwiseAbs().maxCoeff();
    beta.swap(next);
    if (step < 1e-10 * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

/// LTS start, MAD scale of its residuals, then the bisquare M-step.
inline Vector robust_pilot(const Dataset& data, const RobustInitOptions& opt = {}) {
  const Vector start = lts_fit(data, opt);
  return bisquare_m_step(data, start, mad_scale(data.y() - data.x() * start), opt);
}

}  // namespace pwls
