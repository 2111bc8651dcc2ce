#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pwls/error.hpp"
#include "pwls/hetero.hpp"
#include "pwls/numerics.hpp"
#include "pwls/parallel.hpp"
#include "pwls/pipeline.hpp"

namespace pwls::sim {

// Mean-shift model with uniform, equicorrelated predictors; the first k rows
// are shifted by r and optionally moved to the leverage point L * 1_p.
struct HomoSimConfig {
  Index n = 1000;
  Index p = 15;
  Index k = 100;
  double r = 5.0;
  std::optional<double> leverage;
  std::uint64_t seed = 1;

  void validate() const {
    require(n > 0 && p > 0 && k >= 0 && k < n && n > p, "HomoSimConfig: need 0 <= k < n, p < n");
    require(!leverage || *leverage > 0.0, "HomoSimConfig: leverage must be positive");
  }
};

// Variance-function model with AR(0.5) Gaussian predictors. Case 1: g = |v|.
// Case 2: g = exp|v| (fitted with sqrt|v| downstream).
struct HeteroSimConfig {
  Index n = 1000;
  Index p = 15;
  Index k = 10;
  double r = 20.0;
  int scenario = 1;
  Vector theta_true = (Vector(2) << 1.0, 0.7).finished();
  std::uint64_t seed = 1;

  void validate() const {
    require(n > 0 && p > 0 && k >= 0 && k < n && n > p, "HeteroSimConfig: need 0 <= k < n, p < n");
    require(scenario == 1 || scenario == 2, "HeteroSimConfig: case must be 1 or 2");
    require(theta_true.size() == 2, "HeteroSimConfig: theta has two entries");
  }

  GKind true_g() const { return scenario == 1 ? GKind::Absolute : GKind::ExpAbsolute; }
  GKind fitted_g() const { return scenario == 1 ? GKind::Absolute : GKind::SqrtAbsolute; }
};

struct Simulated {
  Dataset data;
  std::vector<Index> truth;  // 0-based outlier rows
};

struct SimulatedHetero {
  Dataset data;
  std::vector<Index> truth;
  VarianceModel variance;  // the generating model
};

/// Symmetric square root through the eigendecomposition.
inline Matrix sqrtm_spd(const Matrix& sigma) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

inline Matrix equicorrelation(Index p, double rho) {
  Matrix s = Matrix::Constant(p, p, rho);
  s.diagonal().setOnes();
  return s;
}

inline Matrix ar1_correlation(Index p, double rho) {
  Matrix s(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  }
  return s;
}

inline std::vector<Index> first_k(Index k) {
  std::vector<Index> out(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

inline Simulated gen_homo(const HomoSimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(-15.0, 15.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix u(cfg.n, cfg.p);
  for (Index i = 0; i < cfg.n; ++i) {
    for (Index j = 0; j < cfg.p; ++j) u(i, j) = unif(rng);
  }
  Matrix x = u * sqrtm_spd(equicorrelation(cfg.p, 0.5));
  if (cfg.leverage) x.topRows(cfg.k).setConstant(*cfg.leverage);

  Vector y = x.rowwise().sum();  // beta = 1_p
  for (Index i = 0; i < cfg.n; ++i) {
    y(i) += normal(rng) + (i < cfg.k ? cfg.r : 0.0);
  }
  return {Dataset(std::move(x), std::move(y)), first_k(cfg.k)};
}

inline SimulatedHetero gen_hetero(const HeteroSimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // E|e| = 1 for e ~ N(0, pi/2)
  std::normal_distribution<double> noise(0.0, std::sqrt(0.5 * std::numbers::pi));

  const Matrix chol = ar1_correlation(cfg.p, 0.5).llt().matrixL();
  Matrix x(cfg.n, cfg.p);
  Vector z(cfg.p);
  for (Index i = 0; i < cfg.n; ++i) {
    for (Index j = 0; j < cfg.p; ++j) z(j) = normal(rng);
    x.row(i) = (chol * z).transpose();
  }

  VarianceModel truth_model{cfg.true_g(), cfg.theta_true, ZSpec::intercept_plus_last(cfg.p)};
  const Matrix zmat = build_z(x, truth_model.z);
  const Vector v = zmat * truth_model.theta;
  Vector y = x.rowwise().sum();
  for (Index i = 0; i < cfg.n; ++i) {
    const double g = g_eval(truth_model.kind, v(i));
    y(i) += g * noise(rng) + (i < cfg.k ? cfg.r * g : 0.0);
  }
  return {Dataset(std::move(x), std::move(y)), first_k(cfg.k), std::move(truth_model)};
}

struct Score {
  double masking = 0.0;
  double swamping = 0.0;
  bool joint = true;
};

/// Masking |truth \ flagged|/|truth|, swamping |flagged \ truth|/(n - |truth|).
inline Score score(const std::vector<Index>& truth, const std::vector<Index>& flagged, Index n) {
  std::vector<char> is_true(static_cast<std::size_t>(n), 0);
  std::vector<char> is_flagged(static_cast<std::size_t>(n), 0);
  for (Index i : truth) {
    require(i >= 0 && i < n, "score: truth index out of range");
    is_true[static_cast<std::size_t>(i)] = 1;
  }
  for (Index i : flagged) {
    require(i >= 0 && i < n, "score: flagged index out of range");
    is_flagged[static_cast<std::size_t>(i)] = 1;
  }
  double n_true = 0.0, missed = 0.0, swamped = 0.0;
  for (std::size_t i = 0; i < is_true.size(); ++i) {
    n_true += is_true[i];
    if (is_true[i] && !is_flagged[i]) missed += 1.0;
    if (!is_true[i] && is_flagged[i]) swamped += 1.0;
  }
  Score s;
  s.masking = n_true > 0.0 ? missed / n_true : 0.0;
  const double clean = static_cast<double>(n) - n_true;
  s.swamping = clean > 0.0 ? swamped / clean : 0.0;
  s.joint = missed == 0.0;
  return s;
}

enum class Method { Pwls, Hpwls };

inline const char* to_string(Method m) { return m == Method::Pwls ? "pwls" : "hpwls"; }

inline Method parse_method(const std::string& name) {
  if (name == "pwls" || name == "apwls") return Method::Pwls;
  if (name == "hpwls") return Method::Hpwls;
  fail(ErrorCode::InvalidArgument, "unknown benchmark method '" + name + "'");
}

using BenchConfig = std::variant<HomoSimConfig, HeteroSimConfig>;

// Percentages, averaged over the repetitions that completed.
struct MetricsReport {
  double jd = 0.0;
  double m = 0.0;
  double s = 0.0;
  int reps = 0;
  int failures = 0;
  std::vector<Score> per_rep;  // empty slot (joint=false, masking=-1) for failed reps
  std::vector<char> failed;
};

/// Flagged set from one method's full pipeline on one dataset.
inline std::vector<Index> detect(Method method, const Dataset& data, GKind fitted_g,
                                 const SolverConfig& config) {
  if (method == Method::Pwls) return apwls_bic(data, config).selected().flagged;
  HpwlsOptions opt;
  opt.z = ZSpec::intercept_plus_last(data.p());
  opt.g = fitted_g;
  return hpwls_path(data, opt, config).selected().flagged;
}

inline std::pair<Dataset, std::vector<Index>> generate(const BenchConfig& config,
                                                       std::uint64_t seed) {
  if (const auto* homo = std::get_if<HomoSimConfig>(&config)) {
    HomoSimConfig c = *homo;
    c.seed = seed;
    Simulated s = gen_homo(c);
    return {std::move(s.data), std::move(s.truth)};
  }
  HeteroSimConfig c = std::get<HeteroSimConfig>(config);
  c.seed = seed;
  SimulatedHetero s = gen_hetero(c);
  return {std::move(s.data), std::move(s.truth)};
}

/**
 * Monte Carlo repetitions of generate -> detect -> score. Repetition i uses
 * seed base_seed + i; results are reduced in repetition order so the report
 * does not depend on scheduling. Failed repetitions are excluded, and more
 * than 5% failures is an error.
 */
inline MetricsReport run_benchmark(Method method, const BenchConfig& config, int reps,
                                   std::uint64_t base_seed, unsigned threads = 1,
                                   const SolverConfig& solver = {}) {
  require(reps >= 1, "run_benchmark: reps must be >= 1");
  GKind fitted = GKind::Absolute;
  if (const auto* het = std::get_if<HeteroSimConfig>(&config)) {
    fitted = het->fitted_g();
  } else {
    require(method == Method::Pwls, "run_benchmark: hpwls needs a heteroscedastic design");
  }

  MetricsReport report;
  report.reps = reps;
  report.per_rep.assign(static_cast<std::size_t>(reps), Score{-1.0, -1.0, false});
  report.failed.assign(static_cast<std::size_t>(reps), 0);
  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t i) {
    try {
      auto [data, truth] = generate(config, base_seed + i);
      const auto flagged = detect(method, data, fitted, solver);
      report.per_rep[i] = score(truth, flagged, data.n());
    } catch (const Error&) {
      report.failed[i] = 1;
    }
  });

  double jd = 0.0, m = 0.0, s = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < report.per_rep.size(); ++i) {
    if (report.failed[i]) {
      ++report.failures;
      continue;
    }
    ++used;
    jd += report.per_rep[i].joint ? 1.0 : 0.0;
    m += report.per_rep[i].masking;
    s += report.per_rep[i].swamping;
  }
  if (report.failures * 20 > reps) {
    fail(ErrorCode::TooManyFailures, "run_benchmark: more than 5% of repetitions failed (" +
                                         std::to_string(report.failures) + " of " +
                                         std::to_string(reps) + ")");
  }
  report.jd = 100.0 * jd / used;
  report.m = 100.0 * m / used;
  report.s = 100.0 * s / used;
  return report;
}

/// Scenario label for the report row: "L=15", "noL", or "r=20;case=1".
inline std::string scenario_label(const BenchConfig& config) {
  std::ostringstream out;
  if (const auto* homo = std::get_if<HomoSimConfig>(&config)) {
    if (homo->leverage) {
      out << "L=" << *homo->leverage;
    } else {
      out << "noL";
    }
  } else {
    const auto& het = std::get<HeteroSimConfig>(config);
    out << "r=" << het.r << ";case=" << het.scenario;
  }
  return out.str();
}

inline std::string bench_header() { return "method,k,p,scenario,JD,M,S,reps,failures"; }

inline std::string bench_row(Method method, const BenchConfig& config, const MetricsReport& r) {
  const auto [k, p] = std::visit([](const auto& c) { return std::pair{c.k, c.p}; }, config);
  std::ostringstream out;
  out.precision(10);
  out << to_string(method) << ',' << k << ',' << p << ',' << scenario_label(config) << ','
      << r.jd << ',' << r.m << ',' << r.s << ',' << r.reps << ',' << r.failures;
  return out.str();
}

}  // namespace pwls::sim
