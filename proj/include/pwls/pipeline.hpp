#pragma once

#include "pwls/numerics.hpp"
#include "pwls/solver.hpp"
#include "pwls/tuning.hpp"

namespace pwls {

// Everything produced on the way from raw data to a BIC-tuned aPWLS fit.
struct ApwlsRun {
  InitialEstimates initial;
  PenaltyScales scales;
  SolutionPath path;
  BicReport bic;

  const PwlsFit& selected() const { return path.fits[static_cast<std::size_t>(bic.argmin)]; }
};

/// Pilot fit, adaptive scales, solution path and BIC selection.
inline ApwlsRun apwls_bic(const Dataset& data, const SolverConfig& config = {}) {
  ApwlsRun run;
  run.initial = initial_estimates(data);
  run.scales = adaptive_scales(run.initial.w0);
  run.path = solution_path(data, run.scales, config);
  run.bic = select_bic(run.path, data);
  return run;
}

}  // namespace pwls
