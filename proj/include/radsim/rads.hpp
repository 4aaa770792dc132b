#pragma once

#include "radsim/spectrafit.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace radsim {

/// Gaussian least-squares BIC, N ln(RSS / N) + k ln N, with RSS floored at 1e-30.
inline double bic(double rss, std::size_t n, int k = 2) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "BIC needs at least one observation");
  if (rss < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative residual sum of squares");
  const double N = static_cast<double>(n);
  return N * std::log(std::max(rss, 1e-30) / N) + k * std::log(N);
}

struct RadsBasis {
  Eigen::VectorXd candidate;  // lambda_par candidate, lambda_perp = 0
  Eigen::VectorXd healthy;    // lambda_par = 2
};

inline RadsBasis rads_design(const GradientScheme& scheme, const BasisGrid& grid, std::size_t candidate) {
  const std::size_t healthy = grid.healthy_index();
  if (candidate >= grid.n_aniso() || candidate == healthy)
    throw Error(ErrorCode::kOffGrid, "candidate must be an anisotropic grid point other than the healthy one");
  RadsBasis b;
  const auto n = static_cast<Eigen::Index>(scheme.size());
  b.candidate.resize(n);
  b.healthy.resize(n);
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    b.candidate[static_cast<Eigen::Index>(k)] =
        aniso_signal(scheme[k], grid.fiber_direction, grid.lambda_par[candidate], 0.0);
    b.healthy[static_cast<Eigen::Index>(k)] = aniso_signal(scheme[k], grid.fiber_direction, kHealthyLambdaPar, 0.0);
  }
  return b;
}

struct RadsCandidate {
  std::size_t index = 0;
  double lambda_par = 0.0;
  double f = 0.0;  // diseased share
  double rss = 0.0;
  double bic = 0.0;
};

/// min over f in [0, 1] of ||s - f c - (1 - f) h||^2: the interior optimum of
/// the one-dimensional problem, clamped.
inline RadsCandidate fit_candidate(const Eigen::VectorXd& s_an, const RadsBasis& basis) {
  if (s_an.size() != basis.healthy.size()) throw Error(ErrorCode::kDimensionMismatch, "signal and basis differ");
  const Eigen::VectorXd diff = basis.candidate - basis.healthy;
  const Eigen::VectorXd target = s_an - basis.healthy;
  const double den = diff.squaredNorm();
  double f = den > 0.0 ? diff.dot(target) / den : 0.0;
  f = std::clamp(f, 0.0, 1.0);
  RadsCandidate c;
  c.f = f;
  c.rss = (target - f * diff).squaredNorm();
  return c;
}

struct RadsResult {
  RadsCandidate chosen;
  std::vector<RadsCandidate> trace;
  double healthy_lambda_par = kHealthyLambdaPar;

  double fraction_diseased() const { return chosen.f; }
  double fraction_healthy() const { return 1.0 - chosen.f; }
  double average_axial_adc() const {
    return chosen.f * chosen.lambda_par + (1.0 - chosen.f) * healthy_lambda_par;
  }
};

/// Fits every non-healthy candidate and keeps the lowest BIC (ties to the
/// smaller lambda_par). `s_an` should have unit anisotropic mass.
inline RadsResult fit_rads(const Eigen::VectorXd& s_an, const GradientScheme& scheme, const BasisGrid& grid) {
  if (static_cast<std::size_t>(s_an.size()) != scheme.size())
    throw Error(ErrorCode::kDimensionMismatch, "one anisotropic signal value per acquisition");
  const std::size_t healthy = grid.healthy_index();
  RadsResult r;
  for (std::size_t i = 0; i < grid.n_aniso(); ++i) {
    if (i == healthy) continue;
    RadsCandidate c = fit_candidate(s_an, rads_design(scheme, grid, i));
    c.index = i;
    c.lambda_par = grid.lambda_par[i];
    c.bic = bic(c.rss, scheme.size());
    r.trace.push_back(c);
  }
  r.chosen = r.trace.front();
  for (const auto& c : r.trace)
    if (c.bic < r.chosen.bic) r.chosen = c;
  return r;
}

/// Stage-two input from a stage-one fit: the anisotropic signal with the
/// deducted columns' contribution removed, scaled to unit anisotropic mass.
inline Eigen::VectorXd rads_input(const SpectrumFit& fit, const SpectrumFit& deducted, const GradientScheme& scheme) {
  const DesignMatrix d = build_design_matrix(scheme, fit.grid, fit.lambda_perp);
  const auto na = static_cast<Eigen::Index>(fit.grid.n_aniso());
  const Eigen::VectorXd removed = fit.aniso() - deducted.aniso();
  Eigen::VectorXd s = fit.s_an - d.m.leftCols(na) * removed;
  const double mass = deducted.fiber_fraction();
  if (!(mass > 0.0)) throw Error(ErrorCode::kInsufficientMass, "no anisotropic mass left for the RADS fit");
  return s / mass;
}

}  // namespace radsim
