#pragma once

#include "radsim/nnls.hpp"
#include "radsim/parallel.hpp"
#include "radsim/sequence.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace radsim {

/// Healthy axial diffusivity; the anisotropic grid must contain it exactly.
inline constexpr double kHealthyLambdaPar = 2.0;

struct BasisGrid {
  std::vector<double> lambda_par;   // um^2/ms
  std::vector<double> iso_d;        // um^2/ms
  std::vector<double> lambda_perp;  // sweep, um^2/ms
  Vec3 fiber_direction = Vec3::UnitZ();

  /// n1 and n2 points on [0, 3]; the perpendicular sweep has n_perp points on [0, lambda_perp_max].
  static BasisGrid uniform(std::size_t n1 = 31, std::size_t n2 = 31, double lambda_perp_max = 0.4,
                           std::size_t n_perp = 9, const Vec3& fiber_direction = Vec3::UnitZ()) {
    const auto spaced = [](std::size_t n, double hi) {
      std::vector<double> v(n, 0.0);
      for (std::size_t i = 1; i < n; ++i) v[i] = hi * static_cast<double>(i) / static_cast<double>(n - 1);
      return v;
    };
    if (n1 < 2 || n2 < 2 || n_perp < 1) throw Error(ErrorCode::kInvalidArgument, "grids need at least two points");
    BasisGrid g;
    g.lambda_par = spaced(n1, 3.0);
    g.iso_d = spaced(n2, 3.0);
    g.lambda_perp = n_perp == 1 ? std::vector<double>{0.0} : spaced(n_perp, lambda_perp_max);
    g.fiber_direction = fiber_direction;
    g.validate();
    return g;
  }

  std::size_t n_aniso() const { return lambda_par.size(); }
  std::size_t n_iso() const { return iso_d.size(); }
  std::size_t columns() const { return lambda_par.size() + iso_d.size(); }

  /// Index of the healthy column in lambda_par.
  std::size_t healthy_index() const {
    const auto it = std::find(lambda_par.begin(), lambda_par.end(), kHealthyLambdaPar);
    if (it == lambda_par.end()) throw Error(ErrorCode::kOffGrid, "lambda_par grid lacks the healthy value 2.0");
    return static_cast<std::size_t>(it - lambda_par.begin());
  }

  void validate() const {
    const auto increasing = [](const std::vector<double>& v) {
      for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
      return !v.empty();
    };
    if (!increasing(lambda_par) || !increasing(iso_d) || !increasing(lambda_perp))
      throw Error(ErrorCode::kInvalidArgument, "basis grids must be strictly increasing");
    if (lambda_par.front() < 0.0 || lambda_par.back() > 3.0 || iso_d.front() != 0.0 || iso_d.back() != 3.0)
      throw Error(ErrorCode::kInvalidArgument, "grids must lie in [0, 3] and the isotropic grid must include 0 and 3");
    if (lambda_perp.front() < 0.0 || lambda_perp.back() > 0.4)
      throw Error(ErrorCode::kInvalidArgument, "lambda_perp sweep must lie in [0, 0.4]");
    if (std::abs(fiber_direction.norm() - 1.0) > 1e-9)
      throw Error(ErrorCode::kInvalidArgument, "fiber direction must be a unit vector");
    healthy_index();
  }
};

/// Anisotropic forward curve for one acquisition.
inline double aniso_signal(const PgseAcquisition& a, const Vec3& fiber, double lambda_par, double lambda_perp) {
  const double c = a.direction.dot(fiber);
  return std::exp(-a.b * lambda_perp) * std::exp(-a.b * (lambda_par - lambda_perp) * c * c);
}

struct DesignMatrix {
  /// Rows follow the scheme; anisotropic columns first, then isotropic.
  Eigen::MatrixXd m;
  std::size_t n_aniso = 0;
  std::size_t n_iso = 0;
  double lambda_perp = 0.0;
};

inline DesignMatrix build_design_matrix(const GradientScheme& scheme, const BasisGrid& grid, double lambda_perp) {
  DesignMatrix d;
  d.n_aniso = grid.n_aniso();
  d.n_iso = grid.n_iso();
  d.lambda_perp = lambda_perp;
  d.m.resize(static_cast<Eigen::Index>(scheme.size()), static_cast<Eigen::Index>(grid.columns()));
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    for (std::size_t i = 0; i < d.n_aniso; ++i)
      d.m(row, static_cast<Eigen::Index>(i)) =
          aniso_signal(scheme[k], grid.fiber_direction, grid.lambda_par[i], lambda_perp);
    for (std::size_t j = 0; j < d.n_iso; ++j)
      d.m(row, static_cast<Eigen::Index>(d.n_aniso + j)) = std::exp(-scheme[k].b * grid.iso_d[j]);
  }
  return d;
}

struct FitOptions {
  double beta = 1e-4;
  double d_cell_cut = 1.5;       // um^2/ms
  double eaec_deduction = 0.04;  // share of anisotropic mass
  /// s - iso_signal may dip this far below zero before it is an error.
  double over_subtraction_tol = 5e-3;
  unsigned threads = 1;
};

struct SpectrumFit {
  BasisGrid grid;
  Eigen::VectorXd fractions;  // anisotropic then isotropic
  double lambda_perp = 0.0;
  std::size_t best_index = 0;
  /// Unregularized ||s - M f||^2 per sweep candidate.
  std::vector<double> residuals;
  std::vector<bool> converged;
  /// Isotropic reconstruction sum_j f_j p_kj, and s minus it.
  Eigen::VectorXd iso_signal;
  Eigen::VectorXd s_an;
  /// Anisotropic mass removed by the EAEC deduction (zero before it).
  double eaec_removed = 0.0;
  double d_cell_cut = 1.5;

  Eigen::VectorXd aniso() const { return fractions.head(static_cast<Eigen::Index>(grid.n_aniso())); }
  Eigen::VectorXd iso() const { return fractions.tail(static_cast<Eigen::Index>(grid.n_iso())); }
  double fiber_fraction() const { return aniso().sum(); }
  double cell_fraction() const {
    double c = 0.0;
    for (std::size_t j = 0; j < grid.n_iso(); ++j)
      if (grid.iso_d[j] <= d_cell_cut) c += fractions[static_cast<Eigen::Index>(grid.n_aniso() + j)];
    return c;
  }
  double free_fraction() const { return iso().sum() - cell_fraction(); }
  double total() const { return fractions.sum(); }
};

namespace detail {
inline Eigen::VectorXd to_vector(std::span<const double> s) {
  return Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}
}  // namespace detail

/// Subtracts the fitted isotropic reconstruction; negatives down to -tol are
/// clamped to zero, larger ones are an error.
inline Eigen::VectorXd split_anisotropic(const Eigen::VectorXd& s, const Eigen::VectorXd& iso_signal,
                                         double tol = 5e-3) {
  if (s.size() != iso_signal.size()) throw Error(ErrorCode::kDimensionMismatch, "signal and reconstruction differ");
  Eigen::VectorXd an = s - iso_signal;
  for (Eigen::Index k = 0; k < an.size(); ++k) {
    if (an[k] < -tol)
      throw Error(ErrorCode::kOverSubtraction, "isotropic reconstruction exceeds the signal");
    if (an[k] < 0.0) an[k] = 0.0;
  }
  return an;
}

/// Regularized NNLS for each lambda_perp in the sweep; keeps the candidate with
/// the smallest unregularized residual (ties to the smaller lambda_perp).
inline SpectrumFit fit_spectrum(std::span<const double> signal, const GradientScheme& scheme, const BasisGrid& grid,
                                const FitOptions& opt = {}) {
  if (signal.size() != scheme.size())
    throw Error(ErrorCode::kDimensionMismatch, "one signal value per acquisition");
  grid.validate();
  const Eigen::VectorXd s = detail::to_vector(signal);
  const std::size_t n_sweep = grid.lambda_perp.size();
  std::vector<NnlsResult> solutions(n_sweep);
  std::vector<DesignMatrix> designs(n_sweep);
  parallel_for(n_sweep, opt.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      designs[c] = build_design_matrix(scheme, grid, grid.lambda_perp[c]);
      solutions[c] = nnls_l2(designs[c].m, s, opt.beta);
    }
  });

  SpectrumFit fit;
  fit.grid = grid;
  fit.d_cell_cut = opt.d_cell_cut;
  fit.residuals.resize(n_sweep);
  fit.converged.resize(n_sweep);
  for (std::size_t c = 0; c < n_sweep; ++c) {
    fit.residuals[c] = (designs[c].m * solutions[c].x - s).squaredNorm();
    fit.converged[c] = solutions[c].converged;
    if (fit.residuals[c] < fit.residuals[fit.best_index]) fit.best_index = c;
  }
  fit.lambda_perp = grid.lambda_perp[fit.best_index];
  fit.fractions = solutions[fit.best_index].x;
  const auto ni = static_cast<Eigen::Index>(grid.n_iso());
  fit.iso_signal = designs[fit.best_index].m.rightCols(ni) * fit.fractions.tail(ni);
  fit.s_an = split_anisotropic(s, fit.iso_signal, opt.over_subtraction_tol);
  return fit;
}

/// Removes `share` of the total anisotropic mass from the top of the lambda_par
/// spectrum downward. The remaining anisotropic spectrum is left in place;
/// `anisotropic_proportions` renormalizes it.
inline SpectrumFit deduct_eaec_anisotropy(const SpectrumFit& fit, double share) {
  if (share < 0.0 || share > 1.0) throw Error(ErrorCode::kInvalidArgument, "deduction share must lie in [0, 1]");
  SpectrumFit out = fit;
  if (share == 0.0) return out;
  const double total = fit.fiber_fraction();
  if (!(total > 0.0)) throw Error(ErrorCode::kInsufficientMass, "no anisotropic mass to deduct from");
  double remaining = share * total;
  for (std::size_t i = fit.grid.n_aniso(); i-- > 0 && remaining > 0.0;) {
    auto& f = out.fractions[static_cast<Eigen::Index>(i)];
    const double take = std::min(f, remaining);
    f -= take;
    remaining -= take;
  }
  out.eaec_removed = share * total - std::max(0.0, remaining);
  return out;
}

/// Anisotropic spectrum scaled to unit mass.
inline Eigen::VectorXd anisotropic_proportions(const SpectrumFit& fit) {
  const Eigen::VectorXd a = fit.aniso();
  const double total = a.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::kInsufficientMass, "anisotropic spectrum is empty");
  return a / total;
}

/// One-dimensional ADC spectrum: s_k = sum_j f_j exp(-b_k D_j), f >= 0. This is
/// the reduced model for gradients perpendicular to the fibers, where the
/// anisotropic term collapses to exp(-b lambda_perp).
struct AdcSpectrum {
  std::vector<double> d;
  Eigen::VectorXd fractions;
  double residual = 0.0;

  /// Share of the total mass at ADC <= limit.
  double mass_below(double limit) const {
    double below = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d[j] <= limit + 1e-12) below += fractions[static_cast<Eigen::Index>(j)];
    const double total = fractions.sum();
    return total > 0.0 ? below / total : 0.0;
  }
};

inline AdcSpectrum fit_adc_spectrum(std::span<const double> signal, const GradientScheme& scheme,
                                    std::vector<double> d_grid, double beta) {
  if (signal.size() != scheme.size()) throw Error(ErrorCode::kDimensionMismatch, "one signal value per acquisition");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(scheme.size()), static_cast<Eigen::Index>(d_grid.size()));
  for (std::size_t k = 0; k < scheme.size(); ++k)
    for (std::size_t j = 0; j < d_grid.size(); ++j)
      m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = std::exp(-scheme[k].b * d_grid[j]);
  const Eigen::VectorXd s = detail::to_vector(signal);
  AdcSpectrum out;
  out.d = std::move(d_grid);
  out.fractions = nnls_l2(m, s, beta).x;
  out.residual = (m * out.fractions - s).squaredNorm();
  return out;
}

/// The acquisitions whose direction satisfies `keep`, plus the b=0 entry, and
/// the matching signal values.
template <class Pred>
std::pair<GradientScheme, std::vector<double>> select_acquisitions(const GradientScheme& scheme,
                                                                   std::span<const double> signal, Pred keep) {
  if (signal.size() != scheme.size()) throw Error(ErrorCode::kDimensionMismatch, "one signal value per acquisition");
  std::vector<PgseAcquisition> acq;
  std::vector<double> s;
  for (std::size_t k = 0; k < scheme.size(); ++k)
    if (k == scheme.b0_index() || (scheme[k].b > 0.0 && keep(scheme[k]))) {
      acq.push_back(scheme[k]);
      s.push_back(signal[k]);
    }
  return {GradientScheme(std::move(acq)), std::move(s)};
}

}  // namespace radsim
