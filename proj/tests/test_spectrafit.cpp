#include "radsim/nnls.hpp"
#include "radsim/rng.hpp"
#include "radsim/spectrafit.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace radsim;

namespace {

Eigen::VectorXd iso_curve(const GradientScheme& s, double d) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) v[static_cast<Eigen::Index>(k)] = std::exp(-s[k].b * d);
  return v;
}

Eigen::VectorXd aniso_curve(const GradientScheme& s, double lpar, double lperp) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double c = s[k].direction.z();
    v[static_cast<Eigen::Index>(k)] = std::exp(-s[k].b * (lperp + (lpar - lperp) * c * c));
  }
  return v;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// Tries every active set: unconstrained least squares on each column subset,
// keeping the best feasible one.
double brute_force_nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(A.cols());
  double best = b.squaredNorm();
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> cols;
    for (int j = 0; j < n; ++j)
      if (mask & (1 << j)) cols.push_back(j);
    Eigen::MatrixXd sub(A.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = A.col(cols[i]);
    const Eigen::VectorXd x = sub.colPivHouseholderQr().solve(b);
    if (x.minCoeff() < 0.0) continue;
    best = std::min(best, (sub * x - b).squaredNorm());
  }
  return best;
}

void expect_kkt(const Eigen::MatrixXd& M, const Eigen::VectorXd& s, double beta, const Eigen::VectorXd& f) {
  const Eigen::VectorXd g = nnls_l2_gradient(M, s, beta, f);
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    ASSERT_GE(f[j], 0.0);
    if (f[j] == 0.0)
      EXPECT_GE(g[j], -1e-8) << j;
    else
      EXPECT_LE(std::abs(g[j]), 1e-8) << j;
  }
}

const GradientScheme& scheme() {
  static const GradientScheme s = default_scheme();
  return s;
}

}  // namespace

TEST(Grid, DefaultLayout) {
  const BasisGrid g = BasisGrid::uniform();
  EXPECT_EQ(g.n_aniso(), 31u);
  EXPECT_EQ(g.n_iso(), 31u);
  EXPECT_EQ(g.lambda_perp.size(), 9u);
  EXPECT_EQ(g.lambda_par[g.healthy_index()], 2.0);
  EXPECT_EQ(g.healthy_index(), 20u);
  EXPECT_NEAR(g.lambda_perp[1], 0.05, 1e-15);
  EXPECT_EQ(g.iso_d.back(), 3.0);
  BasisGrid bad = g;
  bad.lambda_par[3] = bad.lambda_par[2];
  EXPECT_THROW(bad.validate(), Error);
  try {
    BasisGrid::uniform(30);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOffGrid);
  }
}

TEST(Design, ReducedForms) {
  const GradientScheme& s = scheme();
  const BasisGrid g = BasisGrid::uniform();
  const DesignMatrix d = build_design_matrix(s, g, 0.0);
  for (Eigen::Index c = 0; c < d.m.cols(); ++c) EXPECT_EQ(d.m(0, c), 1.0);
  // Row 25: x at b = 3; row 75: z at b = 3; row 59: z at b = 1.
  ASSERT_NEAR(s[59].b, 1.0, 1e-12);
  EXPECT_NEAR(d.m(59, 20), std::exp(-2.0), 1e-14);
  for (std::size_t i = 0; i < g.n_aniso(); ++i) EXPECT_NEAR(d.m(25, static_cast<Eigen::Index>(i)), 1.0, 1e-14);
  const DesignMatrix p = build_design_matrix(s, g, 0.2);
  EXPECT_NEAR(p.m(25, 20), std::exp(-3.0 * 0.2), 1e-14);
  EXPECT_NEAR(p.m(75, 20), std::exp(-3.0 * 2.0), 1e-14);
  EXPECT_NEAR(p.m(59, 31 + 10), std::exp(-1.0), 1e-14);
}

TEST(Nnls, IdentityProjects) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd s(4);
  s << 0.5, -0.2, 1.5, 0.0;
  const NnlsResult r = nnls_l2(I, s, 0.0);
  EXPECT_NEAR(r.x[0], 0.5, 1e-15);
  EXPECT_EQ(r.x[1], 0.0);
  EXPECT_NEAR(r.x[2], 1.5, 1e-15);
  EXPECT_EQ(r.x[3], 0.0);
}

TEST(Nnls, RidgeClosedFormOnOneColumn) {
  Eigen::MatrixXd M(3, 1);
  M << 1.0, 2.0, 2.0;
  Eigen::VectorXd s(3);
  s << 1.0, 1.0, 1.0;
  const double beta = 0.5;
  EXPECT_NEAR(nnls_l2(M, s, beta).x[0], 5.0 / (9.0 + beta), 1e-14);
}

TEST(Nnls, MatchesExhaustiveActiveSetSearch) {
  StreamRng rng(11, 0);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd A(8, 5);
    Eigen::VectorXd b(8);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = n01(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = n01(rng);
    const NnlsResult r = nnls(A, b);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.objective, brute_force_nnls(A, b), 1e-8) << trial;
    expect_kkt(A, b, 0.0, r.x);
  }
}

TEST(Nnls, DimensionMismatch) {
  try {
    nnls_l2(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(2), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(FitSpectrum, RecoversNoiselessMixture) {
  const GradientScheme& s = scheme();
  const Eigen::VectorXd sig = 0.35 * aniso_curve(s, 2.0, 0.0) + 0.05 * iso_curve(s, 0.2) + 0.60 * iso_curve(s, 3.0);
  FitOptions opt;
  opt.beta = 0.0;
  const SpectrumFit fit = fit_spectrum(to_std(sig), s, BasisGrid::uniform(), opt);
  EXPECT_EQ(fit.lambda_perp, 0.0);
  EXPECT_NEAR(fit.fiber_fraction(), 0.35, 1e-6);
  EXPECT_NEAR(fit.cell_fraction(), 0.05, 1e-6);
  EXPECT_NEAR(fit.free_fraction(), 0.60, 1e-6);
  EXPECT_LE(fit.residuals[fit.best_index], 1e-10);
  EXPECT_NEAR((fit.s_an - 0.35 * aniso_curve(s, 2.0, 0.0)).norm() / std::sqrt(76.0), 0.0, 1e-3);

  opt.beta = FitOptions{}.beta;
  const SpectrumFit reg = fit_spectrum(to_std(sig), s, BasisGrid::uniform(), opt);
  EXPECT_NEAR(reg.fiber_fraction(), 0.35, 0.005);
  EXPECT_NEAR(reg.cell_fraction(), 0.05, 0.005);
  EXPECT_EQ(reg.lambda_perp, 0.0);
}

TEST(FitSpectrum, PureIsotropicSignal) {
  const GradientScheme& s = scheme();
  FitOptions opt;
  opt.beta = 0.0;
  const SpectrumFit fit = fit_spectrum(to_std(iso_curve(s, 2.5)), s, BasisGrid::uniform(), opt);
  EXPECT_LT(fit.fiber_fraction(), 1e-3);
  EXPECT_NEAR(fit.iso()[25], 1.0, 1e-6);
  EXPECT_LT(fit.s_an.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitSpectrum, RoundTripOnGridMixtures) {
  const GradientScheme& s = scheme();
  const BasisGrid grid = BasisGrid::uniform();
  StreamRng rng(13, 0);
  std::uniform_int_distribution<int> pick(0, 30);
  std::uniform_real_distribution<double> share(0.1, 0.9);
  FitOptions opt;
  opt.beta = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int a = pick(rng), i = pick(rng);
    const double f = share(rng);
    const Eigen::VectorXd sig = f * aniso_curve(s, grid.lambda_par[a], 0.0) + (1.0 - f) * iso_curve(s, grid.iso_d[i]);
    const SpectrumFit fit = fit_spectrum(to_std(sig), s, grid, opt);
    EXPECT_LE(fit.residuals[fit.best_index], 1e-10);
    const DesignMatrix d = build_design_matrix(s, grid, fit.lambda_perp);
    expect_kkt(d.m, sig, 0.0, fit.fractions);
  }
}

TEST(FitSpectrum, SweepPicksTheSmallestResidual) {
  const GradientScheme& s = scheme();
  const Eigen::VectorXd sig = 0.5 * aniso_curve(s, 1.7, 0.1) + 0.5 * iso_curve(s, 1.0);
  const BasisGrid grid = BasisGrid::uniform();
  const SpectrumFit fit = fit_spectrum(to_std(sig), s, grid);
  EXPECT_EQ(fit.lambda_perp, 0.1);
  for (std::size_t c = 0; c < grid.lambda_perp.size(); ++c) {
    const DesignMatrix d = build_design_matrix(s, grid, grid.lambda_perp[c]);
    const NnlsResult r = nnls_l2(d.m, sig, FitOptions{}.beta);
    EXPECT_NEAR(fit.residuals[c], (d.m * r.x - sig).squaredNorm(), 1e-14);
    EXPECT_GE(fit.residuals[c], fit.residuals[fit.best_index]);
  }
}

TEST(FitSpectrum, StableUnderSmallNoise) {
  const GradientScheme& s = scheme();
  const Eigen::VectorXd sig = 0.35 * aniso_curve(s, 2.0, 0.0) + 0.05 * iso_curve(s, 0.2) + 0.60 * iso_curve(s, 3.0);
  const SpectrumFit clean = fit_spectrum(to_std(sig), s, BasisGrid::uniform());
  StreamRng rng(17, 0);
  std::normal_distribution<double> noise(0.0, 1e-3);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd noisy = sig;
    for (Eigen::Index k = 1; k < noisy.size(); ++k) noisy[k] += noise(rng);
    const SpectrumFit fit = fit_spectrum(to_std(noisy), s, BasisGrid::uniform());
    EXPECT_LT(std::abs(fit.fiber_fraction() - clean.fiber_fraction()), 0.01);
  }
}

TEST(Split, SubtractsAndClamps) {
  Eigen::VectorXd s(3), iso(3);
  s << 1.0, 0.5, 0.2;
  iso << 0.0, 0.0, 0.0;
  EXPECT_EQ(split_anisotropic(s, iso), s);
  iso << 1.0, 0.5, 0.2 + 1e-3;
  EXPECT_EQ(split_anisotropic(s, iso), Eigen::VectorXd::Zero(3));
  iso << 1.0, 0.5, 0.3;
  try {
    split_anisotropic(s, iso);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOverSubtraction);
  }
}

TEST(Deduction, RemovesFromTheTopOfTheSpectrum) {
  SpectrumFit fit;
  fit.grid = BasisGrid::uniform();
  fit.fractions = Eigen::VectorXd::Zero(62);
  fit.fractions[20] = 0.336;
  fit.fractions[30] = 0.014;
  fit.fractions[31 + 30] = 0.65;
  const SpectrumFit d = deduct_eaec_anisotropy(fit, 0.04);
  EXPECT_EQ(d.fractions[30], 0.0);
  EXPECT_NEAR(d.fractions[20], 0.336, 1e-15);
  EXPECT_NEAR(d.eaec_removed, 0.014, 1e-15);

  fit.fractions[30] = 0.01;
  const SpectrumFit spill = deduct_eaec_anisotropy(fit, 0.04);
  EXPECT_EQ(spill.fractions[30], 0.0);
  EXPECT_NEAR(spill.fiber_fraction(), 0.96 * 0.346, 1e-12);
  EXPECT_NEAR(anisotropic_proportions(spill).sum(), 1.0, 1e-12);

  EXPECT_EQ(deduct_eaec_anisotropy(fit, 0.0).fractions, fit.fractions);
  fit.fractions.head(31).setZero();
  try {
    deduct_eaec_anisotropy(fit, 0.04);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientMass);
  }
}

TEST(AdcSpectrum, MonoExponentialLandsOnItsGridPoint) {
  const GradientScheme& s = scheme();
  const auto [sub, sig] = select_acquisitions(s, to_std(iso_curve(s, 0.1)),
                                              [](const PgseAcquisition& a) { return a.direction.z() == 0.0; });
  EXPECT_EQ(sub.size(), 1u + 2u * 24u);
  EXPECT_EQ(sub[sub.b0_index()].b, 0.0);
  const AdcSpectrum a = fit_adc_spectrum(sig, sub, BasisGrid::uniform().iso_d, 0.0);
  EXPECT_NEAR(a.fractions[1], 1.0, 1e-6);
  EXPECT_NEAR(a.mass_below(0.2), 1.0, 1e-6);
}
