#include "radsim/rads.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace radsim;

namespace {

const GradientScheme& scheme() {
  static const GradientScheme s = default_scheme();
  return s;
}

Eigen::VectorXd axial_curve(double lpar) {
  const GradientScheme& s = scheme();
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double c = s[k].direction.z();
    v[static_cast<Eigen::Index>(k)] = std::exp(-s[k].b * lpar * c * c);
  }
  return v;
}

}  // namespace

TEST(Bic, Arithmetic) {
  // 76 ln(1e-4 / 76) + 2 ln 76, evaluated separately in double precision.
  EXPECT_NEAR(bic(1e-4, 76), -1020.4601354513784, 1e-9);
  EXPECT_LT(bic(1e-4, 76), bic(2e-4, 76));
  EXPECT_NEAR(bic(3e-4, 76) - bic(1e-4, 76), 76.0 * std::log(3.0), 1e-9);
  EXPECT_EQ(bic(0.0, 76), bic(1e-40, 76));
  EXPECT_THROW(bic(-1.0, 76), Error);
}

TEST(RadsDesign, Columns) {
  const GradientScheme& s = scheme();
  const BasisGrid grid = BasisGrid::uniform();
  const RadsBasis b = rads_design(s, grid, 10);
  EXPECT_EQ(b.candidate[0], 1.0);
  EXPECT_EQ(b.healthy[0], 1.0);
  ASSERT_NEAR(s[59].b, 1.0, 1e-12);
  EXPECT_NEAR(b.candidate[59], std::exp(-1.0), 1e-14);
  EXPECT_NEAR(b.healthy[59], std::exp(-2.0), 1e-14);
  for (std::size_t k = 1; k <= 25; ++k) {
    EXPECT_EQ(b.candidate[static_cast<Eigen::Index>(k)], 1.0);
    EXPECT_EQ(b.healthy[static_cast<Eigen::Index>(k)], 1.0);
  }
  for (std::size_t bad : {std::size_t{20}, std::size_t{31}}) {
    try {
      rads_design(s, grid, bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kOffGrid);
    }
  }
}

TEST(FitCandidate, EndpointsAndMidpoint) {
  const RadsBasis b = rads_design(scheme(), BasisGrid::uniform(), 10);
  const RadsCandidate healthy = fit_candidate(b.healthy, b);
  EXPECT_EQ(healthy.f, 0.0);
  EXPECT_NEAR(healthy.rss, 0.0, 1e-28);
  const RadsCandidate diseased = fit_candidate(b.candidate, b);
  EXPECT_NEAR(diseased.f, 1.0, 1e-12);
  EXPECT_NEAR(diseased.rss, 0.0, 1e-24);
  EXPECT_NEAR(fit_candidate(0.5 * b.healthy + 0.5 * b.candidate, b).f, 0.5, 1e-9);
  // Out-of-range optimum is clamped.
  EXPECT_EQ(fit_candidate(1.5 * b.candidate - 0.5 * b.healthy, b).f, 1.0);
}

TEST(FitRads, RecoversEveryOnGridMixture) {
  const BasisGrid grid = BasisGrid::uniform();
  const Eigen::VectorXd healthy = axial_curve(2.0);
  int exact = 0, total = 0;
  for (std::size_t i = 1; i < grid.n_aniso(); ++i) {
    if (i == grid.healthy_index()) continue;
    const Eigen::VectorXd cand = axial_curve(grid.lambda_par[i]);
    for (int step = 1; step <= 10; ++step) {
      const double f = 0.1 * step;
      const RadsResult r = fit_rads(f * cand + (1.0 - f) * healthy, scheme(), grid);
      ++total;
      if (r.chosen.index == i) ++exact;
      EXPECT_EQ(r.chosen.index, i) << "lambda " << grid.lambda_par[i] << " f " << f;
      EXPECT_NEAR(r.fraction_diseased(), f, 1e-6);
      EXPECT_EQ(r.fraction_healthy() + r.fraction_diseased(), 1.0);
      for (const auto& c : r.trace) EXPECT_GE(c.bic, r.chosen.bic);
    }
  }
  EXPECT_EQ(exact, total);
}

TEST(FitRads, HalfAndHalf) {
  const BasisGrid grid = BasisGrid::uniform();
  const RadsResult r = fit_rads(0.5 * axial_curve(1.0) + 0.5 * axial_curve(2.0), scheme(), grid);
  EXPECT_EQ(r.chosen.lambda_par, grid.lambda_par[10]);
  EXPECT_NEAR(r.chosen.f, 0.5, 1e-6);
  EXPECT_NEAR(r.average_axial_adc(), 1.5, 1e-6);
  EXPECT_EQ(r.trace.size(), 30u);
}

TEST(FitRads, PurelyHealthy) {
  const RadsResult r = fit_rads(axial_curve(2.0), scheme(), BasisGrid::uniform());
  EXPECT_NEAR(r.fraction_healthy(), 1.0, 1e-9);
  EXPECT_NEAR(r.average_axial_adc(), 2.0, 1e-9);
}

TEST(FitRads, ArgminSurvivesScaling) {
  const BasisGrid grid = BasisGrid::uniform();
  const Eigen::VectorXd s = 0.3 * axial_curve(0.7) + 0.7 * axial_curve(2.0);
  const GradientScheme& sc = scheme();
  std::size_t ref = 0;
  double ref_bic = INFINITY;
  for (double c : {1.0, 0.25, 4.0}) {
    std::size_t best = 0;
    double best_bic = INFINITY;
    for (std::size_t i = 0; i < grid.n_aniso(); ++i) {
      if (i == grid.healthy_index()) continue;
      RadsBasis b = rads_design(sc, grid, i);
      b.candidate *= c;
      b.healthy *= c;
      const double v = bic(fit_candidate(c * s, b).rss, sc.size());
      if (v < best_bic) {
        best_bic = v;
        best = i;
      }
    }
    if (c == 1.0) {
      ref = best;
      ref_bic = best_bic;
    }
    EXPECT_EQ(best, ref);
  }
  EXPECT_EQ(grid.lambda_par[ref], 0.7);
  EXPECT_LT(ref_bic, 0.0);
}

TEST(RadsInput, RescalesToUnitMass) {
  const GradientScheme& s = scheme();
  SpectrumFit fit;
  fit.grid = BasisGrid::uniform();
  fit.fractions = Eigen::VectorXd::Zero(62);
  fit.fractions[20] = 0.30;
  fit.fractions[30] = 0.02;
  fit.s_an = 0.30 * axial_curve(2.0) + 0.02 * axial_curve(3.0);
  SpectrumFit deducted = fit;
  deducted.fractions[30] = 0.0;
  const Eigen::VectorXd in = rads_input(fit, deducted, s);
  EXPECT_NEAR((in - axial_curve(2.0)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}
