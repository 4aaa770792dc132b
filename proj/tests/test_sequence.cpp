#include "radsim/sequence.hpp"
#include "radsim/signal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace radsim;

namespace {

GradientScheme short_scheme(std::vector<Vec3> dirs, std::vector<double> b) {
  return make_scheme(dirs, b, 1.0, 2.0);
}

}  // namespace

TEST(BValue, GammaAndUnits) {
  EXPECT_DOUBLE_EQ(units::kGamma, 2.6752218744e5);
  EXPECT_EQ(b_value(0.0, 6.0, 18.0), 0.0);
  const double g = gradient_for_b(1.0, 6.0, 18.0);
  EXPECT_NEAR(b_value(g, 6.0, 18.0), 1.0, 1e-12);
  EXPECT_NEAR(b_value(2.0 * g, 6.0, 18.0), 4.0, 1e-12);
  // gamma G delta = 1 / ms um gives b = Delta - delta / 3.
  EXPECT_NEAR(b_value(1.0 / (units::kGamma * 6.0), 6.0, 18.0), 16.0, 1e-12);
  EXPECT_THROW(b_value(1.0, 6.0, 5.0), Error);
  EXPECT_DOUBLE_EQ(units::b_to_s_per_mm2(3.0), 3000.0);
}

TEST(Scheme, DefaultLayout) {
  const GradientScheme s = default_scheme();
  EXPECT_EQ(s.size(), 76u);
  EXPECT_EQ(s.b0_index(), 0u);
  EXPECT_EQ(s.timing_groups(), 1u);
  EXPECT_DOUBLE_EQ(s.echo_span(), 24.0);
  EXPECT_NEAR(s[25].b, 3.0, 1e-12);
  EXPECT_EQ(s[25].direction, Vec3::UnitX());
  EXPECT_EQ(s[75].direction, Vec3::UnitZ());
}

TEST(Scheme, Validation) {
  std::vector<PgseAcquisition> none_at_b0{make_acquisition(Vec3::UnitX(), 1.0, 6.0, 18.0)};
  EXPECT_THROW(GradientScheme{none_at_b0}, Error);
  EXPECT_THROW(make_acquisition(Vec3::Zero(), 1.0, 6.0, 18.0), Error);
  const PgseAcquisition a = make_acquisition({2.0, 0.0, 0.0}, 1.0, 6.0, 18.0);
  EXPECT_EQ(a.direction, Vec3::UnitX());
}

TEST(Phase, StationarySpinAccruesNothing) {
  const GradientScheme s = short_scheme({Vec3::UnitX()}, {1.0});
  std::vector<double> phase(s.size(), 0.0);
  const double ts = 0.005;
  for (std::size_t step = 0; step < 600; ++step) accumulate_phase(phase, {3.0, -1.0, 2.0}, step, ts, s);
  for (double p : phase) EXPECT_NEAR(p, 0.0, 1e-9);
}

TEST(Phase, JumpBetweenPulses) {
  const GradientScheme s = short_scheme({Vec3::UnitX(), Vec3::UnitY()}, {1.0});
  const double ts = 0.005;
  const Vec3 jump(0.7, 0.0, 0.0);
  std::vector<double> phase(s.size(), 0.0);
  for (std::size_t step = 0; step < 600; ++step)
    accumulate_phase(phase, step < 300 ? Vec3::Zero() : jump, step, ts, s);
  const PgseAcquisition& x = s[1];
  EXPECT_NEAR(std::abs(phase[1]), units::kGamma * x.gradient * x.delta * 0.7, 1e-9);
  EXPECT_NEAR(phase[2], 0.0, 1e-12);
}

TEST(Phase, MomentFormMatchesStepwiseAccrual) {
  const GradientScheme s = short_scheme({Vec3(1, 1, 0).normalized(), Vec3::UnitZ()}, {0.5, 2.0});
  const StepWindows w = StepWindows::from_timing(1.0, 2.0, 0.005);
  std::vector<double> phase(s.size(), 0.0);
  Vec3 moment = Vec3::Zero();
  for (std::size_t step = 0; step < 600; ++step) {
    const Vec3 r(std::sin(0.01 * step), 0.002 * step, std::cos(0.03 * step) - 1.0);
    accumulate_phase(phase, r, step, 0.005, s);
    moment += (w.sign(step) * 0.005) * r;
  }
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(phase[k], phase_from_moment(s[k], moment), 1e-9) << k;
}

TEST(Signal, FreeWaterDecaysAsExpMinusBD) {
  const VoxelGeometry g(50.0, std::nullopt, std::nullopt);
  const GradientScheme s = short_scheme({Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()}, {1.0});
  WalkConfig cfg;
  cfg.n_spins = 100000;
  const SpinEnsemble e = simulate(g, cfg, s);
  const SignalVector sig = synthesize_signal(e, s);
  EXPECT_EQ(sig.s[0], 1.0);
  const double mean = (sig.real[1] + sig.real[2] + sig.real[3]) / 3.0;
  EXPECT_NEAR(mean, std::exp(-3.0), 0.005);
}

TEST(Signal, IntraAxonalAxialDecay) {
  const VoxelGeometry g(30.0, FiberSpec{1.0, 3.0}, std::nullopt);
  const GradientScheme s = short_scheme({Vec3::UnitZ(), Vec3::UnitX(), -Vec3::UnitZ()}, {1.0});
  WalkConfig cfg;
  cfg.n_spins = 200000;
  cfg.walk_only = Compartment::IA;
  const SpinEnsemble e = simulate(g, cfg, s);
  const SignalVector sig = synthesize_signal(e, s, Compartment::IA);
  EXPECT_NEAR(sig.s[1], std::exp(-2.0), 0.01);
  // Restricted across the fiber: almost no decay.
  EXPECT_GT(sig.s[2], 0.95);
  // Reversing the gradient conjugates the signal.
  EXPECT_NEAR(sig.s[3], sig.s[1], 1e-12);
  EXPECT_NEAR(std::arg(sig.mean[3]), -std::arg(sig.mean[1]), 1e-9);

  const SignalVector share = synthesize_signal(e, s, Compartment::IA, 0, Normalization::kEnsemble);
  const double ia = static_cast<double>(detail::spins_in(e, Compartment::IA).size()) / e.size();
  EXPECT_EQ(share.s[0], ia);
  EXPECT_NEAR(share.s[1], ia * sig.s[1], 1e-12);
}

TEST(Signal, IndependentOfThreadCount) {
  const VoxelGeometry g(30.0, FiberSpec{1.0, 3.0}, std::nullopt);
  const GradientScheme s = default_scheme();
  WalkConfig cfg;
  cfg.n_spins = 500;
  const SpinEnsemble e = simulate(g, cfg, s);
  EXPECT_EQ(synthesize_signal(e, s, std::nullopt, 1).s, synthesize_signal(e, s, std::nullopt, 4).s);
}

TEST(Signal, RequiresMatchingScheme) {
  const VoxelGeometry g(10.0, std::nullopt, std::nullopt);
  WalkConfig cfg;
  cfg.n_spins = 10;
  cfg.n_steps = 5;
  const SpinEnsemble e = simulate(g, cfg);
  EXPECT_THROW(synthesize_signal(e, default_scheme()), Error);
}
