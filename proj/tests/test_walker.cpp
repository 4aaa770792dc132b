#include "radsim/walker.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace radsim;

namespace {

// One fiber of radius 1 along z through (6, 6).
VoxelGeometry single_fiber() { return VoxelGeometry(12.0, FiberSpec{1.0, 12.0}, std::nullopt); }

VoxelGeometry empty_voxel(double side) { return VoxelGeometry(side, std::nullopt, std::nullopt); }

GradientScheme short_scheme() {
  const std::vector<Vec3> dirs{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  const std::vector<double> b{0.5, 1.0};
  return make_scheme(dirs, b, 1.0, 2.0);
}

void expect_same_walk(const SpinEnsemble& a, const SpinEnsemble& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    ASSERT_EQ(a.positions[j], b.positions[j]) << j;
    ASSERT_EQ(a.displacements[j], b.displacements[j]) << j;
  }
  ASSERT_EQ(a.moments, b.moments);
  EXPECT_EQ(a.rejected_steps, b.rejected_steps);
}

}  // namespace

TEST(StepLength, Values) {
  EXPECT_DOUBLE_EQ(step_length(3.0, 0.005), 0.3);
  EXPECT_EQ(step_length(0.0, 0.005), 0.0);
  EXPECT_DOUBLE_EQ(step_length(2.0, 0.005), std::sqrt(0.06));
  EXPECT_THROW(step_length(-1.0, 0.005), Error);
}

TEST(Directions, UnitAndIsotropic) {
  StreamRng rng(5, 0);
  DirectionSampler sample;
  Vec3 sum = Vec3::Zero();
  Vec3 sq = Vec3::Zero();
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vec3 d = sample(rng);
    ASSERT_NEAR(d.norm(), 1.0, 1e-12);
    sum += d;
    sq += d.cwiseProduct(d);
  }
  const Vec3 mean = sum / n;
  EXPECT_LT(mean.norm(), 0.02);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT(std::abs(mean[i]), 0.01);
    EXPECT_NEAR(sq[i] / n, 1.0 / 3.0, 0.005);
  }
}

TEST(Walker, FreeStepKeepsItsLength) {
  const VoxelGeometry g = empty_voxel(20.0);
  const Walker w(g);
  StreamRng rng(1, 0);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 step = 0.3 * sample_direction(rng);
    const Walker::Move m = w.advance({10.0, 10.0, 10.0}, Compartment::EAEC, -1, step);
    ASSERT_EQ(m.outcome, Walker::Outcome::kFree);
    ASSERT_NEAR(m.displacement.norm(), 0.3, 1e-12);
    ASSERT_NEAR((m.position - Vec3(10.0, 10.0, 10.0) - step).norm(), 0.0, 1e-12);
  }
}

TEST(Walker, MirrorFaceFoldsPositionButNotDisplacement) {
  const VoxelGeometry g = empty_voxel(10.0);
  const Walker::Move m = Walker(g).advance({0.1, 5.0, 5.0}, Compartment::EAEC, -1, {-0.3, 0.0, 0.0});
  EXPECT_NEAR(m.position.x(), 0.2, 1e-12);
  EXPECT_EQ(m.displacement, Vec3(-0.3, 0.0, 0.0));
  EXPECT_EQ(m.flips, Vec3(-1.0, 1.0, 1.0));
}

TEST(Walker, RadialStepReflectsAtTheWall) {
  const VoxelGeometry g = single_fiber();
  const Walker::Move m = Walker(g).advance({6.9, 6.0, 5.0}, Compartment::IA, 0, {0.2, 0.0, 0.0});
  EXPECT_EQ(m.outcome, Walker::Outcome::kReflected);
  EXPECT_NEAR(m.position.x(), 6.9, 1e-12);
  EXPECT_NEAR(m.displacement.norm(), 0.0, 1e-12);
}

TEST(Walker, ObliqueStepFollowsSpecularReflection) {
  const VoxelGeometry g = single_fiber();
  const Vec3 p(6.6, 6.1, 5.0);
  const Vec3 d(0.5, 0.25, 0.1);
  // Circle crossing of the xy projection, then the mirror rule r' = r - 2 (r.n) n.
  const double px = p.x() - 6.0, py = p.y() - 6.0;
  const double a = d.x() * d.x() + d.y() * d.y();
  const double b = 2.0 * (px * d.x() + py * d.y());
  const double c = px * px + py * py - 1.0;
  const double t = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
  ASSERT_GT(t, 0.0);
  ASSERT_LT(t, 1.0);
  const Vec3 hit = p + t * d;
  const Vec3 n(hit.x() - 6.0, hit.y() - 6.0, 0.0);
  const Vec3 rest = (1.0 - t) * d;
  const Vec3 expected = hit + rest - 2.0 * rest.dot(n) * n;

  const Walker::Move m = Walker(g).advance(p, Compartment::IA, 0, d);
  ASSERT_EQ(m.outcome, Walker::Outcome::kReflected);
  EXPECT_NEAR((m.position - expected).norm(), 0.0, 1e-12);
  EXPECT_NEAR(m.displacement.z(), 0.1, 1e-15);
  EXPECT_NEAR((m.displacement - (expected - p)).norm(), 0.0, 1e-12);
}

TEST(Walker, SpinsStayInTheirCompartment) {
  const VoxelGeometry g = build_voxel(GeometryConfig{});
  WalkConfig cfg;
  cfg.n_spins = 2000;
  cfg.n_steps = 1500;
  cfg.seed = 17;
  const SpinEnsemble e = simulate(g, cfg);
  for (std::size_t j = 0; j < e.size(); ++j) {
    const Vec3& p = e.positions[j];
    ASSERT_EQ(g.classify(p), e.compartment[j]) << j;
    if (e.compartment[j] == Compartment::IA) {
      ASSERT_EQ(g.fiber_containing(p), e.owner[j]);
    }
    if (e.compartment[j] == Compartment::ICEA) {
      ASSERT_EQ(g.cell_containing(p), e.owner[j]);
    }
  }
  EXPECT_LT(static_cast<double>(e.rejected_steps) / (e.size() * 1500.0), 1e-3);
}

TEST(Walker, ZeroStepsLeavesSpinsAtTheirStart) {
  const VoxelGeometry g = single_fiber();
  WalkConfig cfg;
  cfg.n_spins = 300;
  cfg.n_steps = 0;
  const SpinEnsemble e = simulate(g, cfg);
  EXPECT_EQ(e.positions, e.start_positions);
  for (const Vec3& r : e.displacements) EXPECT_EQ(r, Vec3::Zero());
}

TEST(Walker, StationarySpinsHaveZeroTensor) {
  WalkConfig cfg;
  cfg.n_spins = 200;
  cfg.n_steps = 50;
  cfg.d_eaec = 0.0;
  const SpinEnsemble e = simulate(empty_voxel(10.0), cfg);
  const DisplacementTensor d = displacement_tensor(e, e.elapsed());
  EXPECT_EQ(d.tensor, Eigen::Matrix3d::Zero());
}

TEST(Walker, FreeDiffusionFollowsEinstein) {
  WalkConfig cfg;
  cfg.n_spins = 4000;
  cfg.n_steps = 2000;
  const SpinEnsemble e = simulate(empty_voxel(50.0), cfg);
  const DisplacementTensor d = displacement_tensor(e, e.elapsed());
  // Per-axis relative sd is sqrt(2 / n) ~ 2.2%.
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.per_axis[i], 3.0, 0.3);
  EXPECT_NEAR(d.mean_diffusivity(), 1.0, 0.06);
  EXPECT_NEAR(d.per_axis.mean(), 3.0, 0.18);
}

TEST(Walker, IntraAxonalMotionIsAxial) {
  const VoxelGeometry g(30.0, FiberSpec{1.0, 3.0}, std::nullopt);
  WalkConfig cfg;
  cfg.n_spins = 3000;
  cfg.n_steps = 4800;
  cfg.walk_only = Compartment::IA;
  const SpinEnsemble e = simulate(g, cfg);
  const DisplacementTensor d = displacement_tensor(e, e.elapsed(), Compartment::IA);
  EXPECT_LT(d.per_axis.x(), 0.05);
  EXPECT_LT(d.per_axis.y(), 0.05);
  EXPECT_NEAR(d.per_axis.z(), 2.0, 0.3);
  for (std::size_t j : detail::spins_in(e, Compartment::EAEC)) ASSERT_EQ(e.positions[j], e.start_positions[j]);
}

TEST(Walker, UniformDensityIsPreserved) {
  // A uniform start in a structured voxel must stay uniform over the
  // extra-axonal space: compare the final histogram with the expected one.
  const VoxelGeometry g(12.0, FiberSpec{1.0, 3.0}, std::nullopt);
  WalkConfig cfg;
  cfg.n_spins = 30000;
  cfg.n_steps = 400;
  cfg.walk_only = Compartment::EAEC;
  const SpinEnsemble e = simulate(g, cfg);
  constexpr int bins = 6;
  const auto bin = [&](const Vec3& p) {
    const auto b = [&](double x) { return std::min(bins - 1, static_cast<int>(x / g.side() * bins)); };
    return (b(p.x()) * bins + b(p.y())) * bins + b(p.z());
  };
  std::vector<double> expected(bins * bins * bins, 0.0), observed(expected.size(), 0.0);
  StreamRng rng(2, 0);
  std::uniform_real_distribution<double> u(0.0, g.side());
  std::size_t inside = 0;
  for (int i = 0; i < 2'000'000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (g.classify(p) != Compartment::EAEC) continue;
    expected[bin(p)] += 1.0;
    ++inside;
  }
  std::size_t walked = 0;
  for (std::size_t j = 0; j < e.size(); ++j)
    if (e.compartment[j] == Compartment::EAEC) {
      observed[bin(e.positions[j])] += 1.0;
      ++walked;
    }
  double chi2 = 0.0;
  int dof = -1;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const double ex = expected[k] / inside * walked;
    if (ex <= 0.0) continue;
    chi2 += (observed[k] - ex) * (observed[k] - ex) / ex;
    ++dof;
  }
  const boost::math::chi_squared dist(dof);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 1e-3) << "chi2 " << chi2 << " dof " << dof;
}

TEST(Walker, DeterministicAcrossThreadCounts) {
  const VoxelGeometry g(30.0, FiberSpec{1.0, 3.0}, std::nullopt);
  WalkConfig cfg;
  cfg.n_spins = 1500;
  cfg.seed = 23;
  cfg.threads = 1;
  const SpinEnsemble a = simulate(g, cfg, short_scheme());
  cfg.threads = 3;
  const SpinEnsemble b = simulate(g, cfg, short_scheme());
  expect_same_walk(a, b);
}

TEST(Walker, RejectsShortWalks) {
  WalkConfig cfg;
  cfg.n_spins = 10;
  cfg.n_steps = 10;
  try {
    simulate(empty_voxel(10.0), cfg, short_scheme());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDurationMismatch);
  }
  cfg.n_spins = 0;
  EXPECT_THROW(simulate(empty_voxel(10.0), cfg), Error);
}

TEST(Health, DiseasedFiberCountIsRounded) {
  const VoxelGeometry g = build_voxel(GeometryConfig{});
  WalkConfig cfg;
  cfg.n_spins = 1000;
  cfg.health_mix = HealthMix{0.7, 2.0, 1.0};
  const SpinEnsemble e = init_spins(g, cfg);
  std::size_t healthy = 0;
  for (auto h : e.fiber_healthy) healthy += h;
  EXPECT_EQ(e.fiber_healthy.size(), 1089u);
  EXPECT_EQ(healthy, 762u);
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (e.compartment[j] != Compartment::IA) continue;
    EXPECT_EQ(e.healthy[j], e.fiber_healthy[e.owner[j]]);
    EXPECT_EQ(e.diffusivity[j], e.healthy[j] ? 2.0 : 1.0);
  }
}

TEST(Health, SeriesMatchesDirectSimulation) {
  const VoxelGeometry g(30.0, FiberSpec{1.0, 3.0}, std::nullopt);
  WalkConfig cfg;
  cfg.n_spins = 1500;
  cfg.seed = 5;
  cfg.health_mix = HealthMix{1.0, 2.0, 1.0};
  const std::vector<double> fractions{1.0, 0.7, 0.3};
  const auto series = simulate_health_series(g, cfg, short_scheme(), fractions);
  ASSERT_EQ(series.size(), fractions.size());
  for (std::size_t m = 0; m < fractions.size(); ++m) {
    WalkConfig c = cfg;
    c.health_mix->fraction_healthy = fractions[m];
    expect_same_walk(series[m], simulate(g, c, short_scheme()));
  }
  // All healthy at D_IA is the plain walk.
  WalkConfig plain = cfg;
  plain.health_mix.reset();
  expect_same_walk(series[0], simulate(g, plain, short_scheme()));
}

TEST(Trajectory, RecordsStride) {
  WalkConfig cfg;
  cfg.n_spins = 10;
  cfg.n_steps = 100;
  cfg.trajectory = TrajectoryOptions{3, 25};
  const SpinEnsemble e = simulate(empty_voxel(10.0), cfg);
  ASSERT_EQ(e.trajectory.size(), 3u * 5u);
  EXPECT_EQ(e.trajectory.front().step, 0u);
  EXPECT_EQ(e.trajectory[4].step, 100u);
  EXPECT_FLOAT_EQ(e.trajectory.back().x, static_cast<float>(e.positions[2].x()));
}
