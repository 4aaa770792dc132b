#pragma once

#include "radsim/geometry.hpp"
#include "radsim/parallel.hpp"
#include "radsim/rng.hpp"
#include "radsim/sequence.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <random>
#include <string>
#include <vector>

namespace radsim {

/// Per-fiber intra-axonal diffusivity assignment.
struct HealthMix {
  double fraction_healthy = 1.0;
  double d_healthy = 2.0;   // um^2/ms
  double d_diseased = 1.0;  // um^2/ms
};

/// Record the first `spins` spins every `stride` steps.
struct TrajectoryOptions {
  std::size_t spins = 0;
  std::size_t stride = 1;
};

struct WalkConfig {
  std::size_t n_spins = 100000;
  double timestep_ms = 0.005;
  /// Unset: derived from the scheme's echo span.
  std::optional<std::size_t> n_steps;
  double d_ia = 2.0;
  double d_icea = 3.0;
  double d_eaec = 3.0;
  std::uint64_t seed = 1;
  std::optional<HealthMix> health_mix;
  std::optional<TrajectoryOptions> trajectory;
  /// Walk only spins starting in this compartment; the rest stay put.
  std::optional<Compartment> walk_only;
  unsigned threads = 0;
};

struct TrajectoryPoint {
  std::uint32_t spin;
  std::uint32_t step;
  float x, y, z;
};

struct SpinEnsemble {
  std::vector<Vec3> positions;
  std::vector<Vec3> start_positions;
  /// Displacement since the start, unfolded across the mirror faces.
  std::vector<Vec3> displacements;
  std::vector<Compartment> compartment;
  /// Fiber id for IA spins, cell id for ICEA spins, -1 otherwise.
  std::vector<int> owner;
  /// Per spin: 0 only for IA spins inside a diseased fiber.
  std::vector<std::uint8_t> healthy;
  std::vector<double> diffusivity;
  /// Per fiber health flag (1 healthy); empty without fibers.
  std::vector<std::uint8_t> fiber_healthy;

  /// Gradient moments, `groups` per spin: integral of (x - x0) over the first
  /// pulse minus the second, um ms. Net phase = gamma G g . moment.
  std::size_t groups = 0;
  std::vector<Vec3> moments;

  std::size_t steps_taken = 0;
  double timestep = 0.0;
  std::size_t rejected_steps = 0;
  std::vector<std::uint32_t> rejections;  // per spin
  std::vector<TrajectoryPoint> trajectory;
  std::vector<std::string> warnings;

  std::size_t size() const { return positions.size(); }
  double elapsed() const { return static_cast<double>(steps_taken) * timestep; }
  const Vec3& moment(std::size_t spin, std::size_t group) const { return moments[spin * groups + group]; }
};

/// sqrt(6 D t_s), um.
inline double step_length(double diffusivity, double timestep) {
  if (diffusivity < 0.0 || timestep < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative D or timestep");
  return std::sqrt(6.0 * diffusivity * timestep);
}

/// Uniform unit vectors on the sphere (Marsaglia's disc method): the same
/// distribution as a normalized 3-D Gaussian draw at a fraction of the cost.
class DirectionSampler {
 public:
  template <class Rng>
  Vec3 operator()(Rng& rng) {
    for (;;) {
      const double u = signed_unit(rng());
      const double v = signed_unit(rng());
      const double s = u * u + v * v;
      if (s >= 1.0) continue;
      const double k = 2.0 * std::sqrt(1.0 - s);
      return {u * k, v * k, 1.0 - 2.0 * s};
    }
  }

 private:
  // Top 53 bits mapped onto [-1, 1).
  static double signed_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0; }
};

template <class Rng>
Vec3 sample_direction(Rng& rng) {
  DirectionSampler sampler;
  return sampler(rng);
}

namespace detail {

/// Roots of A t^2 + 2 B t + C = 0, ascending; false if none are real.
inline bool quadratic_roots(double A, double B, double C, double& lo, double& hi) {
  if (A <= 0.0) return false;
  const double disc = B * B - A * C;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  const double q = -(B + std::copysign(sq, B));
  if (q == 0.0) {
    lo = hi = 0.0;
    return true;
  }
  const double r1 = q / A;
  const double r2 = C / q;
  lo = std::min(r1, r2);
  hi = std::max(r1, r2);
  return true;
}

/// Folds x into [0, side] by reflection at both faces; `flipped` reports an
/// odd number of reflections.
inline double fold(double x, double side, bool& flipped) {
  flipped = false;
  if (x >= 0.0 && x <= side) return x;
  const double period = 2.0 * side;
  double m = x - period * std::floor(x / period);
  if (m >= period) m = 0.0;
  flipped = m > side;
  return flipped ? period - m : m;
}

}  // namespace detail

/// Moves spins through a voxel with impermeable cylinder and sphere walls.
/// Voxel faces are mirrors. Steps are proposed in a local frame that is
/// unfolded across the faces; each move reports the physical (folded) end
/// point, the displacement in that local frame, and which axes were folded,
/// so callers can keep an unfolded displacement record.
class Walker {
 public:
  enum class Outcome { kFree, kReflected, kRejected };

  struct Move {
    Vec3 position = Vec3::Zero();      // inside the voxel
    Vec3 displacement = Vec3::Zero();  // local frame, zero when rejected
    Vec3 flips = Vec3::Ones();         // -1 on axes folded an odd number of times
    Outcome outcome = Outcome::kRejected;
  };

  explicit Walker(const VoxelGeometry& geometry) : g_(geometry) {}

  Vec3 fold(const Vec3& p, Vec3& flips) const {
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
      bool flipped = false;
      out[i] = detail::fold(p[i], g_.side(), flipped);
      flips[i] = flipped ? -1.0 : 1.0;
    }
    return out;
  }

  /// True if the in-voxel point p lies in the spin's own compartment: the
  /// same fiber or cell for IA and ICEA spins.
  bool confined(const Vec3& p, Compartment c, int owner) const {
    const int fiber = g_.fiber_containing(p);
    switch (c) {
      case Compartment::IA: return fiber == owner;
      case Compartment::ICEA: return fiber < 0 && g_.cell_containing(p) == owner;
      case Compartment::EAEC: return fiber < 0 && g_.cell_containing(p) < 0;
    }
    return false;
  }

  /// One step of displacement `step` from p. The first wall crossed is
  /// handled by a specular bounce; if the bounced remainder crosses another
  /// wall or ends outside the compartment the step is rejected and the spin
  /// stays put.
  Move advance(const Vec3& p, Compartment c, int owner, const Vec3& step) const {
    Move m;
    m.position = p;
    const Hit first = first_hit(p, step, c, owner, 0.0);
    Vec3 moved = step;
    if (first.t <= 1.0) {
      const Vec3 rest = (1.0 - first.t) * step;
      const Vec3 bounced = rest - 2.0 * rest.dot(first.normal) * first.normal;
      const Vec3 to_wall = first.t * step;
      if (first_hit(p + to_wall, bounced, c, owner, 1e-9).t <= 1.0) return m;
      moved = to_wall + bounced;
    }
    Vec3 flips;
    const Vec3 end = fold(p + moved, flips);
    if (!confined(end, c, owner)) return m;
    m.position = end;
    m.displacement = moved;
    m.flips = flips;
    m.outcome = first.t <= 1.0 ? Outcome::kReflected : Outcome::kFree;
    return m;
  }

 private:
  struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
  };

  /// Frame used to test a segment against the mirror image of the
  /// substrate: point and direction are reflected, normals map back.
  struct Frame {
    Vec3 origin;
    Vec3 direction;
    Vec3 mirror;  // per-axis sign
  };

  static void keep(Hit& best, double t, double t_min, const Vec3& normal) {
    if (t > t_min && t <= 1.0 && t < best.t) best = {t, normal};
  }

  void cylinder(Hit& best, const Frame& f, const Eigen::Vector2d& axis, bool exiting, double t_min) const {
    const Vec3& a = f.origin;
    const Vec3& d = f.direction;
    const double r = g_.fiber_radius();
    const double px = a.x() - axis.x();
    const double py = a.y() - axis.y();
    double lo = 0.0, hi = 0.0;
    if (!detail::quadratic_roots(d.x() * d.x() + d.y() * d.y(), px * d.x() + py * d.y(), px * px + py * py - r * r,
                                 lo, hi))
      return;
    const double t = exiting ? hi : lo;
    if (!(t > t_min && t <= 1.0 && t < best.t)) return;
    const double hx = px + t * d.x();
    const double hy = py + t * d.y();
    const double hn = std::sqrt(hx * hx + hy * hy);
    const Vec3 n = hn > 0.0 ? Vec3(hx / hn, hy / hn, 0.0) : Vec3::UnitX();
    keep(best, t, t_min, n.cwiseProduct(f.mirror));
  }

  void sphere(Hit& best, const Frame& f, const Vec3& center, bool exiting, double t_min) const {
    const double r = g_.cell_radius();
    const Vec3 pc = f.origin - center;
    const Vec3& d = f.direction;
    double lo = 0.0, hi = 0.0;
    if (!detail::quadratic_roots(d.squaredNorm(), pc.dot(d), pc.squaredNorm() - r * r, lo, hi)) return;
    const double t = exiting ? hi : lo;
    if (!(t > t_min && t <= 1.0 && t < best.t)) return;
    keep(best, t, t_min, (pc + t * d).normalized().cwiseProduct(f.mirror));
  }

  /// Entry crossings into fibers near the frame origin.
  void fibers_near(Hit& best, const Frame& f, double len, double t_min) const {
    const Lattice1D& fl = g_.fiber_lattice();
    const Vec3& a = f.origin;
    const int ci = fl.nearest(a.x());
    const int cj = fl.nearest(a.y());
    const double reach = (g_.fiber_radius() + len) * (g_.fiber_radius() + len);
    const auto dist2 = [&](int i, int j) {
      const double dx = a.x() - fl.at(i);
      const double dy = a.y() - fl.at(j);
      return dx * dx + dy * dy;
    };
    // Pitch exceeds the fiber diameter plus a step, so only the neighbors of
    // the nearest axis can be reached, and only if that axis can.
    if (dist2(ci, cj) > reach) return;
    for (int i = std::max(0, ci - 1); i <= std::min(fl.count - 1, ci + 1); ++i)
      for (int j = std::max(0, cj - 1); j <= std::min(fl.count - 1, cj + 1); ++j)
        if (dist2(i, j) <= reach) cylinder(best, f, {fl.at(i), fl.at(j)}, false, t_min);
  }

  /// Entry crossings into cells near the frame origin.
  void cells_near(Hit& best, const Frame& f, double len, double t_min) const {
    const Lattice1D& cl = g_.cell_lattice();
    const Vec3& a = f.origin;
    const int ci = cl.nearest(a.x());
    const int cj = cl.nearest(a.y());
    const int ck = cl.nearest(a.z());
    const double reach = (g_.cell_radius() + len) * (g_.cell_radius() + len);
    if ((a - g_.cell_center(ci, cj, ck)).squaredNorm() > reach) return;
    for (int i = std::max(0, ci - 1); i <= std::min(cl.count - 1, ci + 1); ++i)
      for (int j = std::max(0, cj - 1); j <= std::min(cl.count - 1, cj + 1); ++j)
        for (int k = std::max(0, ck - 1); k <= std::min(cl.count - 1, ck + 1); ++k) {
          const Vec3 center = g_.cell_center(i, j, k);
          if ((a - center).squaredNorm() <= reach) sphere(best, f, center, false, t_min);
        }
  }

  /// Earliest crossing, in segment parameter t in (t_min, 1], of any wall the
  /// spin must not pass. Near a face the segment is also tested against the
  /// mirror image of the substrate across it.
  Hit first_hit(const Vec3& a, const Vec3& d, Compartment c, int owner, double t_min) const {
    Hit best;
    const double len = d.norm();
    const Frame base{a, d, Vec3::Ones()};

    // Own walls lie inside the voxel, away from the faces.
    if (c == Compartment::IA) {
      const Eigen::Vector2d axis = g_.fiber_axis(owner);
      const double ax = a.x() - axis.x();
      const double ay = a.y() - axis.y();
      const double radial = std::sqrt(ax * ax + ay * ay);
      if (radial + len >= g_.fiber_radius()) cylinder(best, base, axis, true, t_min);
      return best;
    }
    if (c == Compartment::ICEA) {
      const Vec3 center = g_.cell_center(owner);
      if ((a - center).norm() + len >= g_.cell_radius()) sphere(best, base, center, true, t_min);
    }

    const bool fibers = g_.has_fibers();
    const bool cells = c == Compartment::EAEC && g_.has_cells();
    if (!fibers && !cells) return best;
    const auto probe = [&](const Frame& f) {
      if (fibers) fibers_near(best, f, len, t_min);
      if (cells) cells_near(best, f, len, t_min);
    };

    const double side = g_.side();
    const double reach = (cells ? g_.cell_radius() : g_.fiber_radius()) + len;
    if (a.minCoeff() >= reach && a.maxCoeff() <= side - reach) {
      probe(base);
      return best;
    }
    // Per axis: identity, plus the reflection through a face within reach.
    std::array<std::array<double, 2>, 3> offset{};
    std::array<int, 3> count{};
    for (int i = 0; i < 3; ++i) {
      count[i] = 1;
      if (a[i] < reach) offset[i][count[i]++] = 0.0;
      else if (a[i] > side - reach) offset[i][count[i]++] = 2.0 * side;
    }
    for (int ix = 0; ix < count[0]; ++ix)
      for (int iy = 0; iy < count[1]; ++iy)
        for (int iz = 0; iz < count[2]; ++iz) {
          const Vec3 m(ix ? -1.0 : 1.0, iy ? -1.0 : 1.0, iz ? -1.0 : 1.0);
          const Vec3 o(offset[0][ix], offset[1][iy], offset[2][iz]);
          probe(Frame{o + a.cwiseProduct(m), d.cwiseProduct(m), m});
        }
    return best;
  }

  const VoxelGeometry& g_;
};

inline double compartment_diffusivity(const WalkConfig& cfg, Compartment c) {
  switch (c) {
    case Compartment::IA: return cfg.d_ia;
    case Compartment::ICEA: return cfg.d_icea;
    case Compartment::EAEC: return cfg.d_eaec;
  }
  return 0.0;
}

namespace detail {
inline constexpr std::uint64_t kInitStreamTag = 0x5A17'1A11'0000'0000ULL;
inline constexpr std::uint64_t kHealthStream = ~std::uint64_t{0};
}  // namespace detail

/// Spins uniform over the voxel, labelled by compartment. Under a health mix
/// whole fibers are marked diseased: round((1 - fraction_healthy) * fibers)
/// of them, chosen by a seeded shuffle.
inline SpinEnsemble init_spins(const VoxelGeometry& g, const WalkConfig& cfg) {
  if (cfg.n_spins == 0) throw Error(ErrorCode::kInvalidArgument, "n_spins must be positive");
  if (!(cfg.timestep_ms > 0.0)) throw Error(ErrorCode::kInvalidArgument, "timestep must be positive");
  for (double d : {cfg.d_ia, cfg.d_icea, cfg.d_eaec})
    if (d < 0.0 || d > 3.0) throw Error(ErrorCode::kInvalidArgument, "diffusivities must lie in [0, 3] um^2/ms");
  if (cfg.health_mix) {
    const auto& h = *cfg.health_mix;
    if (h.fraction_healthy < 0.0 || h.fraction_healthy > 1.0)
      throw Error(ErrorCode::kInvalidArgument, "fraction_healthy must lie in [0, 1]");
    for (double d : {h.d_healthy, h.d_diseased})
      if (d < 0.0 || d > 3.0) throw Error(ErrorCode::kInvalidArgument, "diffusivities must lie in [0, 3] um^2/ms");
  }

  SpinEnsemble e;
  const std::size_t n = cfg.n_spins;
  e.timestep = cfg.timestep_ms;
  e.positions.resize(n);
  e.compartment.resize(n);
  e.owner.resize(n);
  e.healthy.assign(n, 1);
  e.diffusivity.resize(n);

  if (g.has_fibers()) {
    e.fiber_healthy.assign(static_cast<std::size_t>(g.fiber_count()), 1);
    if (cfg.health_mix) {
      const std::size_t fibers = e.fiber_healthy.size();
      const auto diseased = static_cast<std::size_t>(
          std::llround((1.0 - cfg.health_mix->fraction_healthy) * static_cast<double>(fibers)));
      std::vector<std::size_t> order(fibers);
      std::iota(order.begin(), order.end(), std::size_t{0});
      StreamRng rng(cfg.seed, detail::kHealthStream);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < diseased; ++i) e.fiber_healthy[order[i]] = 0;
    }
  }

  std::uniform_real_distribution<double> uniform(0.0, g.side());
  for (std::size_t j = 0; j < n; ++j) {
    StreamRng rng(cfg.seed ^ detail::kInitStreamTag, j);
    Vec3 p(uniform(rng), uniform(rng), uniform(rng));
    e.positions[j] = p;
    const Compartment c = g.classify(p);
    e.compartment[j] = c;
    double d = compartment_diffusivity(cfg, c);
    if (c == Compartment::IA) {
      const int fiber = g.fiber_containing(p);
      e.owner[j] = fiber;
      if (cfg.health_mix) {
        const bool ok = e.fiber_healthy[static_cast<std::size_t>(fiber)] != 0;
        e.healthy[j] = ok ? 1 : 0;
        d = ok ? cfg.health_mix->d_healthy : cfg.health_mix->d_diseased;
      }
    } else if (c == Compartment::ICEA) {
      e.owner[j] = g.cell_containing(p);
    } else {
      e.owner[j] = -1;
    }
    e.diffusivity[j] = d;
  }
  e.start_positions = e.positions;
  e.displacements.assign(n, Vec3::Zero());

  if (g.has_fibers()) {
    double d_max = std::max({cfg.d_ia, cfg.d_icea, cfg.d_eaec});
    if (cfg.health_mix) d_max = std::max({d_max, cfg.health_mix->d_healthy, cfg.health_mix->d_diseased});
    if (step_length(d_max, cfg.timestep_ms) >= g.fiber_radius())
      e.warnings.push_back("step length reaches the fiber radius; walls are under-resolved");
  }
  return e;
}

namespace detail {

inline std::vector<std::size_t> spins_in(const SpinEnsemble& e, Compartment c) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < e.size(); ++j)
    if (e.compartment[j] == c) out.push_back(j);
  return out;
}

/// Walks the spins listed in `only`; without a list, every spin or those
/// selected by cfg.walk_only.
inline void walk(SpinEnsemble& e, const VoxelGeometry& g, const WalkConfig& cfg, std::size_t n_steps,
                 const GradientScheme* scheme, const std::vector<std::size_t>* only = nullptr) {
  std::vector<std::size_t> selected;
  if (!only && cfg.walk_only) {
    selected = spins_in(e, *cfg.walk_only);
    only = &selected;
  }
  const std::size_t n = e.size();
  const double ts = cfg.timestep_ms;
  std::vector<StepWindows> windows;
  if (scheme) {
    for (std::size_t k = 0; k < scheme->timing_groups(); ++k) {
      const auto [delta, Delta] = scheme->timing(k);
      windows.push_back(StepWindows::from_timing(delta, Delta, ts));
    }
  }
  const std::size_t groups = windows.size();
  e.groups = groups;
  e.moments.assign(n * groups, Vec3::Zero());

  const std::size_t traced = cfg.trajectory ? std::min(cfg.trajectory->spins, n) : 0;
  const std::size_t stride = cfg.trajectory ? std::max<std::size_t>(cfg.trajectory->stride, 1) : 1;
  std::vector<std::vector<TrajectoryPoint>> traces(traced);
  e.rejections.assign(n, 0);

  const Walker walker(g);
  const std::size_t count = only ? only->size() : n;
  parallel_for(count, cfg.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t j = only ? (*only)[i] : i;
      StreamRng rng(cfg.seed, j);
      DirectionSampler direction;
      Vec3 x = e.positions[j];
      Vec3 r = e.displacements[j];
      Vec3 parity = Vec3::Ones();
      const Compartment c = e.compartment[j];
      const int owner = e.owner[j];
      const double len = step_length(e.diffusivity[j], ts);
      Vec3* moment = groups ? &e.moments[j * groups] : nullptr;
      auto trace = [&](std::size_t step) {
        if (j < traced && step % stride == 0)
          traces[j].push_back({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(step),
                               static_cast<float>(x.x()), static_cast<float>(x.y()), static_cast<float>(x.z())});
      };
      for (std::size_t step = 0; step < n_steps; ++step) {
        trace(step);
        for (std::size_t k = 0; k < groups; ++k) {
          const int sign = windows[k].sign(step);
          if (sign != 0) moment[k] += (sign * ts) * r;
        }
        if (len == 0.0) continue;
        const Walker::Move move = walker.advance(x, c, owner, len * direction(rng));
        if (move.outcome == Walker::Outcome::kRejected) ++e.rejections[j];
        x = move.position;
        r += move.displacement.cwiseProduct(parity);
        parity = parity.cwiseProduct(move.flips);
      }
      trace(n_steps);
      e.positions[j] = x;
      e.displacements[j] = r;
    }
  });

  e.steps_taken = n_steps;
  e.rejected_steps = std::accumulate(e.rejections.begin(), e.rejections.end(), std::size_t{0});
  for (auto& t : traces) e.trajectory.insert(e.trajectory.end(), t.begin(), t.end());
}

}  // namespace detail

/// Walks freshly initialized spins without phase accrual. Requires n_steps.
inline SpinEnsemble simulate(const VoxelGeometry& g, const WalkConfig& cfg) {
  if (!cfg.n_steps) throw Error(ErrorCode::kDurationMismatch, "n_steps is required without a gradient scheme");
  SpinEnsemble e = init_spins(g, cfg);
  detail::walk(e, g, cfg, *cfg.n_steps, nullptr);
  return e;
}

/// Walks freshly initialized spins and accrues gradient moments for `scheme`.
/// The walk must cover the scheme's longest echo time.
inline SpinEnsemble simulate(const VoxelGeometry& g, const WalkConfig& cfg, const GradientScheme& scheme) {
  if (!(cfg.timestep_ms > 0.0)) throw Error(ErrorCode::kInvalidArgument, "timestep must be positive");
  const double span = scheme.echo_span();
  const auto needed = static_cast<std::size_t>(std::ceil(span / cfg.timestep_ms - 1e-9));
  const std::size_t n_steps = cfg.n_steps.value_or(needed);
  if (n_steps < needed)
    throw Error(ErrorCode::kDurationMismatch, "walk is shorter than the scheme's echo time");
  SpinEnsemble e = init_spins(g, cfg);
  detail::walk(e, g, cfg, n_steps, &scheme);
  return e;
}

/// Ensembles for several healthy-fiber fractions under one seed. A spin's
/// trajectory depends only on the seed, its index and its diffusivity, so all
/// spins are walked once at the healthy diffusivity and intra-axonal spins
/// once more at the diseased one; each result is then assembled per spin and
/// is bit-identical to simulate() with that fraction.
inline std::vector<SpinEnsemble> simulate_health_series(const VoxelGeometry& g, const WalkConfig& cfg,
                                                        const GradientScheme& scheme,
                                                        std::span<const double> fractions_healthy) {
  if (!cfg.health_mix) throw Error(ErrorCode::kInvalidArgument, "health series needs a health mix");
  if (!(cfg.timestep_ms > 0.0)) throw Error(ErrorCode::kInvalidArgument, "timestep must be positive");
  const auto needed = static_cast<std::size_t>(std::ceil(scheme.echo_span() / cfg.timestep_ms - 1e-9));
  const std::size_t n_steps = cfg.n_steps.value_or(needed);
  if (n_steps < needed) throw Error(ErrorCode::kDurationMismatch, "walk is shorter than the scheme's echo time");

  WalkConfig healthy_cfg = cfg;
  healthy_cfg.health_mix->fraction_healthy = 1.0;
  SpinEnsemble healthy = init_spins(g, healthy_cfg);
  detail::walk(healthy, g, healthy_cfg, n_steps, &scheme);

  WalkConfig diseased_cfg = cfg;
  diseased_cfg.health_mix->fraction_healthy = 0.0;
  SpinEnsemble diseased = init_spins(g, diseased_cfg);
  std::vector<std::size_t> axonal;
  if (!cfg.walk_only || *cfg.walk_only == Compartment::IA) axonal = detail::spins_in(diseased, Compartment::IA);
  detail::walk(diseased, g, diseased_cfg, n_steps, &scheme, &axonal);

  std::vector<SpinEnsemble> out;
  for (double fraction : fractions_healthy) {
    WalkConfig c = cfg;
    c.health_mix->fraction_healthy = fraction;
    SpinEnsemble e = init_spins(g, c);
    const std::size_t n = e.size();
    e.groups = healthy.groups;
    e.steps_taken = n_steps;
    e.moments.resize(healthy.moments.size());
    e.rejections.resize(n);
    std::vector<std::uint8_t> from_diseased(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
      from_diseased[j] = e.compartment[j] == Compartment::IA && !e.healthy[j];
      const SpinEnsemble& src = from_diseased[j] ? diseased : healthy;
      e.positions[j] = src.positions[j];
      e.displacements[j] = src.displacements[j];
      e.rejections[j] = src.rejections[j];
      for (std::size_t k = 0; k < e.groups; ++k) e.moments[j * e.groups + k] = src.moments[j * e.groups + k];
    }
    e.rejected_steps = std::accumulate(e.rejections.begin(), e.rejections.end(), std::size_t{0});
    for (const TrajectoryPoint& t : healthy.trajectory)
      if (!from_diseased[t.spin]) e.trajectory.push_back(t);
    for (const TrajectoryPoint& t : diseased.trajectory)
      if (from_diseased[t.spin]) e.trajectory.push_back(t);
    std::stable_sort(e.trajectory.begin(), e.trajectory.end(),
                     [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.spin < b.spin; });
    out.push_back(std::move(e));
  }
  return out;
}

struct DisplacementTensor {
  /// <R R^T> / (6 tau), the normalization written alongside the Einstein relation.
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();
  /// Eigenvalues of `tensor`, descending, with matching eigenvector columns.
  Vec3 eigenvalues = Vec3::Zero();
  Eigen::Matrix3d eigenvectors = Eigen::Matrix3d::Identity();
  /// <R_i^2> / (2 tau): the per-axis diffusivity that equals D for free diffusion.
  Vec3 per_axis = Vec3::Zero();
  std::size_t count = 0;

  double mean_diffusivity() const { return tensor.trace() / 3.0; }
};

inline DisplacementTensor displacement_tensor(const SpinEnsemble& e, double tau,
                                              std::optional<Compartment> filter = std::nullopt) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
  std::size_t count = 0;
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (filter && e.compartment[j] != *filter) continue;
    const Vec3& r = e.displacements[j];
    sum += r * r.transpose();
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::kEmptySelection, "no spins in the selected compartment");

  DisplacementTensor out;
  out.count = count;
  const Eigen::Matrix3d second = sum / static_cast<double>(count);
  out.tensor = second / (6.0 * tau);
  out.per_axis = second.diagonal() / (2.0 * tau);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(out.tensor);
  // Eigen returns ascending order.
  for (int i = 0; i < 3; ++i) {
    out.eigenvalues[i] = solver.eigenvalues()[2 - i];
    out.eigenvectors.col(i) = solver.eigenvectors().col(2 - i);
  }
  return out;
}

}  // namespace radsim
