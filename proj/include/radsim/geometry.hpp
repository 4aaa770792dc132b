#pragma once

#include "radsim/common.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace radsim {

enum class Compartment : std::uint8_t { IA = 0, ICEA = 1, EAEC = 2 };

inline constexpr std::array<Compartment, 3> kAllCompartments{Compartment::IA, Compartment::ICEA,
                                                             Compartment::EAEC};

inline std::string_view to_string(Compartment c) {
  switch (c) {
    case Compartment::IA: return "IA";
    case Compartment::ICEA: return "ICEA";
    case Compartment::EAEC: return "EAEC";
  }
  return "?";
}

/// Evenly spaced points origin + i * pitch, i in [0, count).
struct Lattice1D {
  double origin = 0.0;
  double pitch = 1.0;
  int count = 0;

  double at(int i) const { return origin + pitch * i; }

  /// Index of the nearest lattice point, clamped to the populated range.
  int nearest(double x) const {
    const int i = static_cast<int>(std::floor((x - origin) / pitch + 0.5));
    return std::clamp(i, 0, count - 1);
  }

  /// Lattice of `count` points centred in [0, side].
  static Lattice1D centred(double side, double pitch, int count) {
    return {0.5 * (side - pitch * count) + 0.5 * pitch, pitch, count};
  }
};

struct FiberSpec {
  double radius_um = 1.0;
  double pitch_um = 3.0;
};

struct CellSpec {
  double radius_um = 5.3;
  /// Exactly one of these is set.
  std::optional<double> fraction_target;
  std::optional<double> pitch_um;
};

struct GeometryConfig {
  double side_um = 99.0;
  std::optional<FiberSpec> fibers = FiberSpec{};
  std::optional<CellSpec> cells = CellSpec{5.3, 0.05, std::nullopt};
};

struct VolumeFractions {
  double fiber = 0.0;
  double cell = 0.0;
  double free = 1.0;
};

/// Volume of the intersection of a sphere of radius `sphere_radius` centred at
/// the origin with an infinite z-parallel cylinder of radius `fiber_radius`
/// whose axis passes through (a, b).
///
/// The triple integral over the cylinder cross-section is reduced to a single
/// x-integral: the z-extent is 2 sqrt(r^2 - x^2 - y^2) and its y-integral has a
/// closed form. The remaining integrand is split at the abscissa where the
/// cylinder and sphere silhouettes cross and each piece is integrated by
/// Gauss-Legendre quadrature after a cosine change of variable.
inline double fiber_in_sphere_volume(double sphere_radius, double a, double b, double fiber_radius) {
  if (!(sphere_radius > 0.0) || !(fiber_radius > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "radii must be positive");
  const double r = sphere_radius;
  const double r1 = fiber_radius;
  const double d = std::hypot(a, b);
  const double sphere = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  if (d >= r + r1) return 0.0;
  if (r1 >= d + r) return sphere;

  // Rotate the offset onto the +x axis; the volume is invariant.
  auto slab = [&](double x) {
    const double big = r * r - x * x;
    const double chord = r1 * r1 - (x - d) * (x - d);
    if (big <= 0.0 || chord <= 0.0) return 0.0;
    const double R = std::sqrt(big);
    const double Y = std::min(std::sqrt(chord), R);
    // integral_{-Y}^{Y} 2 sqrt(R^2 - y^2) dy
    const double ratio = std::clamp(Y / R, -1.0, 1.0);
    return 2.0 * (Y * std::sqrt(std::max(0.0, big - Y * Y)) + big * std::asin(ratio));
  };

  const double lo = std::max(d - r1, -r);
  const double hi = std::min(d + r1, r);
  if (hi <= lo) return 0.0;

  std::vector<double> cuts{lo};
  if (d > 0.0) {
    const double cross = (r * r - r1 * r1 + d * d) / (2.0 * d);
    if (cross > lo && cross < hi) cuts.push_back(cross);
  }
  cuts.push_back(hi);

  // x = mid - half cos(t) removes the square-root behaviour at both ends of a
  // piece; the transformed integrand is smooth and composite Gauss-Legendre
  // converges far below the 1e-6 relative budget.
  constexpr int kPanels = 8;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    const double half = 0.5 * (cuts[i + 1] - cuts[i]);
    if (half <= 0.0) continue;
    auto smooth = [&](double t) { return slab(mid - half * std::cos(t)) * half * std::sin(t); };
    for (int k = 0; k < kPanels; ++k)
      total += boost::math::quadrature::gauss<double, 20>::integrate(smooth, std::numbers::pi * k / kPanels,
                                                                     std::numbers::pi * (k + 1) / kPanels);
  }
  return std::clamp(total, 0.0, sphere);
}

/// Cubic lattice of equal spheres; the same 1-D lattice is used on every axis.
struct SphereLattice {
  double radius = 0.0;
  Lattice1D axis{};
};

/// Three-compartment voxel: a square lattice of z-parallel cylinders (axons)
/// and a cubic lattice of spheres (cells) inside the cube [0, side]^3.
/// Cylinders and spheres lie entirely inside the voxel. Immutable once built.
class VoxelGeometry {
 public:
  VoxelGeometry(double side, std::optional<FiberSpec> fibers, std::optional<SphereLattice> cells)
      : side_(side) {
    if (!(side > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel side must be positive");
    if (fibers) {
      if (!(fibers->radius_um > 0.0) || !(fibers->pitch_um > 0.0))
        throw Error(ErrorCode::kInvalidArgument, "fiber radius and pitch must be positive");
      if (fibers->radius_um >= 0.5 * fibers->pitch_um)
        throw Error(ErrorCode::kOverlappingFibers, "fiber radius must be below half the pitch");
      fiber_radius_ = fibers->radius_um;
      const int n = static_cast<int>(std::floor(side / fibers->pitch_um + 1e-9));
      fiber_lattice_ = Lattice1D::centred(side, fibers->pitch_um, n);
    }
    if (cells && cells->axis.count > 0) {
      const double r = cells->radius;
      const Lattice1D& ax = cells->axis;
      if (!(r > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cell radius must be positive");
      if (ax.count > 1 && ax.pitch < 2.0 * r - 1e-12)
        throw Error(ErrorCode::kInfeasibleTarget, "cell pitch below one diameter would overlap spheres");
      if (ax.at(0) < r - 1e-9 || ax.at(ax.count - 1) > side - r + 1e-9)
        throw Error(ErrorCode::kInfeasibleTarget, "cell spheres must lie inside the voxel");
      cell_radius_ = r;
      cell_lattice_ = ax;
    }
  }

  double side() const { return side_; }
  double volume() const { return side_ * side_ * side_; }

  bool has_fibers() const { return fiber_lattice_.count > 0; }
  bool has_cells() const { return cell_lattice_.count > 0; }
  double fiber_radius() const { return fiber_radius_; }
  double cell_radius() const { return cell_radius_; }
  const Lattice1D& fiber_lattice() const { return fiber_lattice_; }
  const Lattice1D& cell_lattice() const { return cell_lattice_; }

  int fibers_per_axis() const { return fiber_lattice_.count; }
  int fiber_count() const { return fiber_lattice_.count * fiber_lattice_.count; }
  int cells_per_axis() const { return cell_lattice_.count; }
  int cell_count() const { return cell_lattice_.count * cell_lattice_.count * cell_lattice_.count; }

  int fiber_id(int i, int j) const { return i * fiber_lattice_.count + j; }
  Eigen::Vector2d fiber_axis(int i, int j) const { return {fiber_lattice_.at(i), fiber_lattice_.at(j)}; }
  Eigen::Vector2d fiber_axis(int id) const {
    return fiber_axis(id / fiber_lattice_.count, id % fiber_lattice_.count);
  }

  int cell_id(int i, int j, int k) const {
    const int n = cell_lattice_.count;
    return (i * n + j) * n + k;
  }
  Vec3 cell_center(int i, int j, int k) const {
    return {cell_lattice_.at(i), cell_lattice_.at(j), cell_lattice_.at(k)};
  }
  Vec3 cell_center(int id) const {
    const int n = cell_lattice_.count;
    return cell_center(id / (n * n), (id / n) % n, id % n);
  }

  bool contains(const Vec3& p) const {
    return p.x() >= 0.0 && p.x() <= side_ && p.y() >= 0.0 && p.y() <= side_ && p.z() >= 0.0 &&
           p.z() <= side_;
  }

  /// Id of the fiber whose axis is nearest to p in the xy-plane, or -1.
  int nearest_fiber(const Vec3& p) const {
    if (!has_fibers()) return -1;
    return fiber_id(fiber_lattice_.nearest(p.x()), fiber_lattice_.nearest(p.y()));
  }

  /// Id of the cell whose center is nearest to p, or -1.
  int nearest_cell(const Vec3& p) const {
    if (!has_cells()) return -1;
    return cell_id(cell_lattice_.nearest(p.x()), cell_lattice_.nearest(p.y()), cell_lattice_.nearest(p.z()));
  }

  /// Id of the fiber containing p (boundary inclusive), or -1.
  int fiber_containing(const Vec3& p) const {
    if (!has_fibers()) return -1;
    const int i = fiber_lattice_.nearest(p.x());
    const int j = fiber_lattice_.nearest(p.y());
    const double dx = p.x() - fiber_lattice_.at(i);
    const double dy = p.y() - fiber_lattice_.at(j);
    return dx * dx + dy * dy <= fiber_radius_ * fiber_radius_ ? fiber_id(i, j) : -1;
  }

  /// Id of the cell sphere containing p (boundary inclusive), or -1.
  int cell_containing(const Vec3& p) const {
    if (!has_cells()) return -1;
    const int i = cell_lattice_.nearest(p.x());
    const int j = cell_lattice_.nearest(p.y());
    const int k = cell_lattice_.nearest(p.z());
    return (p - cell_center(i, j, k)).squaredNorm() <= cell_radius_ * cell_radius_ ? cell_id(i, j, k) : -1;
  }

  /// Compartment of a point inside the voxel; IA takes precedence over ICEA.
  Compartment classify(const Vec3& p) const {
    if (!contains(p)) throw Error(ErrorCode::kOutOfVoxel, "point lies outside the voxel");
    return classify_unchecked(p);
  }

  Compartment classify_unchecked(const Vec3& p) const {
    if (fiber_containing(p) >= 0) return Compartment::IA;
    if (cell_containing(p) >= 0) return Compartment::ICEA;
    return Compartment::EAEC;
  }

  /// Net sphere volume of one cell: its volume minus every fiber piercing it.
  double net_cell_volume(int id) const {
    const Vec3 c = cell_center(id);
    const double r = cell_radius_;
    double v = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    if (!has_fibers()) return v;
    const double reach = r + fiber_radius_;
    const int lo_i = fiber_lattice_.nearest(c.x() - reach);
    const int hi_i = fiber_lattice_.nearest(c.x() + reach);
    const int lo_j = fiber_lattice_.nearest(c.y() - reach);
    const int hi_j = fiber_lattice_.nearest(c.y() + reach);
    for (int i = lo_i; i <= hi_i; ++i) {
      for (int j = lo_j; j <= hi_j; ++j) {
        const Eigen::Vector2d axis = fiber_axis(i, j);
        v -= fiber_in_sphere_volume(r, axis.x() - c.x(), axis.y() - c.y(), fiber_radius_);
      }
    }
    return std::max(v, 0.0);
  }

  /// Total net cell volume over all spheres, um^3.
  double net_cell_volume() const {
    if (!has_cells()) return 0.0;
    // Cylinders are z-invariant, so the net volume only depends on the
    // xy-position of the sphere centre.
    const int n = cell_lattice_.count;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) total += n * net_cell_volume(cell_id(i, j, 0));
    return total;
  }

  VolumeFractions volume_fractions() const {
    VolumeFractions f;
    if (has_fibers())
      f.fiber = fiber_count() * std::numbers::pi * fiber_radius_ * fiber_radius_ / (side_ * side_);
    f.cell = net_cell_volume() / volume();
    f.free = 1.0 - f.fiber - f.cell;
    return f;
  }

 private:
  double side_;
  double fiber_radius_ = 0.0;
  double cell_radius_ = 0.0;
  Lattice1D fiber_lattice_{};
  Lattice1D cell_lattice_{};
};

namespace detail {

/// Sphere lattice with `count` spheres per axis. With fibers present the pitch
/// is a multiple of the fiber pitch and the centres sit on fiber-lattice
/// interstices, so every sphere is pierced identically; otherwise the spheres
/// tile the voxel at pitch side / count.
inline SphereLattice sphere_lattice_for_count(double side, const std::optional<FiberSpec>& fibers,
                                              double radius, int count) {
  if (count < 1) return {radius, {}};
  if (!fibers) return {radius, Lattice1D::centred(side, side / count, count)};

  const double fp = fibers->pitch_um;
  const Lattice1D fl = Lattice1D::centred(side, fp, static_cast<int>(std::floor(side / fp + 1e-9)));
  double pitch = side;
  if (count > 1) {
    const double widest = (side - 2.0 * radius) / (count - 1);
    pitch = std::floor(widest / fp + 1e-9) * fp;
    if (pitch < 2.0 * radius - 1e-12) return {radius, {0.0, 1.0, 0}};
  }
  const double ideal = 0.5 * (side - pitch * (count - 1));
  const double k0 = std::round((ideal - fl.origin) / fp - 0.5);
  for (double dk : {0.0, -1.0, 1.0, -2.0, 2.0}) {
    const Lattice1D ax{fl.origin + fp * (k0 + dk + 0.5), pitch, count};
    if (ax.at(0) >= radius - 1e-9 && ax.at(count - 1) <= side - radius + 1e-9) return {radius, ax};
  }
  return {radius, {0.0, 1.0, 0}};
}

inline SphereLattice sphere_lattice_for_pitch(double side, const std::optional<FiberSpec>& fibers,
                                              double radius, double pitch) {
  if (!(pitch > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cell pitch must be positive");
  if (pitch < 2.0 * radius - 1e-12)
    throw Error(ErrorCode::kInfeasibleTarget, "cell pitch below one diameter would overlap spheres");
  const int count = static_cast<int>(std::floor((side - 2.0 * radius) / pitch + 1e-9)) + 1;
  if (count < 1) throw Error(ErrorCode::kInfeasibleTarget, "cell radius exceeds half the voxel side");
  Lattice1D ax{0.5 * (side - pitch * (count - 1)), pitch, count};
  if (fibers) {
    // Snap onto the nearest interstice when the pitch is commensurate with the fiber lattice.
    const double fp = fibers->pitch_um;
    const double ratio = pitch / fp;
    if (std::abs(ratio - std::round(ratio)) < 1e-9) {
      const SphereLattice snapped = sphere_lattice_for_count(side, fibers, radius, count);
      if (snapped.axis.count == count && std::abs(snapped.axis.pitch - pitch) < 1e-9) return snapped;
      const Lattice1D fl = Lattice1D::centred(side, fp, static_cast<int>(std::floor(side / fp + 1e-9)));
      const double k0 = std::round((ax.origin - fl.origin) / fp - 0.5);
      for (double dk : {0.0, -1.0, 1.0}) {
        const Lattice1D cand{fl.origin + fp * (k0 + dk + 0.5), pitch, count};
        if (cand.at(0) >= radius - 1e-9 && cand.at(count - 1) <= side - radius + 1e-9) return {radius, cand};
      }
    }
  }
  return {radius, ax};
}

}  // namespace detail

/// Builds the voxel. A cell fraction target is met by bisecting on the number
/// of spheres per axis (the pitch follows from the count) and keeping the
/// lattice whose net cell fraction is closest to the target.
inline VoxelGeometry build_voxel(const GeometryConfig& cfg) {
  if (!(cfg.side_um > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel side must be positive");
  if (cfg.fibers && cfg.fibers->radius_um >= 0.5 * cfg.fibers->pitch_um)
    throw Error(ErrorCode::kOverlappingFibers, "fiber radius must be below half the pitch");
  if (!cfg.cells) return VoxelGeometry(cfg.side_um, cfg.fibers, std::nullopt);

  const CellSpec& cells = *cfg.cells;
  if (!(cells.radius_um > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cell radius must be positive");
  if (cells.pitch_um)
    return VoxelGeometry(cfg.side_um, cfg.fibers,
                         detail::sphere_lattice_for_pitch(cfg.side_um, cfg.fibers, cells.radius_um, *cells.pitch_um));
  if (!cells.fraction_target)
    throw Error(ErrorCode::kInvalidArgument, "cell block needs a fraction target or a pitch");

  const double target = *cells.fraction_target;
  if (target == 0.0) return VoxelGeometry(cfg.side_um, cfg.fibers, std::nullopt);
  if (!(target > 0.0) || target >= 1.0)
    throw Error(ErrorCode::kInfeasibleTarget, "cell fraction target must lie in [0, 1)");

  auto lattice_for = [&](int n) {
    return detail::sphere_lattice_for_count(cfg.side_um, cfg.fibers, cells.radius_um, n);
  };
  auto fraction_for = [&](int n) {
    return VoxelGeometry(cfg.side_um, cfg.fibers, lattice_for(n)).volume_fractions().cell;
  };

  int hi = static_cast<int>(std::floor(cfg.side_um / (2.0 * cells.radius_um) + 1e-9));
  while (hi >= 1 && lattice_for(hi).axis.count != hi) --hi;
  if (hi < 1) throw Error(ErrorCode::kInfeasibleTarget, "cell radius exceeds half the voxel side");
  if (fraction_for(hi) < target - 0.002)
    throw Error(ErrorCode::kInfeasibleTarget, "cell fraction target unreachable without overlapping spheres");

  int lo = 0;  // fraction_for(0) == 0
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    (fraction_for(mid) < target ? lo : hi) = mid;
  }
  const double f_lo = lo > 0 ? fraction_for(lo) : 0.0;
  const int best = std::abs(f_lo - target) <= std::abs(fraction_for(hi) - target) ? lo : hi;
  const double achieved = best > 0 ? fraction_for(best) : 0.0;
  if (best == 0 || std::abs(achieved - target) > 0.002)
    throw Error(ErrorCode::kInfeasibleTarget, "no sphere lattice reaches the cell fraction target within 0.2 points");
  return VoxelGeometry(cfg.side_um, cfg.fibers, lattice_for(best));
}

}  // namespace radsim
