#pragma once

#include "radsim/common.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

namespace radsim {

/// gamma^2 G^2 delta^2 (Delta - delta/3) in ms/um^2, with G in T/um and times in ms.
inline double b_value(double gradient, double delta, double Delta) {
  if (!(delta > 0.0) || Delta < delta)
    throw Error(ErrorCode::kInvalidArgument, "PGSE timing requires Delta >= delta > 0");
  const double q = units::kGamma * gradient * delta;
  return q * q * (Delta - delta / 3.0);
}

/// Gradient amplitude (T/um) that yields b-value `b` for the given timing.
inline double gradient_for_b(double b, double delta, double Delta) {
  if (b < 0.0) throw Error(ErrorCode::kInvalidArgument, "b-value must be non-negative");
  const double unit = b_value(1.0, delta, Delta);
  return std::sqrt(b / unit);
}

/// One rectangular-pulse PGSE acquisition. Pulse one spans [0, delta], pulse
/// two spans [Delta, Delta + delta]; the echo time is Delta + delta.
struct PgseAcquisition {
  Vec3 direction = Vec3::UnitZ();
  double gradient = 0.0;  // T/um
  double delta = 6.0;     // ms
  double Delta = 18.0;    // ms
  double b = 0.0;         // ms/um^2

  double t1() const { return 0.0; }
  double t2() const { return delta; }
  double t3() const { return Delta; }
  double t4() const { return Delta + delta; }
  double echo_time() const { return t4(); }
};

inline PgseAcquisition make_acquisition(const Vec3& direction, double b, double delta, double Delta) {
  const double norm = direction.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw Error(ErrorCode::kInvalidArgument, "gradient direction must be a non-zero vector");
  PgseAcquisition a;
  a.direction = direction / norm;
  a.delta = delta;
  a.Delta = Delta;
  a.gradient = gradient_for_b(b, delta, Delta);
  a.b = b_value(a.gradient, delta, Delta);
  return a;
}

/// Gradient pulse windows expressed in whole time steps.
struct StepWindows {
  std::size_t first_begin = 0;
  std::size_t first_end = 0;
  std::size_t second_begin = 0;
  std::size_t second_end = 0;

  /// +1 inside the first pulse, -1 inside the second, 0 otherwise.
  int sign(std::size_t step) const {
    if (step >= first_begin && step < first_end) return 1;
    if (step >= second_begin && step < second_end) return -1;
    return 0;
  }

  static StepWindows from_timing(double delta, double Delta, double timestep) {
    const auto to_steps = [&](double t) { return static_cast<std::size_t>(std::llround(t / timestep)); };
    return {0, to_steps(delta), to_steps(Delta), to_steps(Delta) + to_steps(delta)};
  }
};

/// Ordered acquisitions, grouped by shared pulse timing so the walker can
/// accumulate one gradient moment per group instead of one phase per
/// acquisition.
class GradientScheme {
 public:
  GradientScheme() = default;

  explicit GradientScheme(std::vector<PgseAcquisition> acquisitions) : acq_(std::move(acquisitions)) {
    if (acq_.empty()) throw Error(ErrorCode::kInvalidArgument, "gradient scheme is empty");
    bool has_b0 = false;
    for (const auto& a : acq_) {
      if (a.b < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative b-value");
      if (std::abs(a.direction.norm() - 1.0) > 1e-9)
        throw Error(ErrorCode::kInvalidArgument, "gradient direction must be a unit vector");
      if (!(a.delta > 0.0) || a.Delta < a.delta)
        throw Error(ErrorCode::kInvalidArgument, "PGSE timing requires Delta >= delta > 0");
      has_b0 = has_b0 || a.b == 0.0;
    }
    if (!has_b0) throw Error(ErrorCode::kInvalidArgument, "gradient scheme needs a b=0 acquisition");
    for (const auto& a : acq_) {
      auto it = std::find_if(timings_.begin(), timings_.end(),
                             [&](const auto& t) { return t.first == a.delta && t.second == a.Delta; });
      if (it == timings_.end()) {
        timings_.emplace_back(a.delta, a.Delta);
        group_.push_back(timings_.size() - 1);
      } else {
        group_.push_back(static_cast<std::size_t>(it - timings_.begin()));
      }
    }
    b0_index_ = static_cast<std::size_t>(
        std::find_if(acq_.begin(), acq_.end(), [](const auto& a) { return a.b == 0.0; }) - acq_.begin());
  }

  std::size_t size() const { return acq_.size(); }
  const PgseAcquisition& operator[](std::size_t k) const { return acq_[k]; }
  const std::vector<PgseAcquisition>& acquisitions() const { return acq_; }
  auto begin() const { return acq_.begin(); }
  auto end() const { return acq_.end(); }

  std::size_t b0_index() const { return b0_index_; }
  std::size_t timing_groups() const { return timings_.size(); }
  std::size_t group_of(std::size_t k) const { return group_[k]; }
  std::pair<double, double> timing(std::size_t group) const { return timings_[group]; }

  /// Longest echo time (Delta + delta) in the scheme, ms.
  double echo_span() const {
    double span = 0.0;
    for (const auto& a : acq_) span = std::max(span, a.echo_time());
    return span;
  }

  std::vector<double> b_values() const {
    std::vector<double> b;
    b.reserve(acq_.size());
    for (const auto& a : acq_) b.push_back(a.b);
    return b;
  }

 private:
  std::vector<PgseAcquisition> acq_;
  std::vector<std::pair<double, double>> timings_;
  std::vector<std::size_t> group_;
  std::size_t b0_index_ = 0;
};

/// A b=0 acquisition followed by every (direction, b) pair, directions outer.
inline GradientScheme make_scheme(std::span<const Vec3> directions, std::span<const double> b_list, double delta,
                                  double Delta) {
  std::vector<PgseAcquisition> acq;
  acq.push_back(make_acquisition(Vec3::UnitZ(), 0.0, delta, Delta));
  for (const Vec3& d : directions)
    for (double b : b_list) acq.push_back(make_acquisition(d, b, delta, Delta));
  return GradientScheme(std::move(acq));
}

/// `count` uniformly spaced b-values on [0, b_max].
inline std::vector<double> uniform_b_values(std::size_t count, double b_max) {
  std::vector<double> b(count, 0.0);
  for (std::size_t i = 1; i < count; ++i) b[i] = b_max * static_cast<double>(i) / static_cast<double>(count - 1);
  return b;
}

/// x, y and z directions, 25 b-values on [0, 3] ms/um^2, delta = 6 ms, Delta = 18 ms.
inline GradientScheme default_scheme() {
  const std::vector<Vec3> dirs{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  const auto b = uniform_b_values(25, 3.0);
  return make_scheme(dirs, b, 6.0, 18.0);
}

/// Adds one time step's phase increment to every acquisition's accumulator.
/// `offset` is the spin position relative to any fixed reference (the start
/// position is used by the walker); the constant part cancels between pulses.
inline void accumulate_phase(std::span<double> phases, const Vec3& offset, std::size_t step, double timestep,
                             const GradientScheme& scheme) {
  if (phases.size() != scheme.size()) throw Error(ErrorCode::kDimensionMismatch, "one phase per acquisition");
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    const auto& a = scheme[k];
    const int sign = StepWindows::from_timing(a.delta, a.Delta, timestep).sign(step);
    if (sign == 0) continue;
    phases[k] += sign * units::kGamma * a.gradient * a.direction.dot(offset) * timestep;
  }
}

/// Net phase of an acquisition given the spin's gradient moment for that
/// acquisition's timing group (integral of position over pulse one minus
/// pulse two, um ms).
inline double phase_from_moment(const PgseAcquisition& a, const Vec3& moment) {
  return units::kGamma * a.gradient * a.direction.dot(moment);
}

struct SignalVector {
  /// |mean exp(-i phi)| normalized by the b=0 entry.
  std::vector<double> s;
  /// Re mean exp(-i phi) normalized by the b=0 entry.
  std::vector<double> real;
  /// Raw complex means before normalization.
  std::vector<std::complex<double>> mean;
  std::size_t n_spins = 0;
};

}  // namespace radsim
