#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace radsim {

using Vec3 = Eigen::Vector3d;

// Internal units: lengths in um, times in ms, diffusivities in um^2/ms,
// b-values in ms/um^2. 1 um^2/ms == 1e-3 mm^2/s, 1 ms/um^2 == 1000 s/mm^2.
namespace units {

/// Proton gyromagnetic ratio, rad s^-1 T^-1.
inline constexpr double kGammaSI = 2.6752218744e8;
/// Same, in rad ms^-1 T^-1.
inline constexpr double kGamma = kGammaSI * 1e-3;

inline constexpr double diffusivity_to_mm2_per_s(double d_um2_per_ms) { return d_um2_per_ms * 1e-3; }
inline constexpr double diffusivity_from_mm2_per_s(double d_mm2_per_s) { return d_mm2_per_s * 1e3; }
inline constexpr double b_to_s_per_mm2(double b_ms_per_um2) { return b_ms_per_um2 * 1e3; }
inline constexpr double b_from_s_per_mm2(double b_s_per_mm2) { return b_s_per_mm2 * 1e-3; }

}  // namespace units

enum class ErrorCode {
  kInvalidArgument,
  kInfeasibleTarget,
  kOverlappingFibers,
  kOutOfVoxel,
  kEmptySelection,
  kDurationMismatch,
  kDimensionMismatch,
  kOverSubtraction,
  kInsufficientMass,
  kOffGrid,
  kZeroVariance,
  kIo,
  kConfig,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInfeasibleTarget: return "infeasible-target";
    case ErrorCode::kOverlappingFibers: return "overlapping-fibers";
    case ErrorCode::kOutOfVoxel: return "out-of-voxel";
    case ErrorCode::kEmptySelection: return "empty-selection";
    case ErrorCode::kDurationMismatch: return "duration-mismatch";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kOverSubtraction: return "isotropic-over-subtraction";
    case ErrorCode::kInsufficientMass: return "insufficient-anisotropic-mass";
    case ErrorCode::kOffGrid: return "off-grid-candidate";
    case ErrorCode::kZeroVariance: return "zero-variance";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

/// Exception carrying a machine-readable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace radsim
