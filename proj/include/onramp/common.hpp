#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace onramp {

using TrackId = std::int64_t;
using FrameIndex = std::int64_t;
using EventId = std::string;

// Behavior vector (v_x, v_y, acc_x, acc_y). Subscript x is lateral and y is
// longitudinal, both measured in the acceleration-lane frame.
inline constexpr std::size_t kBehaviorDim = 4;
using Behavior = std::array<double, kBehaviorDim>;

enum BehaviorComponent : std::size_t { kLateralSpeed = 0, kLongitudinalSpeed = 1, kLateralAcc = 2, kLongitudinalAcc = 3 };

// Covariates (dx_f, dx_r, dx_ft, dx_rt, l, d).
inline constexpr std::size_t kCovariateDim = 6;
using Covariates = std::array<double, kCovariateDim>;

inline constexpr std::array<const char*, kCovariateDim> kCovariateNames = {"dx_f", "dx_r", "dx_ft", "dx_rt", "l", "d"};
inline constexpr std::array<const char*, kBehaviorDim> kBehaviorNames = {"v_x", "v_y", "acc_x", "acc_y"};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file: a missing column, an unparsable cell, a bad key.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data violates a precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Model parameters are unusable (e.g. a covariance that is not positive definite).
class ModelStateError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed to converge.
class NumericalError : public Error {
 public:
  using Error::Error;
};

template <std::size_t N>
bool all_finite(const std::array<double, N>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace onramp
