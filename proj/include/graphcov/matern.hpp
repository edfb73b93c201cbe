#pragma once

// Matérn correlation for the half-integer smoothness values that have closed
// forms, plus the squared-exponential limit.

#include <cmath>
#include <limits>
#include <string>

#include "graphcov/errors.hpp"

namespace graphcov {

enum class Smoothness { half, three_halves, five_halves, infinite };

inline std::string to_string(Smoothness nu) {
  switch (nu) {
    case Smoothness::half: return "0.5";
    case Smoothness::three_halves: return "1.5";
    case Smoothness::five_halves: return "2.5";
    case Smoothness::infinite: return "inf";
  }
  return "?";
}

inline Smoothness smoothness_from_double(double nu) {
  if (nu == 0.5) return Smoothness::half;
  if (nu == 1.5) return Smoothness::three_halves;
  if (nu == 2.5) return Smoothness::five_halves;
  if (std::isinf(nu) && nu > 0) return Smoothness::infinite;
  throw ValidationError("unsupported smoothness nu = " + std::to_string(nu) +
                        "; supported values are 0.5, 1.5, 2.5, inf");
}

inline Smoothness parse_smoothness(const std::string& s) {
  if (s == "0.5" || s == "1/2") return Smoothness::half;
  if (s == "1.5" || s == "3/2") return Smoothness::three_halves;
  if (s == "2.5" || s == "5/2") return Smoothness::five_halves;
  if (s == "inf" || s == "infinity" || s == "Inf") return Smoothness::infinite;
  throw ValidationError("unsupported smoothness '" + s + "'; supported values are 0.5, 1.5, 2.5, inf");
}

inline double matern_correlation(double d, Smoothness nu) {
  switch (nu) {
    case Smoothness::half: return std::exp(-d);
    case Smoothness::three_halves: {
      const double a = std::sqrt(3.0) * d;
      return (1.0 + a) * std::exp(-a);
    }
    case Smoothness::five_halves: {
      const double a = std::sqrt(5.0) * d;
      return (1.0 + a + 5.0 * d * d / 3.0) * std::exp(-a);
    }
    case Smoothness::infinite: return std::exp(-0.5 * d * d);
  }
  return 0.0;
}

/// d rho / d d. At d = 0 the right-hand limit.
inline double matern_correlation_dd(double d, Smoothness nu) {
  switch (nu) {
    case Smoothness::half: return -std::exp(-d);
    case Smoothness::three_halves: return -3.0 * d * std::exp(-std::sqrt(3.0) * d);
    case Smoothness::five_halves: {
      const double a = std::sqrt(5.0) * d;
      return -(5.0 / 3.0) * d * (1.0 + a) * std::exp(-a);
    }
    case Smoothness::infinite: return -d * std::exp(-0.5 * d * d);
  }
  return 0.0;
}

/// d rho / d(d^2) = rho'(d) / (2d). Finite at d = 0 except for nu = 1/2,
/// where callers only evaluate it off the diagonal (d > 0).
inline double matern_correlation_dsq(double d, Smoothness nu) {
  switch (nu) {
    case Smoothness::half:
      return d > 0.0 ? -std::exp(-d) / (2.0 * d) : -std::numeric_limits<double>::infinity();
    case Smoothness::three_halves: return -1.5 * std::exp(-std::sqrt(3.0) * d);
    case Smoothness::five_halves: {
      const double a = std::sqrt(5.0) * d;
      return -(5.0 / 6.0) * (1.0 + a) * std::exp(-a);
    }
    case Smoothness::infinite: return -0.5 * std::exp(-0.5 * d * d);
  }
  return 0.0;
}

}  // namespace graphcov
