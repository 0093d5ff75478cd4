#pragma once

#include <cmath>
#include <numbers>

namespace nbslam {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Maps x into [0, period).
inline double wrap_period(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  // fmod of a tiny negative value can round up to `period`
  if (r >= period) r = 0.0;
  return r;
}

inline double wrap_two_pi(double x) { return wrap_period(x, kTwoPi); }

/// Maps x into [-pi, pi).
inline double wrap_pi(double x) {
  double r = wrap_period(x + kPi, kTwoPi) - kPi;
  if (r >= kPi) r -= kTwoPi;
  return r;
}

/// Signed shortest offset from `from` to `to` on a circle of length `period`, in [-period/2, period/2).
inline double circular_difference(double from, double to, double period) {
  double d = wrap_period(to - from + 0.5 * period, period) - 0.5 * period;
  if (d >= 0.5 * period) d -= period;
  return d;
}

inline double circular_distance(double a, double b, double period = kTwoPi) {
  return std::abs(circular_difference(a, b, period));
}

}  // namespace nbslam
