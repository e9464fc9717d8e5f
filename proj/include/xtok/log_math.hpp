#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace xtok {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kLogZero; }

inline double log_add_exp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kLogZero;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kLogZero) return kLogZero;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

/// log(exp(a) - exp(b)) for a >= b. Returns kLogZero when a == b.
/// Callers are responsible for checking a >= b.
inline double log_diff_exp(double a, double b) {
  if (b == kLogZero) return a;
  if (b >= a) return kLogZero;
  const double d = b - a;
  // log1p(-exp(d)) loses precision near d = 0; expm1 is the stable branch there.
  return a + (d > -0.6931471805599453 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

}  // namespace xtok
