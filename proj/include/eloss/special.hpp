#pragma once

#include "eloss/errors.hpp"

#include <cmath>
#include <concepts>
#include <numbers>
#include <string>

namespace eloss {

/// Digamma function for x > 0.
///
/// Shifts the argument above 10 with psi(x) = psi(x + 1) - 1/x, then applies
/// the asymptotic series
///   psi(x) ~ ln x - 1/(2x) - sum_k B_2k / (2k x^2k).
/// Absolute error stays below 1e-13 on [1e-3, 1e6] in double precision.
template <std::floating_point T>
T digamma(T x) {
  if (!(x > T(0)) || !std::isfinite(x)) {
    throw DomainError("digamma requires a finite positive argument, got " +
                      std::to_string(static_cast<double>(x)));
  }
  T shift = T(0);
  while (x < T(10)) {
    shift -= T(1) / x;
    x += T(1);
  }
  const T inv = T(1) / x;
  const T inv2 = inv * inv;
  // Bernoulli terms B_2k / (2k), k = 1..7, in Horner form over 1/x^2.
  const T series =
      inv2 *
      (T(1) / T(12) -
       inv2 * (T(1) / T(120) -
               inv2 * (T(1) / T(252) -
                       inv2 * (T(1) / T(240) -
                               inv2 * (T(1) / T(132) -
                                       inv2 * (T(691) / T(32760) -
                                               inv2 * (T(1) / T(12))))))));
  return shift + std::log(x) - T(0.5) * inv - series;
}

/// log of the volume of the Euclidean unit ball in R^d:
/// (d/2) ln pi - lgamma(d/2 + 1). Stays finite for large d.
template <std::floating_point T = double>
T log_unit_ball_volume(int d) {
  if (d < 1) {
    throw DomainError("unit-ball volume needs d >= 1, got " + std::to_string(d));
  }
  const T half_d = T(d) / T(2);
  return half_d * std::log(std::numbers::pi_v<T>) - std::lgamma(half_d + T(1));
}

/// pi^(d/2) / Gamma(d/2 + 1).
template <std::floating_point T = double>
T unit_ball_volume(int d) {
  return std::exp(log_unit_ball_volume<T>(d));
}

}  // namespace eloss
