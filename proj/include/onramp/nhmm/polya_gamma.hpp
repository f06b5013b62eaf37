#pragma once

#include <cmath>
#include <numbers>

#include "onramp/common.hpp"
#include "onramp/random.hpp"

namespace onramp::nhmm {

/// log Phi(x) for the standard normal, accurate far into the left tail.
inline double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Asymptotic series of the Mills ratio.
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

/// Exact sampler for the Polya-Gamma PG(1, z) distribution using the
/// alternating-series method of Devroye as adapted by Polson, Scott and
/// Windle. Draws J*(1, z/2) / 4.
class PolyaGammaSampler {
 public:
  static constexpr double kTrunc = 0.64;
  static constexpr int kMaxSeriesTerms = 2000;
  static constexpr int kMaxProposals = 10000;

  double draw(double z, Random& rng) const {
    z = 0.5 * std::abs(z);
    const double fz = 0.125 * std::numbers::pi * std::numbers::pi + 0.5 * z * z;
    const double p_exp = mass_truncated_exponential(z, fz);
    for (int attempt = 0; attempt < kMaxProposals; ++attempt) {
      const double x = rng.uniform() < p_exp ? kTrunc + rng.exponential() / fz : truncated_inverse_gaussian(z, rng);
      double s = series_coefficient(0, x);
      const double y = rng.uniform() * s;
      for (int n = 1; n <= kMaxSeriesTerms; ++n) {
        if (n % 2 == 1) {
          s -= series_coefficient(n, x);
          if (y <= s) return 0.25 * x;
        } else {
          s += series_coefficient(n, x);
          if (y > s) break;
        }
      }
    }
    throw NumericalError("Polya-Gamma draw did not converge");
  }

  /// E[PG(1, z)].
  static double mean(double z) {
    const double a = std::abs(z);
    if (a < 1e-6) return 0.25 - a * a / 48.0;
    return std::tanh(0.5 * a) / (2.0 * a);
  }

  /// Var[PG(1, z)].
  static double variance(double z) {
    const double a = std::abs(z);
    if (a < 1e-3) return 1.0 / 24.0 - a * a / 240.0;
    const double c = std::cosh(0.5 * a);
    return (std::sinh(a) - a) / (4.0 * a * a * a * c * c);
  }

 private:
  static double series_coefficient(int n, double x) {
    const double k = (n + 0.5) * std::numbers::pi;
    if (x > kTrunc) return k * std::exp(-0.5 * k * k * x);
    if (x <= 0.0) return 0.0;
    const double expnt =
        -1.5 * (std::log(0.5 * std::numbers::pi) + std::log(x)) + std::log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x;
    return std::exp(expnt);
  }

  // Probability that the proposal comes from the truncated exponential piece.
  static double mass_truncated_exponential(double z, double fz) {
    const double t = kTrunc;
    const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
    const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);
    const double x0 = std::log(fz) + fz * t;
    const double xb = x0 - z + log_normal_cdf(b);
    const double xa = x0 + z + log_normal_cdf(a);
    const double q_over_p = 4.0 / std::numbers::pi * (std::exp(xb) + std::exp(xa));
    return 1.0 / (1.0 + q_over_p);
  }

  // Inverse-Gaussian(1/z, 1) truncated to (0, kTrunc).
  static double truncated_inverse_gaussian(double z, Random& rng) {
    const double t = kTrunc;
    double x = t + 1.0;
    if (1.0 / t > z) {
      double alpha = 0.0;
      while (rng.uniform() > alpha) {
        double e1 = rng.exponential();
        double e2 = rng.exponential();
        while (e1 * e1 > 2.0 * e2 / t) {
          e1 = rng.exponential();
          e2 = rng.exponential();
        }
        x = 1.0 + e1 * t;
        x = t / (x * x);
        alpha = std::exp(-0.5 * z * z * x);
      }
    } else {
      const double mu = 1.0 / z;
      while (x > t) {
        double y = rng.normal();
        y *= y;
        const double half_mu = 0.5 * mu;
        const double mu_y = mu * y;
        x = mu + half_mu * mu_y - half_mu * std::sqrt(4.0 * mu_y + mu_y * mu_y);
        if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
      }
    }
    return x;
  }
};

}  // namespace onramp::nhmm
