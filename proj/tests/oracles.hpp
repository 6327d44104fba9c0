#pragma once

// Slow reference implementations used only by the tests. None of them share
// code with the library.

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

/// Trapezoid rule on [a, b] with n intervals. For analytic integrands that
/// decay to zero at both ends it converges geometrically.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) s += f(a + i * h);
  return s * h;
}

/// Gamma(z) = int_0^inf t^(z-1) e^-t dt with t = e^u: int exp(z u - e^u) du.
inline double gamma(double z) {
  const double lo = -745.0 / z;  // e^(z u) below the smallest double
  return trapezoid([z](double u) { return std::exp(z * u - std::exp(u)); }, std::max(lo, -800.0),
                   6.0, 400000);
}

/// e^(x^2) erfc(x) for x >= 0 from the continued fraction
/// erfc(x) = e^(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
/// evaluated bottom-up; below x = 3 the library erfc is accurate.
inline double erfcx(double x) {
  if (x < 3.0) return std::exp(x * x) * std::erfc(x);
  double f = x;
  for (int k = 200; k >= 1; --k) f = x + 0.5 * k / f;
  return 1.0 / (std::sqrt(std::numbers::pi) * f);
}

/// log S(-1, z), S(-1, z) = e^(z^2/2) sqrt(pi/2) erfc(z/sqrt 2).
inline double log_pcf_scaled_minus_one(double z) {
  const double x = z / std::sqrt(2.0);
  const double half_log_pi2 = 0.5 * std::log(0.5 * std::numbers::pi);
  if (x >= 0) return half_log_pi2 + std::log(erfcx(x));
  return 0.5 * z * z + half_log_pi2 + std::log(std::erfc(x));
}

/// D_nu(0) = sqrt(pi) 2^(nu/2) / Gamma((1 - nu)/2).
inline double pcf_at_zero(double nu) {
  return std::sqrt(std::numbers::pi) * std::pow(2.0, nu / 2) / std::tgamma((1.0 - nu) / 2);
}

/// D_nu(z), nu < 0, straight from the integral representation in linear
/// arithmetic (t = e^u, trapezoid). Fine for |z| up to about 20.
inline double pcf(double nu, double z) {
  const double a = -nu;
  auto f = [a, z](double u) {
    const double t = std::exp(u);
    return std::exp(a * u - 0.5 * t * t - z * t);
  };
  const double lo = -745.0 / a;
  const double hi = std::log(std::abs(z) + 12.0);
  return std::exp(-0.25 * z * z) / gamma(a) * trapezoid(f, std::max(lo, -1500.0), hi, 400000);
}

/// Bortfeld dose computed literally: K1 including exp(-zeta^2/4), times the
/// unscaled parabolic cylinder functions.
inline double dose(double x, double R, double sigma, double eps, double alpha = 0.0022,
                   double p = 1.77, double rho = 1.0, double beta = 0.012, double gamma_hat = 0.6,
                   double phi0 = 1.0) {
  const double zeta = (R - x) / sigma;
  const double k1 = phi0 * std::exp(-zeta * zeta / 4) * std::pow(sigma, 1 / p) * std::tgamma(1 / p) /
                    (std::sqrt(2 * std::numbers::pi) * rho * p * std::pow(alpha, 1 / p) * (1 + beta * R));
  const double k2 = beta / p + gamma_hat * beta + eps / R;
  return k1 * (pcf(-1 / p, -zeta) / sigma + k2 * pcf(-1 / p - 1, -zeta));
}

}  // namespace oracle
