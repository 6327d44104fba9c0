#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "pgv/errors.hpp"
#include "pgv/quadrature.hpp"

namespace pgv {

/// Order of a parabolic cylinder function. Only negative orders are
/// representable: the integral form used below diverges for nu >= 0.
class PcfOrder {
 public:
  explicit PcfOrder(double nu) : nu_(nu) {
    if (!(nu < 0.0) || !std::isfinite(nu))
      throw DomainError("parabolic cylinder order must be finite and negative, got " +
                        std::to_string(nu));
  }
  double value() const noexcept { return nu_; }

 private:
  double nu_;
};

/// Gamma function for positive real arguments.
inline double gamma_fn(double z) {
  if (!(z > 0.0) || !std::isfinite(z))
    throw DomainError("gamma_fn requires a finite positive argument, got " + std::to_string(z));
  return std::tgamma(z);
}

inline double log_gamma_fn(double z) {
  if (!(z > 0.0) || !std::isfinite(z))
    throw DomainError("log_gamma_fn requires a finite positive argument, got " +
                      std::to_string(z));
  return std::lgamma(z);
}

namespace detail {

// Drop (in log units) from the integrand peak at which the integration range
// is truncated. exp(-45) ~ 3e-20.
inline constexpr double kPcfTailDrop = 45.0;

/// int_0^c t^(a-1) exp(-t^2/2 - z t) dt from the Taylor series of the
/// exponential, c_0 = 1, c_1 = -z, (n+1) c_(n+1) = -z c_n - c_(n-1).
/// Requires c <= 1/2 and |z| c <= 1/2 so terms fall off geometrically.
inline double pcf_head_series(double a, double z, double c) {
  double cm1 = 0.0, cn = 1.0, pow_c = std::pow(c, a);
  double sum = pow_c / a;
  double prev_term = sum;
  for (int n = 0; n < 80; ++n) {
    const double next = (-z * cn - cm1) / (n + 1);
    cm1 = cn;
    cn = next;
    pow_c *= c;
    const double term = cn * pow_c / (a + n + 1);
    sum += term;
    // Odd coefficients vanish at z = 0, so look at two terms at once.
    if (std::abs(term) + std::abs(prev_term) < 1e-18 * std::abs(sum)) break;
    prev_term = term;
  }
  return sum;
}

/// log S(nu, z) where D_nu(z) = exp(-z^2/4) S(nu, z) and
///   S(nu, z) = 1/Gamma(a) int_0^inf t^(a-1) exp(-t^2/2 - z t) dt,  a = -nu.
/// Substituting t = t* e^s, with t* the peak of the log-concave integrand
/// (t*^2 + z t* = a), gives
///   log integrand = g* + h(s),  g* = a log t* + t*^2/2 - a,
///   h(s) = -a (expm1(s) - s) - (t*^2/2) expm1(s)^2,
/// which is free of cancellation even when |z| is in the thousands. The
/// integral is carried as g* + log int exp(h) ds so neither tail of the Bragg
/// curve over- or underflows. Near t = 0 the slowly decaying e^(as) tail is
/// replaced by an exact power series on [0, c].
inline double log_pcf_scaled(double a, double z, int initial_panels, double rel_tol) {
  const double root = std::sqrt(z * z + 4.0 * a);
  const double t_star = z >= 0.0 ? 2.0 * a / (z + root) : 0.5 * (root - z);
  const double half_t2 = 0.5 * t_star * t_star;
  auto h = [a, half_t2](double s) {
    const double e = std::expm1(s);
    return -a * (e - s) - half_t2 * e * e;
  };
  const double g_star = a * std::log(t_star) + half_t2 - a;
  // Curvature of h at 0 is -(t*^2 + a).
  const double width = 1.0 / std::sqrt(t_star * t_star + a);

  double step = width;
  double s_lo = -step;
  while (h(s_lo) > -kPcfTailDrop) {
    step *= 2.0;
    s_lo = -step;
  }
  step = width;
  double s_hi = step;
  while (h(s_hi) > -kPcfTailDrop) {
    step *= 2.0;
    s_hi = step;
  }

  const double head_end = 0.5 / std::max(1.0, std::abs(z));
  const double s_head = std::log(head_end / t_star);
  const bool use_head = s_head > s_lo;
  if (use_head) s_lo = s_head;

  quad::AdaptiveOptions opt;
  opt.rel_tol = rel_tol;
  opt.initial_panels = initial_panels;
  const auto est = quad::integrate([&](double s) { return std::exp(h(s)); }, s_lo, s_hi, opt);
  double log_integral = g_star + std::log(est.value);
  if (use_head) {
    const double log_head = std::log(pcf_head_series(a, z, head_end));
    const double hi = std::max(log_integral, log_head);
    log_integral = hi + std::log(std::exp(log_integral - hi) + std::exp(log_head - hi));
  }
  return log_integral - std::lgamma(a);
}

inline void check_pcf_args(double nu, double z) {
  if (!(nu < 0.0) || !std::isfinite(nu))
    throw DomainError("pcf_scaled requires a finite negative order, got " + std::to_string(nu));
  if (!std::isfinite(z)) throw DomainError("pcf_scaled requires a finite argument");
}

}  // namespace detail

/// Natural log of the scaled parabolic cylinder function S(nu, z) =
/// exp(z^2/4) D_nu(z), nu < 0.
inline double log_pcf_scaled(double nu, double z) {
  detail::check_pcf_args(nu, z);
  return detail::log_pcf_scaled(-nu, z, 2, 1e-13);
}

/// Scaled parabolic cylinder function S(nu, z) = exp(z^2/4) D_nu(z), nu < 0.
/// Positive and decreasing in z. Overflows to +inf only where S itself does
/// (z below about -37); prefer log_pcf_scaled there.
inline double pcf_scaled(double nu, double z) { return std::exp(log_pcf_scaled(nu, z)); }

inline double pcf_scaled(PcfOrder nu, double z) { return pcf_scaled(nu.value(), z); }

/// D_nu(z) for nu < 0.
inline double pcf(double nu, double z) { return std::exp(log_pcf_scaled(nu, z) - 0.25 * z * z); }

/// Piecewise Chebyshev interpolant of log S(nu, z) for one fixed order.
///
/// The quadrature above costs a few microseconds per call; the forward model
/// evaluates S at every quadrature node of every particle, so it reads from
/// this table instead. On [-z_core, z_core] panels have width 1/2; beyond,
/// panel ends grow geometrically by kOuterRatio out to |z| = z_far, where
/// log S is close to its smooth asymptotic form. 16 nodes per panel
/// reproduce the quadrature to ~1e-13 in log S. Outside [-z_far, z_far] the
/// quadrature is used directly.
class PcfInterpolant {
 public:
  static constexpr int kDegree = 16;
  static constexpr double kPanelWidth = 0.5;
  static constexpr double kOuterRatio = 1.1;

  explicit PcfInterpolant(double nu, double z_core = 120.0, double z_far = 1e4)
      : nu_(PcfOrder(nu).value()) {
    if (!(z_core > 0 && z_far > z_core)) throw DomainError("invalid interpolation range");
    core_panels_ = static_cast<std::size_t>(std::ceil(2.0 * z_core / kPanelWidth));
    z_core_ = 0.5 * core_panels_ * kPanelWidth;
    outer_panels_ = static_cast<std::size_t>(
        std::ceil(std::log(z_far / z_core_) / std::log(kOuterRatio)));
    for (std::size_t k = 0; k <= outer_panels_; ++k)
      outer_edges_.push_back(z_core_ * std::pow(kOuterRatio, static_cast<double>(k)));
    z_far_ = outer_edges_.back();
    // Layout: negative outer panels (innermost first), core, positive outer.
    coeffs_.resize(core_panels_ + 2 * outer_panels_);
    for (std::size_t k = 0; k < outer_panels_; ++k) {
      const double a = outer_edge(k), b = outer_edge(k + 1);
      fit(coeffs_[k], -b, -a);
      fit(coeffs_[outer_panels_ + core_panels_ + k], a, b);
    }
    for (std::size_t p = 0; p < core_panels_; ++p) {
      const double lo = -z_core_ + p * kPanelWidth;
      fit(coeffs_[outer_panels_ + p], lo, lo + kPanelWidth);
    }
  }

  double nu() const noexcept { return nu_; }

  double log_value(double z) const {
    const double az = std::abs(z);
    if (az < z_core_) {
      const double pos = (z + z_core_) / kPanelWidth;
      const auto p = std::min(static_cast<std::size_t>(pos), core_panels_ - 1);
      return clenshaw(coeffs_[outer_panels_ + p], 2.0 * (pos - static_cast<double>(p)) - 1.0);
    }
    if (!(az < z_far_)) {
      detail::check_pcf_args(nu_, z);
      return detail::log_pcf_scaled(-nu_, z, 2, 1e-13);
    }
    static const double inv_log_ratio = 1.0 / std::log(kOuterRatio);
    auto k = static_cast<std::size_t>(std::log(az / z_core_) * inv_log_ratio);
    k = std::min(k, outer_panels_ - 1);
    if (az < outer_edge(k) && k > 0) --k;
    else if (az >= outer_edge(k + 1) && k + 1 < outer_panels_) ++k;
    const double a = outer_edge(k), b = outer_edge(k + 1);
    const double x = z > 0 ? (2.0 * z - a - b) / (b - a) : (2.0 * z + a + b) / (b - a);
    return clenshaw(coeffs_[z > 0 ? outer_panels_ + core_panels_ + k : k], x);
  }

  /// Shared, lazily built table for order nu.
  static std::shared_ptr<const PcfInterpolant> shared(double nu) {
    static std::mutex mutex;
    static std::map<double, std::shared_ptr<const PcfInterpolant>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[nu];
    if (!slot) slot = std::make_shared<const PcfInterpolant>(nu);
    return slot;
  }

 private:
  using Coeffs = std::array<double, kDegree>;

  double outer_edge(std::size_t k) const { return outer_edges_[k]; }

  void fit(Coeffs& c, double lo, double hi) const {
    std::array<double, kDegree> values{};
    for (int k = 0; k < kDegree; ++k) {
      const double node = std::cos(std::numbers::pi * (k + 0.5) / kDegree);
      values[k] = detail::log_pcf_scaled(-nu_, 0.5 * (lo + hi) + 0.5 * (hi - lo) * node, 2, 1e-14);
    }
    for (int j = 0; j < kDegree; ++j) {
      double s = 0.0;
      for (int k = 0; k < kDegree; ++k)
        s += values[k] * std::cos(std::numbers::pi * j * (k + 0.5) / kDegree);
      c[j] = (j == 0 ? 1.0 : 2.0) * s / kDegree;
    }
  }

  static double clenshaw(const Coeffs& c, double x) {
    double b1 = 0.0, b2 = 0.0;
    for (int j = kDegree - 1; j >= 1; --j) {
      const double b0 = 2.0 * x * b1 - b2 + c[j];
      b2 = b1;
      b1 = b0;
    }
    return x * b1 - b2 + c[0];
  }

  double nu_;
  double z_core_ = 0.0;
  double z_far_ = 0.0;
  std::size_t core_panels_ = 0;
  std::size_t outer_panels_ = 0;
  std::vector<double> outer_edges_;
  std::vector<Coeffs> coeffs_;
};

}  // namespace pgv
