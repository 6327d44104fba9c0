#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "pgv/errors.hpp"
#include "pgv/quadrature.hpp"
#include "pgv/special.hpp"

namespace pgv {

/// Material constants of the depth-dose model that stay fixed during
/// inference. Defaults are the water values.
struct FixedPhysics {
  double alpha = 0.0022;    ///< Bragg-Kleeman proportionality factor [cm MeV^-p]
  double p = 1.77;          ///< Bragg-Kleeman exponent
  double rho = 1.0;         ///< density [g/cm^3]
  double beta = 0.012;      ///< fluence-reduction slope [1/cm]
  double gamma_hat = 0.6;   ///< fraction of energy released locally in nonelastic interactions
  double phi0 = 1.0;        ///< primary fluence (arbitrary units)

  void validate() const {
    if (!(alpha > 0 && rho > 0 && beta > 0 && gamma_hat > 0 && phi0 > 0))
      throw DomainError("physics constants must be strictly positive");
    if (!(p > 1)) throw DomainError("Bragg-Kleeman exponent p must exceed 1");
  }

  bool operator==(const FixedPhysics&) const = default;
};

/// The three per-medium unknowns (R, sigma, epsilon).
struct TissueParams {
  double R = 0.0;        ///< range [cm]
  double sigma = 0.0;    ///< width of the range-straggling Gaussian [cm]
  double epsilon = 0.0;  ///< low-energy fraction of the primary fluence

  bool valid() const noexcept {
    return R > 0 && sigma > 0 && epsilon >= 0 && epsilon < 1 && std::isfinite(R) &&
           std::isfinite(sigma);
  }

  void validate() const {
    if (!valid())
      throw DomainError("tissue parameters out of range: R=" + std::to_string(R) +
                        " sigma=" + std::to_string(sigma) +
                        " epsilon=" + std::to_string(epsilon));
  }

  /// Standardised residual range (R - x) / sigma.
  double zeta(double x) const noexcept { return (R - x) / sigma; }

  bool operator==(const TissueParams&) const = default;
};

inline double zeta(double x, const TissueParams& params) { return params.zeta(x); }

/// Range from initial energy by the Bragg-Kleeman rule, R = alpha E^p.
inline double range_from_energy(double energy_mev, const FixedPhysics& physics = {}) {
  if (!(energy_mev > 0)) throw DomainError("energy must be positive");
  return physics.alpha * std::pow(energy_mev, physics.p);
}

inline double energy_from_range(double range_cm, const FixedPhysics& physics = {}) {
  if (!(range_cm > 0)) throw DomainError("range must be positive");
  return std::pow(range_cm / physics.alpha, 1.0 / physics.p);
}

/// Bortfeld depth-dose curve for one homogeneous medium.
///
///   D(x) = K1 [ D_{-1/p}(-zeta) / sigma + K2 D_{-1/p-1}(-zeta) ]
///   K1   = phi0 exp(-zeta^2/4) sigma^(1/p) Gamma(1/p)
///          / (sqrt(2 pi) rho p alpha^(1/p) (1 + beta R))
///   K2   = beta/p + gamma_hat beta + epsilon/R
///
/// K1 carries exp(-zeta^2/4) and D_nu(-zeta) = exp(-zeta^2/4) S(nu, -zeta),
/// so the product is formed as exp(-zeta^2/2) S in log space.
class BortfeldModel {
 public:
  explicit BortfeldModel(const FixedPhysics& physics = {}) : physics_(physics) {
    physics_.validate();
    const double inv_p = 1.0 / physics_.p;
    lead_ = PcfInterpolant::shared(-inv_p);
    tail_ = PcfInterpolant::shared(-inv_p - 1.0);
    log_const_ = std::log(physics_.phi0) + std::lgamma(inv_p) -
                 0.5 * std::log(2.0 * std::numbers::pi) - std::log(physics_.rho) -
                 std::log(physics_.p) - inv_p * std::log(physics_.alpha);
  }

  const FixedPhysics& physics() const noexcept { return physics_; }

  /// Dose curve with the parameter-dependent constants folded in.
  class Curve {
   public:
    double log_dose(double x) const {
      const double z = (R_ - x) * inv_sigma_;
      const double a = lead_->log_value(-z) + log_inv_sigma_;
      const double b = tail_->log_value(-z) + log_k2_;
      const double hi = a > b ? a : b;
      return log_k1_ - 0.5 * z * z + hi + std::log(std::exp(a - hi) + std::exp(b - hi));
    }
    double dose(double x) const { return std::exp(log_dose(x)); }

   private:
    friend class BortfeldModel;
    std::shared_ptr<const PcfInterpolant> lead_;
    std::shared_ptr<const PcfInterpolant> tail_;
    double R_ = 0, inv_sigma_ = 0, log_inv_sigma_ = 0, log_k1_ = 0, log_k2_ = 0;
  };

  Curve bind(const TissueParams& d) const {
    const double inv_p = 1.0 / physics_.p;
    Curve c;
    c.lead_ = lead_;
    c.tail_ = tail_;
    c.R_ = d.R;
    c.inv_sigma_ = 1.0 / d.sigma;
    c.log_inv_sigma_ = -std::log(d.sigma);
    c.log_k1_ = log_const_ + inv_p * std::log(d.sigma) - std::log1p(physics_.beta * d.R);
    c.log_k2_ =
        std::log(physics_.beta * inv_p + physics_.gamma_hat * physics_.beta + d.epsilon / d.R);
    return c;
  }

  /// log D(x); -inf only if the dose underflows entirely.
  double log_dose(double x, const TissueParams& d) const { return bind(d).log_dose(x); }

  double dose(double x, const TissueParams& d) const { return std::exp(log_dose(x, d)); }

 private:
  FixedPhysics physics_;
  std::shared_ptr<const PcfInterpolant> lead_;
  std::shared_ptr<const PcfInterpolant> tail_;
  double log_const_ = 0.0;
};

/// D(x | d) for x >= 0.
inline double dose(double x, const TissueParams& params, const FixedPhysics& physics = {}) {
  if (!(x >= 0.0)) throw DomainError("dose depth must be non-negative, got " + std::to_string(x));
  params.validate();
  return BortfeldModel(physics).dose(x, params);
}

/// Adaptive integral of D over [lo, hi] on an initial grid no coarser than
/// sigma/10, refined until the estimate is converged to 1e-10 relative.
inline double integrate_dose(const BortfeldModel& model, const TissueParams& params, double lo,
                             double hi) {
  if (!(hi > lo)) return 0.0;
  quad::AdaptiveOptions opt;
  opt.rel_tol = 1e-10;
  opt.initial_panels = static_cast<int>(std::ceil((hi - lo) / (params.sigma / 10.0)));
  opt.max_panels = opt.initial_panels + 20000;
  return quad::integrate([&](double x) { return model.dose(x, params); }, lo, hi, opt).value;
}

/// Normalised prompt-gamma emission density Q(x | d) = D(x | d) / int D on a
/// fixed depth interval. phi0 cancels.
class EmissionDensity {
 public:
  EmissionDensity(const TissueParams& params, const FixedPhysics& physics, double x_lo,
                  double x_hi)
      : model_(physics), params_(params), lo_(x_lo), hi_(x_hi) {
    params_.validate();
    if (!(x_hi > x_lo) || x_lo < 0) throw DomainError("emission domain must satisfy 0 <= lo < hi");
    norm_ = integrate_dose(model_, params_, lo_, hi_);
    if (!(norm_ > std::numeric_limits<double>::min()) || !std::isfinite(norm_))
      throw DegenerateDoseError("dose integral over [" + std::to_string(lo_) + ", " +
                                std::to_string(hi_) + "] is degenerate");
  }

  double operator()(double x) const {
    if (x < lo_ || x > hi_)
      throw DomainError("depth " + std::to_string(x) + " outside emission domain");
    return model_.dose(x, params_) / norm_;
  }

  double normalisation() const noexcept { return norm_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

 private:
  BortfeldModel model_;
  TissueParams params_;
  double lo_, hi_;
  double norm_ = 0.0;
};

inline double emission_density(double x, const TissueParams& params, const FixedPhysics& physics,
                               double x_lo, double x_hi) {
  return EmissionDensity(params, physics, x_lo, x_hi)(x);
}

}  // namespace pgv
