#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pgv/detector.hpp"
#include "pgv/errors.hpp"

namespace pgv {

/// Conditional atom probabilities of the alternative below this are raised
/// to it before the logarithm.
inline constexpr double kKlFloor = 1e-300;

struct KlResult {
  double value = 0.0;
  std::size_t floored_atoms = 0;  ///< atoms where the floor was applied
};

/// D(p || q) from log conditional atom probabilities. Atoms with p = 0 add
/// nothing; atoms where q < kKlFloor but p > 0 are floored.
inline KlResult kl_divergence_log(std::span<const double> log_p, std::span<const double> log_q) {
  if (log_p.size() != log_q.size())
    throw DomainError("KL divergence needs distributions over the same atoms");
  static const double log_floor = std::log(kKlFloor);
  KlResult r;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    if (log_p[i] == -std::numeric_limits<double>::infinity()) continue;
    double lq = log_q[i];
    if (lq < log_floor) {
      lq = log_floor;
      ++r.floored_atoms;
    }
    r.value += std::exp(log_p[i]) * (log_p[i] - lq);
  }
  // Rounding can leave -1e-17 for identical inputs.
  if (r.value < 0.0) r.value = 0.0;
  return r;
}

inline KlResult kl_divergence_detail(const DetectionDistribution& p, const DetectionDistribution& q) {
  if (p.bins() != q.bins() || p.cells() != q.cells())
    throw DomainError("KL divergence needs distributions on the same detector");
  const auto lp = p.log_conditional();
  const auto lq = q.log_conditional();
  return kl_divergence_log(lp, lq);
}

inline double kl_divergence(const DetectionDistribution& p, const DetectionDistribution& q) {
  return kl_divergence_detail(p, q).value;
}

/// D(P(.|d_t) || P(.|d_alt)) over the (cell, bin) atoms of the
/// conditional-on-detection distributions.
inline double kl_divergence(const LayeredParams& d_t, const LayeredParams& d_alt,
                            const DetectorArray& geom, const Medium& medium) {
  const ForwardModel fm(medium, geom);
  return kl_divergence(fm.distribution(d_t), fm.distribution(d_alt));
}

/// Both configurations produce the same detection distribution.
class IndistinguishableError : public DomainError {
 public:
  using DomainError::DomainError;
};

struct DiscriminationSpec {
  LayeredParams d_true;
  LayeredParams d_alt;
  double p0 = 0.5;     ///< prior probability that d_true holds
  double delta = 0.05; ///< acceptable error rate
  DetectorArray geometry;

  void validate() const {
    if (!(p0 > 0 && p0 < 1)) throw DomainError("p0 must lie in (0, 1)");
    if (!(delta > 0 && delta < 1)) throw DomainError("delta must lie in (0, 1)");
    for (const auto& d : d_true) d.validate();
    for (const auto& d : d_alt) d.validate();
    if (d_true.size() != d_alt.size())
      throw DomainError("both configurations need the same number of layers");
    geometry.validate();
  }
};

/// log((1 - p0)/p0) - log(1/(1 - delta) - 1).
inline double observation_bound_numerator(double p0, double delta) {
  if (!(p0 > 0 && p0 < 1)) throw DomainError("p0 must lie in (0, 1)");
  if (!(delta > 0 && delta < 1)) throw DomainError("delta must lie in (0, 1)");
  return std::log((1.0 - p0) / p0) - std::log(1.0 / (1.0 - delta) - 1.0);
}

/// Smallest k with k >= numerator / kl, at least 1. A relative slack of
/// 1e-12 keeps a bound that is an integer up to rounding from ceiling to
/// the next one.
inline std::uint64_t required_observations(double p0, double delta, double kl) {
  if (!(kl > 0)) throw IndistinguishableError("KL divergence is zero: configurations are indistinguishable");
  const double bound = observation_bound_numerator(p0, delta) / kl;
  if (!(bound > 1.0)) return 1;
  if (!std::isfinite(bound)) throw DomainError("observation bound is not finite");
  return static_cast<std::uint64_t>(std::ceil(bound * (1.0 - 1e-12)));
}

inline std::uint64_t required_observations(const DiscriminationSpec& spec, const Medium& medium) {
  spec.validate();
  return required_observations(spec.p0, spec.delta,
                               kl_divergence(spec.d_true, spec.d_alt, spec.geometry, medium));
}

struct ObservationRow {
  int bins = 1;
  double h = 1.0;
  double kl = 0.0;
  std::uint64_t k_required = 0;
};

/// The bound over a (b, h) grid, b varying fastest.
inline std::vector<ObservationRow> observation_table(const DiscriminationSpec& spec,
                                                     const Medium& medium,
                                                     std::span<const int> bins,
                                                     std::span<const double> heights) {
  spec.validate();
  std::vector<ObservationRow> rows;
  for (double h : heights) {
    for (int b : bins) {
      auto geom = spec.geometry.with_bins(b);
      geom.h = h;
      const ForwardModel fm(medium, geom);
      const double kl = kl_divergence(fm.distribution(spec.d_true), fm.distribution(spec.d_alt));
      rows.push_back({b, h, kl, required_observations(spec.p0, spec.delta, kl)});
    }
  }
  return rows;
}

enum class Coordinate { R, sigma, epsilon };

inline std::string to_string(Coordinate c) {
  switch (c) {
    case Coordinate::R: return "R";
    case Coordinate::sigma: return "sigma";
    case Coordinate::epsilon: return "epsilon";
  }
  return "?";
}

inline Coordinate parse_coordinate(const std::string& s) {
  if (s == "R") return Coordinate::R;
  if (s == "sigma") return Coordinate::sigma;
  if (s == "epsilon" || s == "eps") return Coordinate::epsilon;
  throw DomainError("unknown coordinate '" + s + "', expected R, sigma or epsilon");
}

inline double& coordinate(TissueParams& d, Coordinate c) {
  switch (c) {
    case Coordinate::R: return d.R;
    case Coordinate::sigma: return d.sigma;
    case Coordinate::epsilon: break;
  }
  return d.epsilon;
}

struct ScanPoint {
  double value = 0.0;
  double kl = 0.0;
};

/// D(P(.|d_star) || P(.|d)) as one coordinate of layer `layer` sweeps
/// `steps` equally spaced values over [lo, hi].
inline std::vector<ScanPoint> kl_sensitivity_scan(const LayeredParams& d_star, std::size_t layer,
                                                  Coordinate coord, double lo, double hi,
                                                  std::size_t steps, const ForwardModel& fm) {
  std::vector<ScanPoint> curve;
  if (steps == 0) return curve;
  if (layer >= d_star.size()) throw DomainError("scan layer index out of range");
  const auto truth = fm.distribution(d_star).log_conditional();
  for (std::size_t s = 0; s < steps; ++s) {
    const double v =
        steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(steps - 1);
    auto d = d_star;
    coordinate(d[layer], coord) = v;
    d[layer].validate();
    curve.push_back({v, kl_divergence_log(truth, fm.distribution(d).log_conditional()).value});
  }
  return curve;
}

}  // namespace pgv
