#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pgv/errors.hpp"
#include "pgv/phantom.hpp"
#include "pgv/random.hpp"

namespace pgv {

/// Planar array of detector cells of width delta at standoff h above the
/// beam axis, resolving b projection-angle bins.
struct DetectorArray {
  double h = 1.0;
  double xprime_lo = 0.0;
  double xprime_hi = 1.0;
  double delta = 0.1;
  int bins = 1;

  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(std::llround((xprime_hi - xprime_lo) / delta));
  }

  double edge(std::size_t i) const noexcept { return xprime_lo + static_cast<double>(i) * delta; }

  /// Lower angle of bin j (1-based): -pi/2 + (j-1) pi/b.
  double bin_lower_angle(int bin) const noexcept {
    return -0.5 * std::numbers::pi + (bin - 1) * std::numbers::pi / bins;
  }
  double bin_upper_angle(int bin) const noexcept {
    return bin == bins ? 0.5 * std::numbers::pi : bin_lower_angle(bin + 1);
  }

  void validate() const {
    if (!(h > 0)) throw DomainError("detector standoff h must be positive");
    if (!(delta > 0)) throw DomainError("detector cell width must be positive");
    if (!(xprime_hi > xprime_lo)) throw DomainError("detector extent is empty");
    if (bins < 1) throw DomainError("detector needs at least one angular bin");
    const double n = (xprime_hi - xprime_lo) / delta;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n))
      throw DomainError("detector extent must be an integer multiple of the cell width");
  }

  /// Copy with b replaced.
  DetectorArray with_bins(int b) const {
    auto g = *this;
    g.bins = b;
    return g;
  }

  bool operator==(const DetectorArray&) const = default;
};

/// One detected prompt gamma: the cell it landed in and its angular bin.
struct GammaHit {
  std::size_t cell = 0;
  int bin = 1;  ///< 1-based

  double xprime_left_edge(const DetectorArray& geom) const noexcept { return geom.edge(cell); }
  bool operator==(const GammaHit&) const = default;
};

/// Probability that a gamma emitted isotropically at depth x lands in
/// [x', x' + delta).
inline double landing_kernel(double xprime, double x, const DetectorArray& geom) {
  return (std::atan((xprime + geom.delta - x) / geom.h) - std::atan((xprime - x) / geom.h)) /
         (2.0 * std::numbers::pi);
}

/// As landing_kernel, restricted to projection angles in bin `bin`. The
/// landing interval reachable through [theta_j, theta_j+1) is
/// [x + h tan theta_j, x + h tan theta_j+1); intersecting it with the cell is
/// the same as clamping the cell's edge angles into the bin, which avoids
/// tan(+-pi/2).
inline double binned_landing_kernel(double xprime, int bin, double x, const DetectorArray& geom) {
  if (bin < 1 || bin > geom.bins)
    throw DomainError("angular bin " + std::to_string(bin) + " outside [1, " +
                      std::to_string(geom.bins) + "]");
  const double lo = geom.bin_lower_angle(bin);
  const double hi = geom.bin_upper_angle(bin);
  const double a1 = std::clamp(std::atan((xprime - x) / geom.h), lo, hi);
  const double a2 = std::clamp(std::atan((xprime + geom.delta - x) / geom.h), lo, hi);
  return std::max(0.0, a2 - a1) / (2.0 * std::numbers::pi);
}

/// Detection probabilities on the discrete (bin, cell) atoms.
class DetectionDistribution {
 public:
  DetectionDistribution() = default;

  /// Pushes an emission grid through the binned landing kernel. With
  /// A = atan((e - x)/h) at each cell edge e, the binned kernel of a cell is
  /// the overlap of [A_lo, A_hi] with the bin's angle range, so each bin's
  /// per-edge sum  G_j(e) = sum_i m_i clamp(A_ie, theta_j, theta_j+1)
  /// gives P_j(cell) = (G_j(e_hi) - G_j(e_lo)) / 2 pi.
  DetectionDistribution(const EmissionGrid& grid, const DetectorArray& geom)
      : geom_(geom), cells_(geom.cells()) {
    const std::size_t edges = cells_ + 1;
    const auto b = static_cast<std::size_t>(geom.bins);
    const double bin_width = std::numbers::pi / geom.bins;
    // Per edge, per bin k: emission mass whose edge angle lies in bin k, and
    // the mass-weighted sum of those angles.
    std::vector<double> mass_in(edges * b, 0.0), angle_sum(edges * b, 0.0);
    std::vector<double> edge_pos(edges);
    for (std::size_t e = 0; e < edges; ++e) edge_pos[e] = geom.edge(e);
    const double inv_h = 1.0 / geom.h;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double m = grid.mass[i];
      if (m == 0.0) continue;
      const double x = grid.nodes[i];
      for (std::size_t e = 0; e < edges; ++e) {
        const double a = std::atan((edge_pos[e] - x) * inv_h);
        std::size_t k = 0;
        if (b > 1) {
          const double pos = (a + 0.5 * std::numbers::pi) / bin_width;
          k = pos <= 0.0 ? 0 : std::min(b - 1, static_cast<std::size_t>(pos));
        }
        mass_in[e * b + k] += m;
        angle_sum[e * b + k] += m * a;
      }
    }
    std::vector<double> g(b * edges);
    for (std::size_t e = 0; e < edges; ++e) {
      double below = 0.0, above = 0.0;
      for (std::size_t k = 0; k < b; ++k) above += mass_in[e * b + k];
      for (std::size_t j = 0; j < b; ++j) {
        above -= mass_in[e * b + j];
        const int bin = static_cast<int>(j) + 1;
        // Angles above bin j clamp to its upper edge, angles below to its lower.
        g[j * edges + e] = angle_sum[e * b + j] + geom.bin_upper_angle(bin) * above +
                           geom.bin_lower_angle(bin) * below;
        below += mass_in[e * b + j];
      }
    }
    if (b > 1) correct_kinks(grid, edge_pos, g);
    prob_.assign(b * cells_, 0.0);
    total_ = 0.0;
    bin_mass_.assign(b, 0.0);
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t c = 0; c < cells_; ++c) {
        const double p =
            std::max(0.0, g[j * edges + c + 1] - g[j * edges + c]) / (2.0 * std::numbers::pi);
        prob_[j * cells_ + c] = p;
        bin_mass_[j] += p;
      }
      total_ += bin_mass_[j];
    }
  }

  const DetectorArray& geometry() const noexcept { return geom_; }
  std::size_t cells() const noexcept { return cells_; }
  int bins() const noexcept { return geom_.bins; }
  std::size_t atoms() const noexcept { return prob_.size(); }

  /// P_bin(cell | d), bin 1-based.
  double probability(std::size_t cell, int bin) const {
    return prob_[static_cast<std::size_t>(bin - 1) * cells_ + cell];
  }
  /// Unbinned P(cell | d) = sum over bins.
  double probability(std::size_t cell) const {
    double s = 0.0;
    for (int j = 1; j <= bins(); ++j) s += probability(cell, j);
    return s;
  }

  /// p_bin: integral of P_bin over the detector extent.
  double bin_mass(int bin) const { return bin_mass_[static_cast<std::size_t>(bin - 1)]; }
  double total_mass() const noexcept { return total_; }

  /// Atom probabilities in (bin-major, cell-minor) order.
  std::span<const double> atom_probabilities() const noexcept { return prob_; }
  static std::size_t atom_index(const GammaHit& hit, std::size_t cells) {
    return static_cast<std::size_t>(hit.bin - 1) * cells + hit.cell;
  }

  /// log(P_atom / total mass); -inf on zero-probability atoms.
  std::vector<double> log_conditional() const {
    if (!(total_ > 0)) throw ZeroMassError("detector receives no probability mass");
    std::vector<double> out(prob_.size());
    const double log_total = std::log(total_);
    for (std::size_t i = 0; i < prob_.size(); ++i)
      out[i] = prob_[i] > 0 ? std::log(prob_[i]) - log_total
                            : -std::numeric_limits<double>::infinity();
    return out;
  }

 private:
  /// The binned kernel of edge e has kinks in x where a bin boundary angle
  /// theta_j passes through the edge, x = e - h tan(theta_j); a smooth panel
  /// rule converges slowly across them. Every panel containing kinks is
  /// re-integrated exactly, split at its kinks, for the bins touching them.
  void correct_kinks(const EmissionGrid& grid, std::span<const double> edge_pos,
                     std::vector<double>& g) const {
    const std::size_t edges = edge_pos.size();
    const int b = geom_.bins;
    if (grid.panels() == 0) return;
    const double x_min = grid.panel_lo.front();
    const double x_max = grid.panel_hi.back();
    std::vector<double> offsets;  // h tan(theta_j), j = 2..b
    for (int j = 2; j <= b; ++j) offsets.push_back(geom_.h * std::tan(geom_.bin_lower_angle(j)));
    const double inv_h = 1.0 / geom_.h;

    std::vector<double> cuts;
    std::vector<int> bins_hit;
    std::vector<double> rule_angle, piece_angle, piece_mass;
    quad::Rule piece;
    for (std::size_t e = 0; e < edges; ++e) {
      const double edge = edge_pos[e];
      // Kinks in decreasing bin order are in increasing x.
      std::size_t next = 0;
      while (next < offsets.size()) {
        const std::size_t jb = offsets.size() - 1 - next;  // boundary index, theta_(jb+2)
        const double xk = edge - offsets[jb];
        if (!(xk > x_min && xk < x_max)) {
          ++next;
          continue;
        }
        const auto it = std::upper_bound(grid.panel_lo.begin(), grid.panel_lo.end(), xk);
        const auto p = static_cast<std::size_t>(it - grid.panel_lo.begin()) - 1;
        const double lo = grid.panel_lo[p], hi = grid.panel_hi[p];
        cuts.assign(1, lo);
        bins_hit.clear();
        // Collect every kink of this edge inside panel p.
        while (next < offsets.size()) {
          const std::size_t jj = offsets.size() - 1 - next;
          const double x = edge - offsets[jj];
          if (!(x < hi)) break;
          if (x > lo) {
            cuts.push_back(x);
            const int upper_bin = static_cast<int>(jj) + 2;  // boundary is its lower angle
            for (int bin : {upper_bin - 1, upper_bin})
              if (std::find(bins_hit.begin(), bins_hit.end(), bin) == bins_hit.end())
                bins_hit.push_back(bin);
          }
          ++next;
        }
        cuts.push_back(hi);
        // Angles and masses at the panel's own nodes and at the nodes of a
        // 15-point rule on each piece between cuts.
        rule_angle.clear();
        for (std::size_t i = p * quad::Rule::kNodesPerPanel;
             i < (p + 1) * quad::Rule::kNodesPerPanel; ++i)
          rule_angle.push_back(std::atan((edge - grid.nodes[i]) * inv_h));
        piece.nodes.clear();
        piece.weights.clear();
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) piece.add_panel(cuts[c], cuts[c + 1]);
        piece_angle.resize(piece.size());
        piece_mass.resize(piece.size());
        for (std::size_t i = 0; i < piece.size(); ++i) {
          piece_angle[i] = std::atan((edge - piece.nodes[i]) * inv_h);
          piece_mass[i] = piece.weights[i] * grid.density_in_panel(p, piece.nodes[i]);
        }
        for (int bin : bins_hit) {
          const double t_lo = geom_.bin_lower_angle(bin);
          const double t_hi = geom_.bin_upper_angle(bin);
          double rule = 0.0;
          for (std::size_t i = 0; i < quad::Rule::kNodesPerPanel; ++i)
            rule += grid.mass[p * quad::Rule::kNodesPerPanel + i] *
                    std::clamp(rule_angle[i], t_lo, t_hi);
          double exact = 0.0;
          for (std::size_t i = 0; i < piece.size(); ++i)
            exact += piece_mass[i] * std::clamp(piece_angle[i], t_lo, t_hi);
          g[static_cast<std::size_t>(bin - 1) * edges + e] += exact - rule;
        }
      }
    }
  }

  DetectorArray geom_;
  std::size_t cells_ = 0;
  std::vector<double> prob_;
  std::vector<double> bin_mass_;
  double total_ = 0.0;
};

inline DetectionDistribution detection_distribution(const Medium& medium,
                                                    const LayeredParams& params,
                                                    const DetectorArray& geom,
                                                    const GridOptions& opt = {}) {
  geom.validate();
  return DetectionDistribution(emission_grid(medium, params, opt), geom);
}

/// Medium, detector and a prebuilt dose model bundled for repeated
/// parameter -> detection-distribution evaluations.
class ForwardModel {
 public:
  ForwardModel(Medium medium, DetectorArray geom, GridOptions grid = {})
      : medium_(std::move(medium)), geom_(geom), grid_(grid), model_(medium_.physics) {
    geom_.validate();
  }

  EmissionGrid emission(const LayeredParams& params) const {
    validate(params, medium_.phantom);
    return emission_grid(model_, medium_.phantom, params, grid_);
  }

  DetectionDistribution distribution(const LayeredParams& params) const {
    return DetectionDistribution(emission(params), geom_);
  }

  /// Same medium, different detector.
  ForwardModel with_geometry(const DetectorArray& geom) const {
    return ForwardModel(medium_, geom, grid_);
  }

  const Medium& medium() const noexcept { return medium_; }
  const DetectorArray& geometry() const noexcept { return geom_; }
  const BortfeldModel& dose_model() const noexcept { return model_; }

 private:
  Medium medium_;
  DetectorArray geom_;
  GridOptions grid_;
  BortfeldModel model_;
};

/// P(x' | d) or P_bin(x' | d) for an arbitrary cell start x', by direct
/// kernel quadrature over the emission grid. bin = 0 means unbinned.
inline double detection_density(double xprime, const EmissionGrid& grid, const DetectorArray& geom,
                                int bin = 0) {
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    s += grid.mass[i] * (bin == 0 ? landing_kernel(xprime, grid.nodes[i], geom)
                                  : binned_landing_kernel(xprime, bin, grid.nodes[i], geom));
  return s;
}

inline double detection_density(double xprime, const LayeredParams& params,
                                const DetectorArray& geom, const Medium& medium, int bin = 0) {
  return detection_density(xprime, emission_grid(medium, params), geom, bin);
}

/// Draws k hits conditional on detection: a bin with probability
/// p_bin / total, then a cell from that bin's distribution.
inline std::vector<GammaHit> sample_hits(std::size_t k, const DetectionDistribution& dist,
                                         Rng& rng) {
  if (!(dist.total_mass() > 0)) throw ZeroMassError("cannot sample hits: zero detected mass");
  std::vector<GammaHit> hits;
  hits.reserve(k);
  if (k == 0) return hits;
  std::vector<double> bin_weights(static_cast<std::size_t>(dist.bins()));
  for (int j = 1; j <= dist.bins(); ++j) bin_weights[j - 1] = dist.bin_mass(j);
  std::discrete_distribution<int> pick_bin(bin_weights.begin(), bin_weights.end());
  std::vector<std::discrete_distribution<std::size_t>> pick_cell;
  const auto probs = dist.atom_probabilities();
  for (int j = 0; j < dist.bins(); ++j) {
    auto row = probs.subspan(static_cast<std::size_t>(j) * dist.cells(), dist.cells());
    if (dist.bin_mass(j + 1) > 0)
      pick_cell.emplace_back(row.begin(), row.end());
    else
      pick_cell.emplace_back();
  }
  for (std::size_t n = 0; n < k; ++n) {
    const int j = pick_bin(rng);
    hits.push_back({pick_cell[static_cast<std::size_t>(j)](rng), j + 1});
  }
  return hits;
}

inline std::vector<GammaHit> sample_hits(std::size_t k, const LayeredParams& params,
                                         const DetectorArray& geom, const Medium& medium,
                                         std::uint64_t seed) {
  Rng rng(seed);
  return sample_hits(k, detection_distribution(medium, params, geom), rng);
}

/// Hit counts per (bin, cell) atom; the likelihood depends on the data only
/// through these.
class HitCounts {
 public:
  HitCounts() = default;
  explicit HitCounts(const DetectorArray& geom)
      : cells_(geom.cells()), counts_(geom.cells() * static_cast<std::size_t>(geom.bins), 0.0) {}

  void add(std::span<const GammaHit> hits) {
    for (const auto& h : hits) {
      counts_[DetectionDistribution::atom_index(h, cells_)] += 1.0;
      total_ += 1;
    }
  }
  void add(const HitCounts& other) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    total_ += other.total_;
  }

  std::span<const double> counts() const noexcept { return counts_; }
  std::size_t total() const noexcept { return total_; }

 private:
  std::size_t cells_ = 0;
  std::vector<double> counts_;
  std::size_t total_ = 0;
};

}  // namespace pgv
