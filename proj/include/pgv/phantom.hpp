#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pgv/bortfeld.hpp"
#include "pgv/errors.hpp"
#include "pgv/quadrature.hpp"

namespace pgv {

struct Layer {
  double x_start = 0.0;  ///< [cm]
  double x_end = 0.0;    ///< [cm]
  double density = 1.0;  ///< [g/cm^3], metadata only
  std::string label;

  double width() const noexcept { return x_end - x_start; }
  bool operator==(const Layer&) const = default;
};

/// Ordered, contiguous slab geometry starting at depth 0.
class Phantom {
 public:
  Phantom() = default;

  explicit Phantom(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DomainError("phantom needs at least one layer");
    if (layers_.front().x_start != 0.0) throw DomainError("first layer must start at depth 0");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (!(l.x_start < l.x_end))
        throw DomainError("layer " + std::to_string(i) + " (" + l.label + ") is empty or inverted");
      if (!(l.density > 0))
        throw DomainError("layer " + std::to_string(i) + " (" + l.label + ") has non-positive density");
      if (i > 0 && l.x_start != layers_[i - 1].x_end)
        throw DomainError("layer " + std::to_string(i) + " (" + l.label +
                          (l.x_start < layers_[i - 1].x_end ? ") overlaps" : ") leaves a gap after") +
                          " the previous layer");
    }
  }

  /// Single homogeneous slab [0, depth].
  static Phantom homogeneous(double depth, double density = 1.0, std::string label = "water") {
    return Phantom({Layer{0.0, depth, density, std::move(label)}});
  }

  std::span<const Layer> layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  double extent_lo() const noexcept { return layers_.front().x_start; }
  double extent_hi() const noexcept { return layers_.back().x_end; }

  /// Index of the layer containing x; layers are half-open except the last.
  std::size_t layer_index(double x) const {
    if (x < extent_lo() || x > extent_hi())
      throw DomainError("depth " + std::to_string(x) + " outside phantom extent [" +
                        std::to_string(extent_lo()) + ", " + std::to_string(extent_hi()) + "]");
    auto it = std::upper_bound(layers_.begin(), layers_.end(), x,
                               [](double v, const Layer& l) { return v < l.x_end; });
    if (it == layers_.end()) return layers_.size() - 1;
    return static_cast<std::size_t>(it - layers_.begin());
  }

  bool operator==(const Phantom&) const = default;

 private:
  std::vector<Layer> layers_;
};

/// One (R, sigma, epsilon) triple per phantom layer.
using LayeredParams = std::vector<TissueParams>;

inline void validate(const LayeredParams& params, const Phantom& phantom) {
  if (params.size() != phantom.size())
    throw DomainError("expected " + std::to_string(phantom.size()) + " parameter triples, got " +
                      std::to_string(params.size()));
  for (const auto& p : params) p.validate();
}

/// Phantom plus the fixed physics shared by all its layers.
struct Medium {
  Phantom phantom;
  FixedPhysics physics;

  static Medium water(double depth, const FixedPhysics& physics = {}) {
    return {Phantom::homogeneous(depth), physics};
  }
  bool operator==(const Medium&) const = default;
};

/// Piecewise dose: inside layer i the Bortfeld curve uses the layer's own
/// triple with the global depth coordinate.
inline double layered_dose(const BortfeldModel& model, double x, const Phantom& phantom,
                           const LayeredParams& params) {
  return model.dose(x, params[phantom.layer_index(x)]);
}

inline double layered_dose(double x, const Phantom& phantom, const LayeredParams& params,
                           const FixedPhysics& physics = {}) {
  validate(params, phantom);
  return layered_dose(BortfeldModel(physics), x, phantom, params);
}

/// Quadrature nodes over the phantom with weights already multiplied by the
/// normalised emission density: sum_i mass[i] f(node[i]) ~ int Q f dx.
/// Nodes come in 15-point Kronrod panels that never straddle a layer
/// boundary, so Q is smooth inside each panel and `density_in_panel` can
/// interpolate it from the node values.
struct EmissionGrid {
  std::vector<double> nodes;
  std::vector<double> mass;
  std::vector<double> density;  ///< Q at each node
  std::vector<double> panel_lo;
  std::vector<double> panel_hi;
  double dose_integral = 0.0;  ///< int D dx by the same rule

  std::size_t size() const noexcept { return nodes.size(); }
  std::size_t panels() const noexcept { return panel_lo.size(); }

  double density_in_panel(std::size_t panel, double x) const {
    return quad::PanelInterpolator::instance()(
        density.data() + panel * quad::Rule::kNodesPerPanel, panel_lo[panel], panel_hi[panel], x);
  }
};

/// Panel widths for the emission grid: within +-peak_halfwidth sigma of R the
/// panels are at most peak_width sigma wide, elsewhere at most far_width cm.
struct GridOptions {
  double peak_halfwidth = 8.0;
  double peak_width = 1.0;
  double far_width = 1.0;
};

namespace detail {

inline void add_layer_panels(quad::Rule& rule, double a, double b, const TissueParams& d,
                             const GridOptions& opt) {
  const double peak_lo = std::clamp(d.R - opt.peak_halfwidth * d.sigma, a, b);
  const double peak_hi = std::clamp(d.R + opt.peak_halfwidth * d.sigma, a, b);
  const double fine = std::min(opt.far_width, opt.peak_width * d.sigma);
  rule.add_interval(a, peak_lo, opt.far_width);
  rule.add_interval(peak_lo, peak_hi, fine);
  rule.add_interval(peak_hi, b, opt.far_width);
}

}  // namespace detail

inline EmissionGrid emission_grid(const BortfeldModel& model, const Phantom& phantom,
                                  const LayeredParams& params, const GridOptions& opt = {}) {
  quad::Rule rule;
  std::vector<std::size_t> layer_end;
  std::vector<BortfeldModel::Curve> curves;
  for (std::size_t i = 0; i < phantom.size(); ++i) {
    const auto& l = phantom.layers()[i];
    detail::add_layer_panels(rule, l.x_start, l.x_end, params[i], opt);
    layer_end.push_back(rule.size());
    curves.push_back(model.bind(params[i]));
  }
  EmissionGrid grid;
  grid.nodes = std::move(rule.nodes);
  grid.panel_lo = std::move(rule.panel_lo);
  grid.panel_hi = std::move(rule.panel_hi);
  grid.mass.resize(grid.nodes.size());
  grid.density.resize(grid.nodes.size());
  std::size_t layer = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    while (i >= layer_end[layer]) ++layer;
    grid.density[i] = curves[layer].dose(grid.nodes[i]);
    grid.mass[i] = rule.weights[i] * grid.density[i];
    total += grid.mass[i];
  }
  if (!(total > std::numeric_limits<double>::min()) || !std::isfinite(total))
    throw DegenerateDoseError("dose integral over the phantom is degenerate");
  for (std::size_t i = 0; i < grid.nodes.size(); ++i) {
    grid.mass[i] /= total;
    grid.density[i] /= total;
  }
  grid.dose_integral = total;
  return grid;
}

inline EmissionGrid emission_grid(const Medium& medium, const LayeredParams& params,
                                  const GridOptions& opt = {}) {
  validate(params, medium.phantom);
  return emission_grid(BortfeldModel(medium.physics), medium.phantom, params, opt);
}

/// Q(x | d) normalised over the full phantom extent with adaptive
/// quadrature per layer.
class LayeredEmissionDensity {
 public:
  LayeredEmissionDensity(const Medium& medium, LayeredParams params)
      : model_(medium.physics), phantom_(medium.phantom), params_(std::move(params)) {
    validate(params_, phantom_);
    norm_ = 0.0;
    for (std::size_t i = 0; i < phantom_.size(); ++i) {
      const auto& l = phantom_.layers()[i];
      norm_ += integrate_dose(model_, params_[i], l.x_start, l.x_end);
    }
    if (!(norm_ > std::numeric_limits<double>::min()) || !std::isfinite(norm_))
      throw DegenerateDoseError("dose integral over the phantom is degenerate");
  }

  double operator()(double x) const { return layered_dose(model_, x, phantom_, params_) / norm_; }
  double unnormalised(double x) const { return layered_dose(model_, x, phantom_, params_); }
  double normalisation() const noexcept { return norm_; }

 private:
  BortfeldModel model_;
  Phantom phantom_;
  LayeredParams params_;
  double norm_;
};

inline double layered_emission_density(double x, const Medium& medium, const LayeredParams& params) {
  return LayeredEmissionDensity(medium, params)(x);
}

}  // namespace pgv
