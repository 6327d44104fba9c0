#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace pgv::quad {

/// Gauss-Kronrod 7/15 nodes on [-1, 1] (non-negative half) with the Kronrod
/// and embedded Gauss weights.
struct Gk15 {
  static constexpr std::array<double, 8> nodes = {
      0.000000000000000000000000000000000, 0.207784955007898467600689403773245,
      0.405845151377397166906606412076961, 0.586087235467691130294144845693013,
      0.741531185599394439863864773280788, 0.864864423359769072789712788640926,
      0.949107912342758524526189684047851, 0.991455371120812639206854697526329};
  static constexpr std::array<double, 8> kronrod = {
      0.209482141084727828012999174891714, 0.204432940075298892414161999234649,
      0.190350578064785409913256402421014, 0.169004726639267902826583426598550,
      0.140653259715525918745189590510238, 0.104790010322250183839876322541518,
      0.063092092629978553290700663189204, 0.022935322010529224963732008058970};
  // Gauss weights for the odd-indexed Kronrod nodes (0 is the centre).
  static constexpr std::array<double, 4> gauss = {
      0.417959183673469387755102040816327, 0.381830050505118944950369775488975,
      0.279705391489276667901467771423780, 0.129484966168869693270611432679082};
};

struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

/// One 15-point Kronrod panel on [a, b]. The error estimate is QUADPACK's
/// scaled Gauss/Kronrod difference, (200 |K - G|)^1.5 in relative form.
template <class F>
Estimate gk15_panel(F&& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double hw = 0.5 * (b - a);
  const double fc = f(c);
  double k = Gk15::kronrod[0] * fc;
  double g = Gk15::gauss[0] * fc;
  for (std::size_t i = 1; i < 8; ++i) {
    const double dx = hw * Gk15::nodes[i];
    const double s = f(c - dx) + f(c + dx);
    k += Gk15::kronrod[i] * s;
    if (i % 2 == 0) g += Gk15::gauss[i / 2] * s;
  }
  const double diff = std::abs((k - g) * hw);
  const double scale = std::abs(k * hw);
  double err = diff;
  if (scale > 0.0 && diff > 0.0) {
    const double r = 200.0 * diff / scale;
    err = scale * std::min(1.0, r * std::sqrt(r));
  }
  return {k * hw, err};
}

/// 7-point Gauss-Legendre rule on [a, b] (the Gauss half of the Kronrod pair).
template <class F>
double gauss7(F&& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double hw = 0.5 * (b - a);
  double s = Gk15::gauss[0] * f(c);
  for (std::size_t i = 2; i < 8; i += 2) {
    const double dx = hw * Gk15::nodes[i];
    s += Gk15::gauss[i / 2] * (f(c - dx) + f(c + dx));
  }
  return s * hw;
}

struct AdaptiveOptions {
  double rel_tol = 1e-12;
  double abs_tol = 0.0;
  int initial_panels = 1;
  int max_panels = 4000;
};

/// Globally adaptive Gauss-Kronrod integration: the panel with the largest
/// error estimate is bisected until the summed error meets the tolerance.
template <class F>
Estimate integrate(F&& f, double a, double b, const AdaptiveOptions& opt = {}) {
  struct Panel {
    double a, b;
    Estimate e;
  };
  std::vector<Panel> panels;
  panels.reserve(static_cast<std::size_t>(opt.initial_panels) + 64);
  const int n0 = opt.initial_panels < 1 ? 1 : opt.initial_panels;
  const double w = (b - a) / n0;
  double value = 0.0, error = 0.0;
  for (int i = 0; i < n0; ++i) {
    const double lo = a + i * w;
    const double hi = (i + 1 == n0) ? b : lo + w;
    panels.push_back({lo, hi, gk15_panel(f, lo, hi)});
    value += panels.back().e.value;
    error += panels.back().e.error;
  }
  while (error > std::max(opt.abs_tol, opt.rel_tol * std::abs(value)) &&
         static_cast<int>(panels.size()) < opt.max_panels) {
    std::size_t worst = 0;
    for (std::size_t i = 1; i < panels.size(); ++i)
      if (panels[i].e.error > panels[worst].e.error) worst = i;
    const Panel p = panels[worst];
    const double mid = 0.5 * (p.a + p.b);
    if (!(mid > p.a && mid < p.b)) break;  // panel at machine resolution
    const Estimate left = gk15_panel(f, p.a, mid);
    const Estimate right = gk15_panel(f, mid, p.b);
    value += left.value + right.value - p.e.value;
    error += left.error + right.error - p.e.error;
    panels[worst] = {p.a, mid, left};
    panels.push_back({mid, p.b, right});
  }
  // Re-sum to shed the drift of the running total.
  value = 0.0;
  error = 0.0;
  for (const auto& p : panels) {
    value += p.e.value;
    error += p.e.error;
  }
  return {value, error};
}

/// Barycentric interpolation through the 15 nodes of one Kronrod panel, in
/// the node order Rule::add_panel emits (centre, then -/+ pairs outward).
class PanelInterpolator {
 public:
  static constexpr std::size_t kN = 15;

  PanelInterpolator() {
    t_[0] = 0.0;
    for (std::size_t i = 1; i < 8; ++i) {
      t_[2 * i - 1] = -Gk15::nodes[i];
      t_[2 * i] = Gk15::nodes[i];
    }
    for (std::size_t k = 0; k < kN; ++k) {
      double prod = 1.0;
      for (std::size_t m = 0; m < kN; ++m)
        if (m != k) prod *= t_[k] - t_[m];
      w_[k] = 1.0 / prod;
    }
  }

  static const PanelInterpolator& instance() {
    static const PanelInterpolator p;
    return p;
  }

  /// Interpolates values f (15 entries) of the panel [a, b] at x.
  double operator()(const double* f, double a, double b, double x) const {
    const double t = (2.0 * x - a - b) / (b - a);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < kN; ++k) {
      const double d = t - t_[k];
      if (d == 0.0) return f[k];
      const double c = w_[k] / d;
      num += c * f[k];
      den += c;
    }
    return num / den;
  }

 private:
  std::array<double, kN> t_{};
  std::array<double, kN> w_{};
};

/// Fixed composite rule: 15 Kronrod nodes per panel. Nodes and weights are
/// appended so callers can evaluate an integrand once and reuse the values.
struct Rule {
  static constexpr std::size_t kNodesPerPanel = 15;

  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> panel_lo;  ///< panel p spans [panel_lo[p], panel_hi[p]]
  std::vector<double> panel_hi;

  void add_panel(double a, double b) {
    panel_lo.push_back(a);
    panel_hi.push_back(b);
    const double c = 0.5 * (a + b);
    const double hw = 0.5 * (b - a);
    nodes.push_back(c);
    weights.push_back(Gk15::kronrod[0] * hw);
    for (std::size_t i = 1; i < 8; ++i) {
      const double dx = hw * Gk15::nodes[i];
      nodes.push_back(c - dx);
      weights.push_back(Gk15::kronrod[i] * hw);
      nodes.push_back(c + dx);
      weights.push_back(Gk15::kronrod[i] * hw);
    }
  }

  /// Splits [a, b] into equal panels no wider than max_width.
  void add_interval(double a, double b, double max_width) {
    if (!(b > a)) return;
    const auto n = static_cast<int>(std::ceil((b - a) / max_width - 1e-12));
    const int panels = n < 1 ? 1 : n;
    const double w = (b - a) / panels;
    for (int i = 0; i < panels; ++i)
      add_panel(a + i * w, (i + 1 == panels) ? b : a + (i + 1) * w);
  }

  std::size_t size() const { return nodes.size(); }
  std::size_t panels() const { return nodes.size() / kNodesPerPanel; }

  template <class F>
  double apply(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
  }
};

}  // namespace pgv::quad
