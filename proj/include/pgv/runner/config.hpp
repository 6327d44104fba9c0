#pragma once

#include <yaml-cpp/yaml.h>
#include <fmt/format.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pgv/discrimination.hpp"
#include "pgv/errors.hpp"
#include "pgv/inference.hpp"
#include "pgv/phantom.hpp"

namespace pgv::runner {

enum class Scenario { water_phantom, lung_phantom, custom };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::water_phantom: return "water_phantom";
    case Scenario::lung_phantom: return "lung_phantom";
    case Scenario::custom: return "custom";
  }
  return "custom";
}

struct PriorConfig {
  LayeredParams mean;
  LayeredParams sd;
  std::vector<Coordinate> free{Coordinate::R, Coordinate::sigma, Coordinate::epsilon};

  bool operator==(const PriorConfig&) const = default;
};

struct SmcConfig {
  std::size_t particles = 500;
  std::size_t k_per_block = 1000;
  std::vector<std::size_t> block_sizes;
  int iterations = 20;
  bool ess_mode = false;
  int mh_moves = 1;
  double mh_delta = 0.1;
  double mh_beta = 0.05;
  unsigned threads = 1;

  bool operator==(const SmcConfig&) const = default;
};

struct DiscriminationConfig {
  LayeredParams d_true;  ///< empty: the run's truth
  LayeredParams d_alt;   ///< empty: the prior mean
  double p0 = 0.5;
  double delta = 0.05;
  std::vector<int> bins{1, 2, 3, 6};
  std::vector<double> heights{0.5, 1.0};

  bool operator==(const DiscriminationConfig&) const = default;
};

struct SimulateConfig {
  std::size_t hits = 10000;
  double curve_step = 0.01;  ///< [cm] spacing of the dose and emission curves

  bool operator==(const SimulateConfig&) const = default;
};

struct RunConfig {
  std::string name = "custom";
  Scenario scenario = Scenario::custom;
  std::uint64_t master_seed = 1;
  std::string output_dir;  ///< empty: $PGV_OUTPUT_DIR/<name> or pgv_out/<name>
  FixedPhysics physics;
  Phantom phantom;
  LayeredParams truth;
  DetectorArray geometry;
  PriorConfig prior;
  SmcConfig smc;
  DiscriminationConfig discrimination;
  SimulateConfig simulate;

  bool operator==(const RunConfig&) const = default;

  Medium medium() const { return {phantom, physics}; }
  std::size_t layers() const { return phantom.size(); }
};

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline std::string located(const YAML::Node& node, const std::string& path) {
  const auto mark = node.Mark();
  if (mark.line < 0) return path;
  return path + " (line " + std::to_string(mark.line + 1) + ", column " +
         std::to_string(mark.column + 1) + ")";
}

template <class T>
T as(const YAML::Node& node, const std::string& path) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(located(node, path), "value '" + YAML::Dump(node) + "' has the wrong type");
  }
}

inline void require_map(const YAML::Node& node, const std::string& path) {
  if (!node.IsMap()) throw ConfigError(located(node, path), "expected a mapping");
}

inline void require_sequence(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence()) throw ConfigError(located(node, path), "expected a list");
}

/// Rejects keys outside `known` so typos do not pass silently.
inline void check_keys(const YAML::Node& node, const std::string& path,
                       std::initializer_list<const char*> known) {
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(located(kv.first, join(path, key)), "unknown key");
  }
}

template <class T>
void read(const YAML::Node& map, const char* key, const std::string& path, T& out) {
  if (const auto n = map[key]) out = as<T>(n, join(path, key));
}

template <class T>
T read_required(const YAML::Node& map, const char* key, const std::string& path) {
  const auto n = map[key];
  if (!n) throw ConfigError(located(map, join(path, key)), "missing required key");
  return as<T>(n, join(path, key));
}

inline TissueParams read_triple(const YAML::Node& node, const std::string& path) {
  require_map(node, path);
  check_keys(node, path, {"R", "sigma", "epsilon"});
  return {read_required<double>(node, "R", path), read_required<double>(node, "sigma", path),
          read_required<double>(node, "epsilon", path)};
}

inline LayeredParams read_layered(const YAML::Node& node, const std::string& path) {
  require_sequence(node, path);
  LayeredParams out;
  for (std::size_t i = 0; i < node.size(); ++i)
    out.push_back(read_triple(node[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

template <class T>
std::vector<T> read_list(const YAML::Node& node, const std::string& path) {
  require_sequence(node, path);
  std::vector<T> out;
  for (std::size_t i = 0; i < node.size(); ++i)
    out.push_back(as<T>(node[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

/// Shortest round-trip text, so emitted files stay readable.
inline YAML::Node num(double x) { return YAML::Node(fmt::format("{}", x)); }

inline YAML::Node triple_node(const TissueParams& d) {
  YAML::Node n;
  n.SetStyle(YAML::EmitterStyle::Flow);
  n["R"] = num(d.R);
  n["sigma"] = num(d.sigma);
  n["epsilon"] = num(d.epsilon);
  return n;
}

inline YAML::Node layered_node(const LayeredParams& p) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& d : p) n.push_back(triple_node(d));
  return n;
}

template <class T>
YAML::Node flow_list(const std::vector<T>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  n.SetStyle(YAML::EmitterStyle::Flow);
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>)
      n.push_back(num(x));
    else
      n.push_back(x);
  }
  return n;
}

}  // namespace detail

/// Checks every nested invariant; errors name the offending key.
inline void validate(const RunConfig& c) {
  auto wrap = [](const char* where, auto&& check) {
    try {
      check();
    } catch (const DomainError& e) {
      throw ConfigError(where, e.what());
    }
  };
  wrap("physics", [&] { c.physics.validate(); });
  wrap("truth", [&] { pgv::validate(c.truth, c.phantom); });
  wrap("detector", [&] { c.geometry.validate(); });
  wrap("prior.mean", [&] { pgv::validate(c.prior.mean, c.phantom); });
  if (c.prior.sd.size() != c.phantom.size())
    throw ConfigError("prior.sd", "expected one entry per layer");
  for (const auto& s : c.prior.sd)
    if (!(s.R > 0 && s.sigma > 0 && s.epsilon > 0))
      throw ConfigError("prior.sd", "standard deviations must be positive");
  if (c.prior.free.empty()) throw ConfigError("prior.free", "at least one coordinate must be free");
  if (c.smc.particles < 2) throw ConfigError("smc.particles", "need at least two particles");
  if (c.smc.iterations < 0) throw ConfigError("smc.iterations", "must be non-negative");
  if (c.smc.k_per_block == 0) throw ConfigError("smc.k_per_block", "must be positive");
  for (auto k : c.smc.block_sizes)
    if (k == 0) throw ConfigError("smc.block_sizes", "block sizes must be positive");
  if (c.smc.mh_moves < 0) throw ConfigError("smc.mh_moves", "must be non-negative");
  if (!(c.smc.mh_delta > 0)) throw ConfigError("smc.mh_delta", "must be positive");
  if (!(c.smc.mh_beta >= 0 && c.smc.mh_beta <= 1))
    throw ConfigError("smc.mh_beta", "must lie in [0, 1]");
  const auto& d = c.discrimination;
  if (!(d.p0 > 0 && d.p0 < 1)) throw ConfigError("discrimination.p0", "must lie in (0, 1)");
  if (!(d.delta > 0 && d.delta < 1)) throw ConfigError("discrimination.delta", "must lie in (0, 1)");
  if (!d.d_true.empty()) wrap("discrimination.d_true", [&] { pgv::validate(d.d_true, c.phantom); });
  if (!d.d_alt.empty()) wrap("discrimination.d_alt", [&] { pgv::validate(d.d_alt, c.phantom); });
  for (int b : d.bins)
    if (b < 1) throw ConfigError("discrimination.bins", "bin counts must be at least 1");
  for (double h : d.heights)
    if (!(h > 0)) throw ConfigError("discrimination.heights", "heights must be positive");
  if (c.simulate.hits == 0) throw ConfigError("simulate.hits", "must be positive");
  if (!(c.simulate.curve_step > 0)) throw ConfigError("simulate.curve_step", "must be positive");
}

inline RunConfig parse_config(const YAML::Node& root) {
  using namespace detail;
  require_map(root, "<root>");
  check_keys(root, "", {"name", "scenario", "master_seed", "output_dir", "physics", "phantom", "truth",
                        "detector", "prior", "smc", "discrimination", "simulate"});
  RunConfig c;
  read(root, "name", "", c.name);
  if (const auto n = root["scenario"]) {
    const auto s = as<std::string>(n, "scenario");
    if (s == "water_phantom") c.scenario = Scenario::water_phantom;
    else if (s == "lung_phantom") c.scenario = Scenario::lung_phantom;
    else if (s == "custom") c.scenario = Scenario::custom;
    else throw ConfigError(located(n, "scenario"), "expected water_phantom, lung_phantom or custom");
  }
  read(root, "master_seed", "", c.master_seed);
  read(root, "output_dir", "", c.output_dir);

  if (const auto n = root["physics"]) {
    require_map(n, "physics");
    check_keys(n, "physics", {"alpha", "p", "rho", "beta", "gamma_hat", "phi0"});
    read(n, "alpha", "physics", c.physics.alpha);
    read(n, "p", "physics", c.physics.p);
    read(n, "rho", "physics", c.physics.rho);
    read(n, "beta", "physics", c.physics.beta);
    read(n, "gamma_hat", "physics", c.physics.gamma_hat);
    read(n, "phi0", "physics", c.physics.phi0);
  }

  const auto ph = root["phantom"];
  if (!ph) throw ConfigError("phantom", "missing required key");
  require_map(ph, "phantom");
  check_keys(ph, "phantom", {"layers"});
  const auto layers = ph["layers"];
  if (!layers) throw ConfigError(located(ph, "phantom.layers"), "missing required key");
  require_sequence(layers, "phantom.layers");
  std::vector<Layer> ls;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string path = "phantom.layers[" + std::to_string(i) + "]";
    const auto l = layers[i];
    require_map(l, path);
    check_keys(l, path, {"label", "x_start", "x_end", "density"});
    Layer layer;
    read(l, "label", path, layer.label);
    layer.x_start = read_required<double>(l, "x_start", path);
    layer.x_end = read_required<double>(l, "x_end", path);
    read(l, "density", path, layer.density);
    ls.push_back(layer);
  }
  try {
    c.phantom = Phantom(ls);
  } catch (const DomainError& e) {
    throw ConfigError(located(layers, "phantom.layers"), e.what());
  }

  if (!root["truth"]) throw ConfigError("truth", "missing required key");
  c.truth = read_layered(root["truth"], "truth");

  if (const auto n = root["detector"]) {
    require_map(n, "detector");
    check_keys(n, "detector", {"h", "xprime_lo", "xprime_hi", "delta", "bins"});
    read(n, "h", "detector", c.geometry.h);
    read(n, "xprime_lo", "detector", c.geometry.xprime_lo);
    read(n, "xprime_hi", "detector", c.geometry.xprime_hi);
    read(n, "delta", "detector", c.geometry.delta);
    read(n, "bins", "detector", c.geometry.bins);
  } else {
    throw ConfigError("detector", "missing required key");
  }

  const auto pr = root["prior"];
  if (!pr) throw ConfigError("prior", "missing required key");
  require_map(pr, "prior");
  check_keys(pr, "prior", {"mean", "sd", "free"});
  if (!pr["mean"]) throw ConfigError(located(pr, "prior.mean"), "missing required key");
  if (!pr["sd"]) throw ConfigError(located(pr, "prior.sd"), "missing required key");
  c.prior.mean = read_layered(pr["mean"], "prior.mean");
  c.prior.sd = read_layered(pr["sd"], "prior.sd");
  if (const auto f = pr["free"]) {
    c.prior.free.clear();
    const auto names = read_list<std::string>(f, "prior.free");
    for (std::size_t i = 0; i < names.size(); ++i) {
      try {
        c.prior.free.push_back(parse_coordinate(names[i]));
      } catch (const DomainError& e) {
        throw ConfigError(located(f[i], "prior.free[" + std::to_string(i) + "]"), e.what());
      }
    }
  }

  if (const auto n = root["smc"]) {
    require_map(n, "smc");
    check_keys(n, "smc", {"particles", "k_per_block", "block_sizes", "iterations", "ess_mode",
                          "mh_moves", "mh_delta", "mh_beta", "threads"});
    read(n, "particles", "smc", c.smc.particles);
    read(n, "k_per_block", "smc", c.smc.k_per_block);
    if (const auto b = n["block_sizes"]) c.smc.block_sizes = read_list<std::size_t>(b, "smc.block_sizes");
    read(n, "iterations", "smc", c.smc.iterations);
    read(n, "ess_mode", "smc", c.smc.ess_mode);
    read(n, "mh_moves", "smc", c.smc.mh_moves);
    read(n, "mh_delta", "smc", c.smc.mh_delta);
    read(n, "mh_beta", "smc", c.smc.mh_beta);
    read(n, "threads", "smc", c.smc.threads);
  }

  if (const auto n = root["discrimination"]) {
    require_map(n, "discrimination");
    check_keys(n, "discrimination", {"d_true", "d_alt", "p0", "delta", "bins", "heights"});
    if (const auto d = n["d_true"]) c.discrimination.d_true = read_layered(d, "discrimination.d_true");
    if (const auto d = n["d_alt"]) c.discrimination.d_alt = read_layered(d, "discrimination.d_alt");
    read(n, "p0", "discrimination", c.discrimination.p0);
    read(n, "delta", "discrimination", c.discrimination.delta);
    if (const auto b = n["bins"]) c.discrimination.bins = read_list<int>(b, "discrimination.bins");
    if (const auto h = n["heights"])
      c.discrimination.heights = read_list<double>(h, "discrimination.heights");
  }

  if (const auto n = root["simulate"]) {
    require_map(n, "simulate");
    check_keys(n, "simulate", {"hits", "curve_step"});
    read(n, "hits", "simulate", c.simulate.hits);
    read(n, "curve_step", "simulate", c.simulate.curve_step);
  }

  validate(c);
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ", column " +
                          std::to_string(e.mark.column + 1),
                      e.msg);
  }
  return parse_config(root);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string to_yaml(const RunConfig& c) {
  using namespace detail;
  YAML::Node root;
  root["name"] = c.name;
  root["scenario"] = to_string(c.scenario);
  root["master_seed"] = c.master_seed;
  root["output_dir"] = c.output_dir;
  auto& ph = c.physics;
  YAML::Node phys;
  phys["alpha"] = detail::num(ph.alpha);
  phys["p"] = detail::num(ph.p);
  phys["rho"] = detail::num(ph.rho);
  phys["beta"] = detail::num(ph.beta);
  phys["gamma_hat"] = detail::num(ph.gamma_hat);
  phys["phi0"] = detail::num(ph.phi0);
  root["physics"] = phys;
  YAML::Node layers(YAML::NodeType::Sequence);
  for (const auto& l : c.phantom.layers()) {
    YAML::Node n;
    n.SetStyle(YAML::EmitterStyle::Flow);
    n["label"] = l.label;
    n["x_start"] = detail::num(l.x_start);
    n["x_end"] = detail::num(l.x_end);
    n["density"] = detail::num(l.density);
    layers.push_back(n);
  }
  root["phantom"]["layers"] = layers;
  root["truth"] = layered_node(c.truth);
  YAML::Node det;
  det["h"] = detail::num(c.geometry.h);
  det["xprime_lo"] = detail::num(c.geometry.xprime_lo);
  det["xprime_hi"] = detail::num(c.geometry.xprime_hi);
  det["delta"] = detail::num(c.geometry.delta);
  det["bins"] = c.geometry.bins;
  root["detector"] = det;
  root["prior"]["mean"] = layered_node(c.prior.mean);
  root["prior"]["sd"] = layered_node(c.prior.sd);
  std::vector<std::string> free;
  for (auto f : c.prior.free) free.push_back(to_string(f));
  root["prior"]["free"] = flow_list(free);
  YAML::Node smc;
  smc["particles"] = c.smc.particles;
  smc["k_per_block"] = c.smc.k_per_block;
  smc["block_sizes"] = flow_list(c.smc.block_sizes);
  smc["iterations"] = c.smc.iterations;
  smc["ess_mode"] = c.smc.ess_mode;
  smc["mh_moves"] = c.smc.mh_moves;
  smc["mh_delta"] = detail::num(c.smc.mh_delta);
  smc["mh_beta"] = detail::num(c.smc.mh_beta);
  smc["threads"] = c.smc.threads;
  root["smc"] = smc;
  YAML::Node disc;
  disc["d_true"] = layered_node(c.discrimination.d_true);
  disc["d_alt"] = layered_node(c.discrimination.d_alt);
  disc["p0"] = detail::num(c.discrimination.p0);
  disc["delta"] = detail::num(c.discrimination.delta);
  disc["bins"] = flow_list(c.discrimination.bins);
  disc["heights"] = flow_list(c.discrimination.heights);
  root["discrimination"] = disc;
  root["simulate"]["hits"] = c.simulate.hits;
  root["simulate"]["curve_step"] = detail::num(c.simulate.curve_step);

  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

// ---- conversion to the inference types ----

inline Prior make_prior(const RunConfig& c) {
  return {pack(c.prior.mean), pack(c.prior.sd)};
}

/// Free coordinates are every layer's coordinates of the listed kinds; the
/// rest are pinned at the truth.
inline ParameterSpace make_space(const RunConfig& c) {
  ParameterSpace s;
  s.pinned = pack(c.truth);
  const auto n = static_cast<Eigen::Index>(c.layers());
  for (Eigen::Index i = 0; i < 3 * n; ++i)
    for (auto kind : c.prior.free)
      if (coordinate_of(i, n) == kind) s.free.push_back(i);
  return s;
}

inline SmcSettings make_settings(const RunConfig& c) {
  SmcSettings s;
  s.particles = c.smc.particles;
  s.k_per_block = c.smc.k_per_block;
  s.block_sizes = c.smc.block_sizes;
  s.iterations = c.smc.iterations;
  s.ess_mode = c.smc.ess_mode;
  s.mh.moves = c.smc.mh_moves;
  s.mh.delta = c.smc.mh_delta;
  s.mh.beta = c.smc.mh_beta;
  s.seed = c.master_seed;
  s.threads = c.smc.threads;
  return s;
}

inline SmcProblem make_problem(const RunConfig& c) {
  return {c.truth, make_prior(c), make_space(c), ForwardModel(c.medium(), c.geometry)};
}

inline DiscriminationSpec make_discrimination(const RunConfig& c) {
  DiscriminationSpec s;
  s.d_true = c.discrimination.d_true.empty() ? c.truth : c.discrimination.d_true;
  s.d_alt = c.discrimination.d_alt.empty() ? c.prior.mean : c.discrimination.d_alt;
  s.p0 = c.discrimination.p0;
  s.delta = c.discrimination.delta;
  s.geometry = c.geometry;
  return s;
}

// ---- bundled scenarios ----

/// Largest plausible range under the prior: mean + 4 sd over all layers.
inline double prior_range_max(const PriorConfig& p) {
  double r = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i) r = std::max(r, p.mean[i].R + 4.0 * p.sd[i].R);
  return r;
}

inline double prior_sigma_max(const PriorConfig& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i)
    s = std::max(s, p.mean[i].sigma + 4.0 * p.sd[i].sigma);
  return s;
}

/// Detector covering [0, 1.2 R_prior_max], rounded up to whole cells.
inline DetectorArray default_detector(const PriorConfig& p, double h, int bins, double delta = 0.1) {
  const double cells = std::ceil(1.2 * prior_range_max(p) / delta - 1e-9);
  return {h, 0.0, cells * delta, delta, bins};
}

/// Prior with R shifted +0.5 cm from the truth and sd (0.5, 0.05, 0.05).
inline PriorConfig default_prior(const LayeredParams& truth) {
  PriorConfig p;
  for (const auto& d : truth) {
    p.mean.push_back({d.R + 0.5, d.sigma, d.epsilon});
    p.sd.push_back({0.5, 0.05, 0.05});
  }
  return p;
}

/// Homogeneous water, truth (16.9, 0.3, 0.25) from the sensitivity study.
/// Depth covers R_prior_max + 5 sigma_prior_max.
inline RunConfig water_scenario(int bins) {
  RunConfig c;
  c.name = "water_b" + std::to_string(bins);
  c.scenario = Scenario::water_phantom;
  c.master_seed = 20240611;
  c.truth = {{16.9, 0.3, 0.25}};
  c.prior = default_prior(c.truth);
  const double depth = std::round((prior_range_max(c.prior) + 5.0 * prior_sigma_max(c.prior)) * 10.0) / 10.0;
  c.phantom = Phantom::homogeneous(depth);
  c.geometry = default_detector(c.prior, 1.0, bins);
  c.discrimination.d_true = {{16.2, 0.25, 0.2}};
  c.discrimination.d_alt = c.truth;
  return c;
}

/// One-dimensional lung cross section: skin, adipose, muscle, bone, lung,
/// tumour and back out. Every layer shares one triple so the Bragg peak
/// falls inside the tumour.
inline RunConfig lung_scenario(int bins) {
  RunConfig c;
  c.name = "lung_b" + std::to_string(bins);
  c.scenario = Scenario::lung_phantom;
  c.master_seed = 20240612;
  const double bounds[] = {0, 0.3, 1.8, 3.3, 4, 10, 13, 16, 16.7, 18.2, 19.7, 20};
  const double density[] = {1.09, 0.92, 1.04, 1.85, 0.3, 1.0, 0.3, 1.85, 1.04, 0.92, 1.09};
  const char* label[] = {"skin", "adipose", "muscle", "bone", "lung", "tumour",
                         "lung", "bone", "muscle", "adipose", "skin"};
  std::vector<Layer> layers;
  for (int i = 0; i < 11; ++i) layers.push_back({bounds[i], bounds[i + 1], density[i], label[i]});
  c.phantom = Phantom(layers);
  c.truth.assign(11, {11.5, 0.3, 0.25});
  c.prior = default_prior(c.truth);
  c.geometry = default_detector(c.prior, 1.0, bins);
  c.smc.particles = 200;
  return c;
}

inline std::vector<RunConfig> bundled_scenarios() {
  return {water_scenario(1), water_scenario(6), lung_scenario(1), lung_scenario(6)};
}

}  // namespace pgv::runner
