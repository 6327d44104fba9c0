#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pgv/discrimination.hpp"
#include "pgv/inference.hpp"
#include "pgv/runner/config.hpp"
#include "pgv/runner/output.hpp"

namespace pgv::runner {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalError = 3, kIoError = 4 };

/// Run directory: explicit override, then the config's output_dir, then
/// $PGV_OUTPUT_DIR/<name>, then pgv_out/<name>; one subdirectory per command.
inline std::filesystem::path run_directory(const RunConfig& c, const std::string& override_dir,
                                           const std::string& command) {
  std::filesystem::path base;
  if (!override_dir.empty())
    base = override_dir;
  else if (!c.output_dir.empty())
    base = c.output_dir;
  else if (const char* env = std::getenv("PGV_OUTPUT_DIR"); env && *env)
    base = std::filesystem::path(env) / c.name;
  else
    base = std::filesystem::path("pgv_out") / c.name;
  return base / command;
}

inline std::vector<double> depth_grid(const Phantom& phantom, double step) {
  std::vector<double> xs;
  const double lo = phantom.extent_lo(), hi = phantom.extent_hi();
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) xs.push_back(std::min(hi, lo + static_cast<double>(i) * step));
  return xs;
}

/// Forward-only outputs: dose, emission density, detection probabilities
/// and a sampled hit list at the truth.
inline void cmd_simulate(const RunConfig& c, RunOutput& out) {
  const ForwardModel fm(c.medium(), c.geometry);
  const auto xs = depth_grid(c.phantom, c.simulate.curve_step);
  const auto grid = fm.emission(c.truth);
  CsvWriter dose({"x", "value"}), emission({"x", "value"});
  std::vector<BortfeldModel::Curve> curves;
  for (const auto& d : c.truth) curves.push_back(fm.dose_model().bind(d));
  for (double x : xs) {
    const double v = curves[c.phantom.layer_index(x)].dose(x);
    dose.row(x, v);
    emission.row(x, v / grid.dose_integral);
  }
  out.write("dose.csv", dose);
  out.write("emission.csv", emission);

  const DetectionDistribution dist(grid, c.geometry);
  CsvWriter total({"x", "value"});
  for (std::size_t cell = 0; cell < dist.cells(); ++cell)
    total.row(c.geometry.edge(cell), dist.probability(cell));
  out.write("detection.csv", total);
  if (c.geometry.bins > 1) {
    for (int j = 1; j <= c.geometry.bins; ++j) {
      CsvWriter binned({"x", "value"});
      for (std::size_t cell = 0; cell < dist.cells(); ++cell)
        binned.row(c.geometry.edge(cell), dist.probability(cell, j));
      out.write("detection_bin" + std::to_string(j) + ".csv", binned);
    }
  }

  auto rng = make_stream(c.master_seed, 0x51a7);
  const auto hits = sample_hits(c.simulate.hits, dist, rng);
  CsvWriter h({"cell_index", "xprime_left_edge", "bin"});
  for (const auto& hit : hits) h.row(hit.cell, hit.xprime_left_edge(c.geometry), hit.bin);
  out.write("hits.csv", h);
}

inline std::vector<std::string> ensemble_header(std::size_t layers) {
  std::vector<std::string> header{"iter", "particle_id"};
  for (const char* kind : {"R", "sigma", "eps"})
    for (std::size_t i = 1; i <= layers; ++i) header.push_back(fmt::format("{}_{}", kind, i));
  header.push_back("weight");
  return header;
}

inline void append_ensemble(CsvWriter& csv, const Ensemble& e, int iter) {
  for (std::size_t i = 0; i < e.size(); ++i) {
    std::vector<double> row{static_cast<double>(iter), static_cast<double>(i)};
    const auto& p = e.particles[i].params;
    row.insert(row.end(), p.data(), p.data() + p.size());
    row.push_back(e.weights[i]);
    csv.row(row);
  }
}

/// Full SMC run: trace, ensemble snapshots (iteration 0 is the prior
/// sample) and the posterior-mean emission density.
inline SmcResult cmd_infer(const RunConfig& c, RunOutput& out) {
  const auto problem = make_problem(c);
  const auto settings = make_settings(c);
  CsvWriter ensemble(ensemble_header(c.layers()));
  CsvWriter trace({"iteration", "mean_kl", "acceptance_rate", "ess"});
  auto result = smc_run(problem, settings, [&](const Ensemble& e, const IterationRecord& rec) {
    append_ensemble(ensemble, e, rec.iteration);
    if (rec.iteration > 0) trace.row(rec.iteration, rec.mean_kl, rec.acceptance_rate, rec.ess);
  });
  out.write("trace.csv", trace);
  out.write("ensemble.csv", ensemble);

  const auto xs = depth_grid(c.phantom, c.simulate.curve_step);
  const auto q = mean_emission_density(result.ensemble, problem.forward, xs);
  CsvWriter post({"x", "value"});
  for (std::size_t i = 0; i < xs.size(); ++i) post.row(xs[i], q[i]);
  out.write("posterior_emission.csv", post);
  return result;
}

inline void cmd_discriminate(const RunConfig& c, RunOutput& out) {
  const auto spec = make_discrimination(c);
  const auto rows = observation_table(spec, c.medium(), c.discrimination.bins, c.discrimination.heights);
  CsvWriter csv({"b", "h", "k_required"});
  for (const auto& r : rows) csv.row(r.bins, r.h, r.k_required);
  out.write("observations.csv", csv);
}

struct ScanRange {
  double lo = 0.0, hi = 0.0;
  std::size_t steps = 0;
};

inline ScanRange parse_range(const std::string& s) {
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? std::string::npos : s.find(':', a + 1);
  if (b == std::string::npos) throw ConfigError("--range", "expected lo:hi:steps");
  try {
    ScanRange r;
    r.lo = std::stod(s.substr(0, a));
    r.hi = std::stod(s.substr(a + 1, b - a - 1));
    const long steps = std::stol(s.substr(b + 1));
    if (steps < 0) throw ConfigError("--range", "steps must be non-negative");
    r.steps = static_cast<std::size_t>(steps);
    return r;
  } catch (const std::logic_error&) {
    throw ConfigError("--range", "expected lo:hi:steps, got '" + s + "'");
  }
}

inline void cmd_scan(const RunConfig& c, RunOutput& out, Coordinate coord, const ScanRange& range,
                     std::size_t layer) {
  if (layer < 1 || layer > c.layers()) throw ConfigError("--layer", "layer index out of range");
  const ForwardModel fm(c.medium(), c.geometry);
  const auto curve = kl_sensitivity_scan(c.truth, layer - 1, coord, range.lo, range.hi, range.steps, fm);
  CsvWriter csv({"value", "kl"});
  for (const auto& p : curve) csv.row(p.value, p.kl);
  out.write("scan_" + to_string(coord) + ".csv", csv);
}

inline void report_error(std::ostream& err, const char* kind, const std::string& message,
                         int code, const std::string& where = {}) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  if (!where.empty()) j["where"] = where;
  j["exit_code"] = code;
  err << j.dump() << "\n";
}

/// Entry point of the pgv tool. Errors are reported as one JSON object on
/// `err`: exit 2 for usage and configuration, 3 for numerical degeneracy,
/// 4 for I/O.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian range verification from prompt-gamma detections", "pgv"};
  app.require_subcommand(1);
  std::string config_path, output_dir, param = "R", range_text, scenario_name;
  std::size_t layer = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config_path, "run configuration (YAML)")->required();
    sub->add_option("--output-dir,-o", output_dir, "override the output directory");
  };
  auto* simulate = app.add_subcommand("simulate", "forward model and synthetic hits at the truth");
  add_common(simulate);
  auto* infer = app.add_subcommand("infer", "sequential Monte Carlo posterior run");
  add_common(infer);
  auto* discriminate = app.add_subcommand("discriminate", "required observations over (b, h)");
  add_common(discriminate);
  auto* scan = app.add_subcommand("scan", "KL divergence along one parameter");
  add_common(scan);
  scan->add_option("--param", param, "R, sigma or epsilon")->check(CLI::IsMember({"R", "sigma", "epsilon"}));
  scan->add_option("--range", range_text, "lo:hi:steps")->required();
  scan->add_option("--layer", layer, "1-based layer index");
  auto* scenario = app.add_subcommand("scenario", "print a bundled configuration");
  scenario->add_option("name", scenario_name, "water_b1, water_b6, lung_b1 or lung_b6")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    report_error(err, "usage", e.what(), kConfigError);
    return kConfigError;
  }

  try {
    if (scenario->parsed()) {
      for (const auto& c : bundled_scenarios())
        if (c.name == scenario_name) {
          out << to_yaml(c);
          return kOk;
        }
      throw ConfigError("name", "unknown scenario '" + scenario_name + "'");
    }
    const auto cfg = load_config(config_path);
    const auto yaml = to_yaml(cfg);
    CLI::App* sub = app.get_subcommands().front();
    std::string command = sub->get_name();
    if (sub == scan) command += "_" + param;
    RunOutput output(run_directory(cfg, output_dir, command), sub->get_name(), yaml);
    output.write("config.yaml", yaml);
    if (sub == simulate) cmd_simulate(cfg, output);
    else if (sub == infer) cmd_infer(cfg, output);
    else if (sub == discriminate) cmd_discriminate(cfg, output);
    else if (sub == scan) cmd_scan(cfg, output, parse_coordinate(param), parse_range(range_text), layer);
    output.finish();
    out << output.dir().string() << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    report_error(err, "config", e.what(), kConfigError, e.where());
    return kConfigError;
  } catch (const IoError& e) {
    report_error(err, "io", e.what(), kIoError);
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(err, "io", e.what(), kIoError);
    return kIoError;
  } catch (const DegenerateDoseError& e) {
    report_error(err, "numerical", e.what(), kNumericalError);
    return kNumericalError;
  } catch (const ZeroMassError& e) {
    report_error(err, "numerical", e.what(), kNumericalError);
    return kNumericalError;
  } catch (const DegenerateWeightsError& e) {
    report_error(err, "numerical", e.what(), kNumericalError);
    return kNumericalError;
  } catch (const DomainError& e) {
    report_error(err, "numerical", e.what(), kNumericalError);
    return kNumericalError;
  }
}

}  // namespace pgv::runner
