#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgv/runner/cli.hpp"

namespace {

namespace fs = std::filesystem;
using namespace pgv::runner;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("pgv_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::string slurp(const fs::path& p) { return read_file(p); }

void spit(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "pgv");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// A water run small enough for unit tests.
RunConfig tiny_water() {
  auto c = water_scenario(2);
  c.name = "tiny";
  c.smc.particles = 8;
  c.smc.k_per_block = 100;
  c.smc.iterations = 3;
  c.simulate.hits = 200;
  c.simulate.curve_step = 0.5;
  c.discrimination.bins = {1, 2};
  c.discrimination.heights = {1.0};
  return c;
}

fs::path write_config(const TempDir& dir, const RunConfig& c, const std::string& name = "run.yaml") {
  const auto p = dir.path() / name;
  spit(p, to_yaml(c));
  return p;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Config, BundledScenariosRoundTrip) {
  const auto all = bundled_scenarios();
  ASSERT_EQ(all.size(), 4u);
  for (const auto& c : all) {
    EXPECT_NO_THROW(validate(c));
    const auto text = to_yaml(c);
    const auto back = parse_config(text);
    EXPECT_EQ(back, c) << c.name;
    EXPECT_EQ(to_yaml(back), text);
  }
}

TEST(Config, BundledShapes) {
  const auto water = water_scenario(1), lung = lung_scenario(6);
  EXPECT_EQ(make_prior(water).dim(), 3);
  EXPECT_EQ(make_prior(lung).dim(), 33);
  EXPECT_EQ(lung.phantom.size(), 11u);
  EXPECT_EQ(lung.phantom.layers()[5].density, 1.0);
  EXPECT_EQ(lung.phantom.extent_hi(), 20.0);
  EXPECT_EQ(water.truth.front(), (pgv::TissueParams{16.9, 0.3, 0.25}));
  EXPECT_EQ(water.prior.mean.front().R, 17.4);
  EXPECT_EQ(water_scenario(6).geometry.bins, 6);
  EXPECT_GE(water.phantom.extent_hi(), prior_range_max(water.prior) + 5 * prior_sigma_max(water.prior) - 0.05);
}

TEST(Config, ShippedFilesMatchBundledScenarios) {
  for (const auto& c : bundled_scenarios()) {
    const auto path = fs::path(PGV_CONFIG_DIR) / (c.name + ".yaml");
    ASSERT_TRUE(fs::exists(path)) << path;
    EXPECT_EQ(load_config(path.string()), c) << c.name;
  }
}

TEST(Config, UnknownKeyIsLocated) {
  auto text = to_yaml(tiny_water());
  text.replace(text.find("  bins: 2"), 9, "  bims: 2");
  try {
    parse_config(text);
    FAIL() << "expected ConfigError";
  } catch (const pgv::ConfigError& e) {
    EXPECT_NE(e.where().find("detector.bims"), std::string::npos) << e.where();
    EXPECT_NE(e.where().find("line"), std::string::npos) << e.where();
  }
}

TEST(Config, TypeAndValueErrors) {
  auto text = to_yaml(tiny_water());
  auto bad = text;
  bad.replace(bad.find("particles: 8"), 12, "particles: many");
  EXPECT_THROW(parse_config(bad), pgv::ConfigError);
  bad = text;
  bad.replace(bad.find("p0: 0.5"), 7, "p0: 1.5");
  EXPECT_THROW(parse_config(bad), pgv::ConfigError);
  EXPECT_THROW(parse_config(std::string("name: [unclosed")), pgv::ConfigError);
  EXPECT_THROW(parse_config(std::string("name: x\n")), pgv::ConfigError);
  EXPECT_THROW(load_config("/nonexistent/run.yaml"), pgv::ConfigError);
  auto c = tiny_water();
  c.smc.particles = 1;
  EXPECT_THROW(validate(c), pgv::ConfigError);
  c = tiny_water();
  c.truth.front().sigma = -1;
  try {
    validate(c);
    FAIL();
  } catch (const pgv::ConfigError& e) {
    EXPECT_EQ(e.where(), "truth");
  }
}

TEST(Config, RunProblemFromConfig) {
  auto c = tiny_water();
  c.prior.free = {pgv::Coordinate::R};
  const auto space = make_space(c);
  EXPECT_EQ(space.free.size(), 1u);
  EXPECT_EQ(space.pinned, pgv::pack(c.truth));
  const auto s = make_settings(c);
  EXPECT_EQ(s.particles, 8u);
  EXPECT_EQ(s.seed, c.master_seed);
}

TEST(Output, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Output, CsvShortestRoundTrip) {
  CsvWriter csv({"a", "b"});
  csv.row(0.1, 3);
  csv.row(std::vector<double>{1e-300, 2.5});
  EXPECT_EQ(csv.text(), "a,b\n0.1,3\n1e-300,2.5\n");
  EXPECT_THROW(csv.row(1.0), pgv::IoError);
}

TEST(Output, ManifestVerifiesAndDetectsTampering) {
  TempDir dir;
  RunOutput out(dir.path() / "run", "simulate", "config: 1\n");
  out.write("a.csv", "x\n1\n");
  out.write("b.csv", "y\n2\n");
  out.finish();
  EXPECT_THROW(out.finish(), pgv::IoError);
  EXPECT_TRUE(verify_manifest(dir.path() / "run").empty());
  const auto m = nlohmann::json::parse(slurp(dir.path() / "run" / "manifest.json"));
  EXPECT_EQ(m.at("config_sha256"), sha256_hex("config: 1\n"));
  EXPECT_EQ(m.at("files").size(), 2u);
  spit(dir.path() / "run" / "b.csv", "y\n3\n");
  EXPECT_EQ(verify_manifest(dir.path() / "run"), std::vector<std::string>{"b.csv"});
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_NE(r.err.find("\"exit_code\":2"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"simulate"}).code, 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(run({"simulate", "-c", (dir.path() / "missing.yaml").string()}).code, 2);
  spit(dir.path() / "bad.yaml", "name: x\nphantom: 3\n");
  const auto r = run({"infer", "-c", (dir.path() / "bad.yaml").string()});
  EXPECT_EQ(r.code, 2);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "config");
  const auto cfg = write_config(dir, tiny_water());
  EXPECT_EQ(run({"scan", "-c", cfg.string(), "--range", "1:2"}).code, 2);
  EXPECT_EQ(run({"scan", "-c", cfg.string(), "--range", "16:17:3", "--layer", "2"}).code, 2);
  EXPECT_EQ(run({"scan", "-c", cfg.string(), "--param", "rho", "--range", "16:17:3"}).code, 2);
  EXPECT_EQ(run({"scenario", "nope"}).code, 2);
}

TEST(Cli, NumericalDegeneracyExitsThree) {
  TempDir dir;
  auto c = tiny_water();
  c.geometry.xprime_lo = 1e17;
  c.geometry.xprime_hi = 2e17;
  c.geometry.delta = 1e16;
  const auto r = run({"simulate", "-c", write_config(dir, c).string(), "-o", (dir.path() / "o").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "numerical");
}

TEST(Cli, UnwritableOutputExitsFour) {
  TempDir dir;
  spit(dir.path() / "file", "x");
  const auto cfg = write_config(dir, tiny_water());
  const auto r = run({"discriminate", "-c", cfg.string(), "-o", (dir.path() / "file" / "sub").string()});
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, SimulateOutputsAndReproducibility) {
  TempDir dir;
  const auto cfg = write_config(dir, tiny_water());
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(run({"simulate", "-c", cfg.string(), "-o", a.string()}).code, 0);
  ASSERT_EQ(run({"simulate", "-c", cfg.string(), "-o", b.string()}).code, 0);
  for (const char* f : {"dose.csv", "emission.csv", "detection.csv", "detection_bin1.csv",
                        "detection_bin2.csv", "hits.csv", "config.yaml"}) {
    ASSERT_TRUE(fs::exists(a / "simulate" / f)) << f;
    EXPECT_EQ(slurp(a / "simulate" / f), slurp(b / "simulate" / f)) << f;
  }
  EXPECT_TRUE(verify_manifest(a / "simulate").empty());
  const auto hits = slurp(a / "simulate" / "hits.csv");
  EXPECT_EQ(hits.substr(0, hits.find('\n')), "cell_index,xprime_left_edge,bin");
  EXPECT_EQ(lines(hits), 201u);
  EXPECT_EQ(parse_config(slurp(a / "simulate" / "config.yaml")), tiny_water());
}

TEST(Cli, InferWritesTraceAndEnsemble) {
  TempDir dir;
  const auto c = tiny_water();
  const auto cfg = write_config(dir, c);
  const auto r = run({"infer", "-c", cfg.string(), "-o", (dir.path() / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run_dir = dir.path() / "o" / "infer";
  const auto trace = slurp(run_dir / "trace.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "iteration,mean_kl,acceptance_rate,ess");
  EXPECT_EQ(lines(trace), 1u + static_cast<std::size_t>(c.smc.iterations));
  const auto ens = slurp(run_dir / "ensemble.csv");
  EXPECT_EQ(ens.substr(0, ens.find('\n')), "iter,particle_id,R_1,sigma_1,eps_1,weight");
  EXPECT_EQ(lines(ens), 1u + c.smc.particles * static_cast<std::size_t>(c.smc.iterations + 1));
  EXPECT_TRUE(fs::exists(run_dir / "posterior_emission.csv"));
  EXPECT_TRUE(verify_manifest(run_dir).empty());
}

TEST(Cli, DiscriminateAndScan) {
  TempDir dir;
  const auto cfg = write_config(dir, tiny_water());
  const auto out = (dir.path() / "o").string();
  ASSERT_EQ(run({"discriminate", "-c", cfg.string(), "-o", out}).code, 0);
  const auto obs = slurp(dir.path() / "o" / "discriminate" / "observations.csv");
  EXPECT_EQ(obs.substr(0, obs.find('\n')), "b,h,k_required");
  EXPECT_EQ(lines(obs), 3u);
  ASSERT_EQ(run({"scan", "-c", cfg.string(), "-o", out, "--param", "sigma", "--range", "0.25:0.35:5"}).code, 0);
  const auto scan = slurp(dir.path() / "o" / "scan_sigma" / "scan_sigma.csv");
  EXPECT_EQ(lines(scan), 6u);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  TempDir dir;
  auto c = tiny_water();
  const auto cfg = write_config(dir, c);
  ::setenv("PGV_OUTPUT_DIR", dir.path().c_str(), 1);
  const auto r = run({"discriminate", "-c", cfg.string()});
  ::unsetenv("PGV_OUTPUT_DIR");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.path() / "tiny" / "discriminate" / "manifest.json"));
}

TEST(Cli, ScenarioPrintsBundledConfig) {
  const auto r = run({"scenario", "lung_b6"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(parse_config(r.out), lung_scenario(6));
}

}  // namespace
