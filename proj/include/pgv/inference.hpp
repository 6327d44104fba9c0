#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pgv/detector.hpp"
#include "pgv/discrimination.hpp"
#include "pgv/errors.hpp"
#include "pgv/random.hpp"

namespace pgv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Parameter vectors are laid out as (R_1..R_n, sigma_1..sigma_n, eps_1..eps_n).

inline Vector pack(const LayeredParams& params) {
  const auto n = static_cast<Eigen::Index>(params.size());
  Vector v(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v[i] = params[i].R;
    v[n + i] = params[i].sigma;
    v[2 * n + i] = params[i].epsilon;
  }
  return v;
}

inline LayeredParams unpack(const Vector& v) {
  if (v.size() % 3 != 0) throw DomainError("parameter vector length must be a multiple of 3");
  const Eigen::Index n = v.size() / 3;
  LayeredParams out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[i] = {v[i], v[n + i], v[2 * n + i]};
  return out;
}

/// Coordinate kind of index i in a vector for n layers.
inline Coordinate coordinate_of(Eigen::Index i, Eigen::Index n) {
  return i < n ? Coordinate::R : i < 2 * n ? Coordinate::sigma : Coordinate::epsilon;
}

/// Gaussian prior with diagonal covariance, truncated to R > 0, sigma > 0,
/// 0 <= epsilon < 1.
struct Prior {
  Vector mean;
  Vector sd;

  Eigen::Index dim() const noexcept { return mean.size(); }

  bool in_bounds(const Vector& d) const {
    const Eigen::Index n = d.size() / 3;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double v = d[i];
      if (!std::isfinite(v)) return false;
      switch (coordinate_of(i, n)) {
        case Coordinate::R:
        case Coordinate::sigma:
          if (!(v > 0)) return false;
          break;
        case Coordinate::epsilon:
          if (!(v >= 0 && v < 1)) return false;
          break;
      }
    }
    return true;
  }

  void validate() const {
    if (mean.size() == 0 || mean.size() % 3 != 0)
      throw DomainError("prior dimension must be a positive multiple of 3");
    if (sd.size() != mean.size()) throw DomainError("prior mean and sd differ in length");
    for (Eigen::Index i = 0; i < sd.size(); ++i)
      if (!(sd[i] > 0) || !std::isfinite(sd[i]))
        throw DomainError("prior standard deviations must be positive");
    if (!in_bounds(mean)) throw DomainError("prior mean lies outside the parameter bounds");
  }

  /// Unnormalised Gaussian log-density over the coordinates in `free`
  /// (all coordinates when empty); -inf outside the bounds.
  double log_density(const Vector& d, std::span<const Eigen::Index> free = {}) const {
    if (!in_bounds(d)) return kNegInf;
    double s = 0.0;
    auto term = [&](Eigen::Index i) {
      const double z = (d[i] - mean[i]) / sd[i];
      s -= 0.5 * z * z;
    };
    if (free.empty())
      for (Eigen::Index i = 0; i < d.size(); ++i) term(i);
    else
      for (auto i : free) term(i);
    return s;
  }
};

inline double log_prior(const Vector& d, const Prior& prior) { return prior.log_density(d); }

/// The coordinates being inferred; the rest stay pinned at `pinned`.
struct ParameterSpace {
  std::vector<Eigen::Index> free;
  Vector pinned;

  static ParameterSpace all(Eigen::Index dim) {
    ParameterSpace s;
    s.free.resize(static_cast<std::size_t>(dim));
    std::iota(s.free.begin(), s.free.end(), Eigen::Index{0});
    s.pinned = Vector::Zero(dim);
    return s;
  }

  Eigen::Index dim() const noexcept { return pinned.size(); }
  Eigen::Index m() const noexcept { return static_cast<Eigen::Index>(free.size()); }

  Vector reduce(const Vector& full) const {
    Vector r(m());
    for (Eigen::Index k = 0; k < m(); ++k) r[k] = full[free[static_cast<std::size_t>(k)]];
    return r;
  }

  Vector embed(const Vector& reduced) const {
    Vector full = pinned;
    for (Eigen::Index k = 0; k < m(); ++k) full[free[static_cast<std::size_t>(k)]] = reduced[k];
    return full;
  }
};

struct Particle {
  Vector params;                ///< full parameter vector
  std::vector<Vector> history;  ///< free coordinates after each importance/selection step
  std::vector<double> log_conditional;  ///< log P(atom | d) / mass, cached
  double log_prior = kNegInf;

  bool operator==(const Particle&) const = default;
};

struct Ensemble {
  std::vector<Particle> particles;
  std::vector<double> weights;
  int iteration = 0;

  std::size_t size() const noexcept { return particles.size(); }
};

/// Sum over atoms of count x log conditional probability; zero-count atoms
/// contribute nothing even where the model puts no mass.
inline double log_likelihood(std::span<const double> counts, std::span<const double> log_cond) {
  double s = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] != 0.0) s += counts[i] * log_cond[i];
  return std::isnan(s) ? kNegInf : s;
}

inline double log_likelihood(const HitCounts& counts, std::span<const double> log_cond) {
  return log_likelihood(counts.counts(), log_cond);
}

/// Conditional-on-detection log-likelihood of a hit list under d.
inline double log_likelihood(std::span<const GammaHit> hits, const LayeredParams& d,
                             const DetectorArray& geom, const Medium& medium) {
  if (hits.empty()) return 0.0;
  const auto lc = ForwardModel(medium, geom).distribution(d).log_conditional();
  double s = 0.0;
  for (const auto& h : hits) {
    if (h.cell >= geom.cells() || h.bin < 1 || h.bin > geom.bins)
      throw DomainError("hit outside the detector");
    s += lc[DetectionDistribution::atom_index(h, geom.cells())];
  }
  return s;
}

/// Normalises prior_weights x exp(log_lik) with a max shift. Throws when
/// every weight vanishes.
inline std::vector<double> normalised_weights(std::span<const double> log_lik,
                                              std::span<const double> prior_weights = {}) {
  const std::size_t n = log_lik.size();
  std::vector<double> lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = prior_weights.empty() ? 0.0
                        : prior_weights[i] > 0 ? std::log(prior_weights[i])
                                               : kNegInf;
    lw[i] = std::isnan(log_lik[i]) ? kNegInf : base + log_lik[i];
  }
  const double top = *std::max_element(lw.begin(), lw.end());
  if (top == kNegInf) throw DegenerateWeightsError("every particle has zero likelihood");
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = lw[i] == kNegInf ? 0.0 : std::exp(lw[i] - top);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Reweights the ensemble by the likelihood of a new data block.
inline const std::vector<double>& importance_step(Ensemble& ensemble, const HitCounts& block) {
  std::vector<double> ll(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    ll[i] = log_likelihood(block, ensemble.particles[i].log_conditional);
  ensemble.weights = normalised_weights(ll, ensemble.weights);
  return ensemble.weights;
}

inline double effective_sample_size(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return s > 0 ? 1.0 / s : 0.0;
}

/// Multinomial ancestor draw.
inline std::vector<std::size_t> resample_indices(std::span<const double> weights, std::size_t n,
                                                 Rng& rng) {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

/// Multinomial resampling; offspring inherit the ancestor's history.
inline void resample(Ensemble& ensemble, Rng& rng) {
  const auto idx = resample_indices(ensemble.weights, ensemble.size(), rng);
  std::vector<Particle> next;
  next.reserve(idx.size());
  for (auto i : idx) next.push_back(ensemble.particles[i]);
  ensemble.particles = std::move(next);
  ensemble.weights.assign(ensemble.size(), 1.0 / static_cast<double>(ensemble.size()));
}

struct MhSettings {
  double delta = 0.1;          ///< ridge added to the adaptive covariance, times s_d
  double beta = 0.05;          ///< weight of the fixed component in phase 2
  double fixed_scale = 0.01;   ///< fixed component covariance is fixed_scale I / m
  int moves = 1;               ///< MH moves per particle per iteration

  void validate() const {
    if (!(delta > 0)) throw DomainError("MH delta must be positive");
    if (!(beta >= 0 && beta <= 1)) throw DomainError("MH beta must lie in [0, 1]");
    if (!(fixed_scale > 0)) throw DomainError("MH fixed_scale must be positive");
    if (moves < 0) throw DomainError("MH moves must be non-negative");
  }
};

inline double adaptive_scale(Eigen::Index m) { return 2.38 * 2.38 / static_cast<double>(m); }

/// Sample covariance (1/k)(sum X X^T - (k+1) Xbar Xbar^T) of k+1 points.
inline Matrix sample_covariance(std::span<const Vector> points) {
  if (points.size() < 2) throw DomainError("sample covariance needs at least two points");
  const Eigen::Index m = points.front().size();
  Vector mean = Vector::Zero(m);
  Matrix outer = Matrix::Zero(m, m);
  for (const auto& x : points) {
    mean += x;
    outer.noalias() += x * x.transpose();
  }
  const auto n = static_cast<double>(points.size());
  mean /= n;
  return (outer - n * mean * mean.transpose()) / (n - 1.0);
}

/// C_t = s_d cov(history) + s_d delta I, s_d = 2.38^2 / m.
inline Matrix adaptive_covariance(std::span<const Vector> history, double delta = 0.1) {
  const Eigen::Index m = history.empty() ? 0 : history.front().size();
  const double sd = adaptive_scale(m);
  Matrix c = sd * sample_covariance(history);
  c.diagonal().array() += sd * delta;
  // Exact symmetry for the Cholesky factor.
  return 0.5 * (c + c.transpose());
}

/// Burn-in lasts while the iteration count t is at most twice the dimension.
inline bool in_burn_in(int t, Eigen::Index m) { return t <= 2 * m; }

/// Draws x + L z for the Cholesky factor L of cov, or x + sqrt(s) z when
/// cov is empty and s = fixed_variance.
inline Vector gaussian_step(const Vector& x, const Matrix* cov, double fixed_variance, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector z(x.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  if (!cov) return x + std::sqrt(fixed_variance) * z;
  Eigen::LLT<Matrix> llt(*cov);
  if (llt.info() != Eigen::Success) throw DomainError("proposal covariance is not positive definite");
  return x + llt.matrixL() * z;
}

/// Phase 1 (t <= 2m): N(x, s I/m). Phase 2: (1 - beta) N(x, C) + beta N(x, s I/m),
/// both components centred at the current point.
inline Vector propose(const Vector& x, int t, const Matrix* cov, const MhSettings& mh, Rng& rng) {
  const Eigen::Index m = x.size();
  const double fixed_var = mh.fixed_scale / static_cast<double>(m);
  if (in_burn_in(t, m) || !cov) return gaussian_step(x, nullptr, fixed_var, rng);
  std::uniform_real_distribution<double> u01;
  if (u01(rng) < mh.beta) return gaussian_step(x, nullptr, fixed_var, rng);
  return gaussian_step(x, cov, 0.0, rng);
}

/// Metropolis acceptance for a symmetric proposal, in log space.
inline bool mh_accept(double log_target_current, double log_target_candidate, Rng& rng) {
  if (log_target_candidate == kNegInf || std::isnan(log_target_candidate)) return false;
  if (log_target_candidate >= log_target_current) return true;
  std::uniform_real_distribution<double> u01;
  return std::log(u01(rng)) < log_target_candidate - log_target_current;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers with a static
/// partition. Results must not depend on scheduling.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& f) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Mean over particles of D(P(.|d_j) || P(.|d*)), weighted by the current
/// ensemble weights (uniform right after selection).
inline double mean_kl(const Ensemble& ensemble, std::span<const double> truth_log_cond) {
  double s = 0.0;
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    s += ensemble.weights[i] *
         kl_divergence_log(ensemble.particles[i].log_conditional, truth_log_cond).value;
  return s;
}

inline double mean_kl(const Ensemble& ensemble, const LayeredParams& d_star,
                      const ForwardModel& fm) {
  return mean_kl(ensemble, fm.distribution(d_star).log_conditional());
}

struct SmcSettings {
  std::size_t particles = 500;
  std::size_t k_per_block = 1000;
  std::vector<std::size_t> block_sizes;  ///< per iteration; overrides k_per_block when set
  int iterations = 20;
  bool ess_mode = false;  ///< resample only when ESS < N/2
  MhSettings mh;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  std::size_t block_size(int t) const {
    if (block_sizes.empty()) return k_per_block;
    return block_sizes[static_cast<std::size_t>(t - 1) % block_sizes.size()];
  }

  void validate() const {
    if (particles < 2) throw DomainError("SMC needs at least two particles");
    if (iterations < 0) throw DomainError("iteration count must be non-negative");
    if (k_per_block == 0 && block_sizes.empty()) throw DomainError("data blocks must be non-empty");
    mh.validate();
  }
};

struct SmcProblem {
  LayeredParams truth;
  Prior prior;
  ParameterSpace space;  ///< pinned values are ignored for free coordinates
  ForwardModel forward;
};

struct IterationRecord {
  int iteration = 0;
  double mean_kl = 0.0;
  double acceptance_rate = 0.0;
  double ess = 0.0;  ///< after the importance step, before selection
  std::size_t observations = 0;  ///< cumulative
};

struct SmcTrace {
  std::vector<IterationRecord> records;
};

struct SmcResult {
  SmcTrace trace;
  Ensemble ensemble;
  double initial_mean_kl = 0.0;
};

namespace detail {

// Stream kinds for make_stream.
enum : std::uint64_t { kStreamInit = 1, kStreamData = 2, kStreamSelect = 3, kStreamMutate = 4 };

inline std::uint64_t stream_id(std::uint64_t kind, std::uint64_t t) { return (kind << 40) ^ t; }

/// Forward log conditional, or nullopt when d has no valid emission
/// density or the detector sees nothing.
inline std::optional<std::vector<double>> try_forward(const ForwardModel& fm, const Vector& d) {
  try {
    return fm.distribution(unpack(d)).log_conditional();
  } catch (const DegenerateDoseError&) {
  } catch (const ZeroMassError&) {
  } catch (const DomainError&) {
  }
  return std::nullopt;
}

}  // namespace detail

/// Draws from the truncated prior by rejection, then evaluates the forward
/// model; particles whose forward model fails are redrawn.
inline Ensemble initial_ensemble(const SmcProblem& problem, const SmcSettings& settings) {
  Ensemble e;
  e.particles.resize(settings.particles);
  e.weights.assign(settings.particles, 1.0 / static_cast<double>(settings.particles));
  parallel_for(settings.particles, settings.threads, [&](std::size_t i) {
    auto rng = make_stream(settings.seed, detail::stream_id(detail::kStreamInit, 0), i);
    std::normal_distribution<double> normal;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      Vector full = problem.space.pinned;
      for (auto k : problem.space.free) full[k] = problem.prior.mean[k] + problem.prior.sd[k] * normal(rng);
      if (!problem.prior.in_bounds(full)) continue;
      auto lc = detail::try_forward(problem.forward, full);
      if (!lc) continue;
      auto& p = e.particles[i];
      p.params = full;
      p.log_conditional = std::move(*lc);
      p.log_prior = problem.prior.log_density(full, problem.space.free);
      return;
    }
    throw DomainError("could not draw a valid particle from the prior");
  });
  return e;
}

/// Iterated batch importance sampling with adaptive Metropolis mutation.
/// Iteration t: draw a data block from the truth, reweight, select,
/// append each particle's post-selection location to its history, then
/// make `moves` MH moves targeting the posterior given all data so far.
/// `on_iteration` sees the initial ensemble (record with iteration 0 and
/// only mean_kl set) and then the ensemble after each completed iteration.
inline SmcResult smc_run(const SmcProblem& problem, const SmcSettings& settings,
                         const std::function<void(const Ensemble&, const IterationRecord&)>&
                             on_iteration = {}) {
  settings.validate();
  problem.prior.validate();
  for (const auto& d : problem.truth) d.validate();
  if (problem.space.dim() != problem.prior.dim())
    throw DomainError("parameter space and prior dimensions differ");
  if (problem.space.m() == 0) throw DomainError("no free parameters to infer");
  validate(problem.truth, problem.forward.medium().phantom);

  const auto& fm = problem.forward;
  const auto truth_dist = fm.distribution(problem.truth);
  const auto truth_lc = truth_dist.log_conditional();
  const Eigen::Index m = problem.space.m();

  SmcResult result;
  Ensemble& ens = result.ensemble;
  ens = initial_ensemble(problem, settings);
  result.initial_mean_kl = mean_kl(ens, truth_lc);
  if (on_iteration) {
    IterationRecord start;
    start.mean_kl = result.initial_mean_kl;
    start.ess = static_cast<double>(ens.size());
    on_iteration(ens, start);
  }

  HitCounts all_data(fm.geometry());
  const std::size_t n = settings.particles;
  std::vector<int> accepted(n);

  for (int t = 1; t <= settings.iterations; ++t) {
    ens.iteration = t;
    auto data_rng = make_stream(settings.seed, detail::stream_id(detail::kStreamData, t));
    const auto hits = sample_hits(settings.block_size(t), truth_dist, data_rng);
    HitCounts block(fm.geometry());
    block.add(hits);
    all_data.add(block);

    IterationRecord rec;
    rec.iteration = t;
    rec.observations = all_data.total();
    importance_step(ens, block);
    rec.ess = effective_sample_size(ens.weights);
    if (!settings.ess_mode || rec.ess < 0.5 * static_cast<double>(n)) {
      auto sel_rng = make_stream(settings.seed, detail::stream_id(detail::kStreamSelect, t));
      resample(ens, sel_rng);
    }
    for (auto& p : ens.particles) p.history.push_back(problem.space.reduce(p.params));

    std::fill(accepted.begin(), accepted.end(), 0);
    parallel_for(n, settings.threads, [&](std::size_t i) {
      auto& p = ens.particles[i];
      auto rng = make_stream(settings.seed, detail::stream_id(detail::kStreamMutate, t), i);
      std::optional<Matrix> cov;
      if (!in_burn_in(t, m) && p.history.size() >= 2)
        cov = adaptive_covariance(p.history, settings.mh.delta);
      double current = p.log_prior + log_likelihood(all_data, p.log_conditional);
      for (int move = 0; move < settings.mh.moves; ++move) {
        const Vector x = problem.space.reduce(p.params);
        const Vector y = problem.space.embed(propose(x, t, cov ? &*cov : nullptr, settings.mh, rng));
        const double lp = problem.prior.log_density(y, problem.space.free);
        double target = kNegInf;
        std::optional<std::vector<double>> lc;
        if (lp != kNegInf) {
          lc = detail::try_forward(fm, y);
          if (lc) target = lp + log_likelihood(all_data, *lc);
        }
        if (mh_accept(current, target, rng)) {
          p.params = y;
          p.log_prior = lp;
          p.log_conditional = std::move(*lc);
          current = target;
          ++accepted[i];
        }
      }
    });
    const double moves = static_cast<double>(n) * settings.mh.moves;
    rec.acceptance_rate =
        moves > 0 ? std::accumulate(accepted.begin(), accepted.end(), 0.0) / moves : 0.0;
    rec.mean_kl = mean_kl(ens, truth_lc);
    result.trace.records.push_back(rec);
    if (on_iteration) on_iteration(ens, rec);
  }
  return result;
}

/// Weighted average over particles of the normalised emission density Q at
/// each depth in xs, each particle normalised by its emission-grid integral.
inline std::vector<double> mean_emission_density(const Ensemble& e, const ForwardModel& fm,
                                                 std::span<const double> xs) {
  const auto& phantom = fm.medium().phantom;
  std::vector<double> out(xs.size(), 0.0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e.weights[i] == 0.0) continue;
    const auto params = unpack(e.particles[i].params);
    const double norm = fm.emission(params).dose_integral;
    std::vector<BortfeldModel::Curve> curves;
    for (const auto& d : params) curves.push_back(fm.dose_model().bind(d));
    for (std::size_t k = 0; k < xs.size(); ++k)
      out[k] += e.weights[i] * curves[phantom.layer_index(xs[k])].dose(xs[k]) / norm;
  }
  return out;
}

/// Weighted mean and standard deviation of each parameter coordinate.
inline std::pair<Vector, Vector> posterior_moments(const Ensemble& e) {
  const Eigen::Index d = e.particles.front().params.size();
  Vector mean = Vector::Zero(d), sq = Vector::Zero(d);
  for (std::size_t i = 0; i < e.size(); ++i) {
    mean += e.weights[i] * e.particles[i].params;
    sq += e.weights[i] * e.particles[i].params.cwiseProduct(e.particles[i].params);
  }
  Vector var = (sq - mean.cwiseProduct(mean)).cwiseMax(0.0);
  return {mean, var.cwiseSqrt()};
}

}  // namespace pgv
