#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pgv/bortfeld.hpp"

namespace {

using pgv::TissueParams;

const TissueParams kTruth{16.9, 0.3, 0.25};

TissueParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> R(5.0, 18.0), s(0.1, 0.6), e(0.0, 0.6);
  return {R(rng), s(rng), e(rng)};
}

TEST(Zeta, Definition) {
  EXPECT_DOUBLE_EQ(pgv::zeta(kTruth.R, kTruth), 0.0);
  EXPECT_NEAR(pgv::zeta(kTruth.R - kTruth.sigma, kTruth), 1.0, 1e-14);
  EXPECT_NEAR(pgv::zeta(0.0, kTruth), 56.333333333333, 1e-9);
}

TEST(TissueParams, Validation) {
  EXPECT_NO_THROW(kTruth.validate());
  EXPECT_THROW((TissueParams{0.0, 0.3, 0.1}.validate()), pgv::DomainError);
  EXPECT_THROW((TissueParams{10, 0.0, 0.1}.validate()), pgv::DomainError);
  EXPECT_THROW((TissueParams{10, 0.3, -0.01}.validate()), pgv::DomainError);
  EXPECT_THROW((TissueParams{10, 0.3, 1.0}.validate()), pgv::DomainError);
  pgv::FixedPhysics bad;
  bad.p = 1.0;
  EXPECT_THROW(bad.validate(), pgv::DomainError);
}

TEST(RangeEnergy, BraggKleeman) {
  EXPECT_NEAR(pgv::range_from_energy(100.0), 0.0022 * std::pow(100.0, 1.77), 1e-12);
  EXPECT_NEAR(pgv::range_from_energy(100.0), 7.6, 0.05);
  EXPECT_NEAR(pgv::energy_from_range(pgv::range_from_energy(150.0)), 150.0, 1e-10);
  EXPECT_THROW(pgv::range_from_energy(0.0), pgv::DomainError);
}

TEST(Dose, AgreesWithLiteralFormula) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 10; ++i) {
    const auto d = random_params(rng);
    for (double zeta = -20.0; zeta <= 20.0; zeta += 2.5) {
      const double x = d.R - zeta * d.sigma;
      if (x < 0) continue;
      const double want = oracle::dose(x, d.R, d.sigma, d.epsilon);
      EXPECT_NEAR(pgv::dose(x, d) / want, 1.0, 1e-9) << "R=" << d.R << " zeta=" << zeta;
    }
  }
}

TEST(Dose, RejectsNegativeDepth) { EXPECT_THROW(pgv::dose(-0.1, kTruth), pgv::DomainError); }

TEST(Dose, PeakSitsJustProximalOfRange) {
  const pgv::BortfeldModel model;
  double best_x = 0, best = -1;
  for (double x = 0.0; x <= kTruth.R + 5 * kTruth.sigma; x += 1e-3) {
    const double v = model.dose(x, kTruth);
    if (v > best) best = v, best_x = x;
  }
  EXPECT_GT(best_x, kTruth.R - 3 * kTruth.sigma);
  EXPECT_LT(best_x, kTruth.R + kTruth.sigma);
  EXPECT_LT(model.dose(kTruth.R + 10 * kTruth.sigma, kTruth), 1e-6 * best);
}

TEST(Dose, LinearInEpsilon) {
  const pgv::BortfeldModel model;
  const double p = 1.77;
  const TissueParams a{16.9, 0.3, 0.25}, b{16.9, 0.3, 0.05};
  for (double x : {11.0, 15.5, 16.7, 17.2, 19.0}) {
    const double z = (a.R - x) / a.sigma;
    const double k1 = std::exp(-z * z / 4) * std::pow(a.sigma, 1 / p) * std::tgamma(1 / p) /
                      (std::sqrt(2 * std::numbers::pi) * p * std::pow(0.0022, 1 / p) *
                       (1 + 0.012 * a.R));
    const double want = k1 * (a.epsilon - b.epsilon) / a.R * oracle::pcf(-1 / p - 1, -z);
    EXPECT_NEAR((model.dose(x, a) - model.dose(x, b)) / want, 1.0, 1e-8) << x;
  }
}

TEST(Dose, NonNegativeEverywhere) {
  std::mt19937_64 rng(22);
  const pgv::BortfeldModel model;
  for (int i = 0; i < 20; ++i) {
    const auto d = random_params(rng);
    for (double x = 0; x <= 25.0; x += 0.05) {
      const double v = model.dose(x, d);
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(EmissionDensity, NormalisedForRandomParameters) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 50; ++i) {
    const auto d = random_params(rng);
    const double hi = d.R + 5 * d.sigma + 2.0;
    const pgv::EmissionDensity q(d, {}, 0.0, hi);
    pgv::quad::AdaptiveOptions opt;
    opt.rel_tol = 1e-11;
    opt.initial_panels = 400;
    const double mass = pgv::quad::integrate(q, 0.0, hi, opt).value;
    EXPECT_NEAR(mass, 1.0, 1e-6);
  }
}

TEST(EmissionDensity, InvariantToFluence) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> phi(1e-3, 1e3);
  for (int i = 0; i < 10; ++i) {
    const auto d = random_params(rng);
    pgv::FixedPhysics a, b;
    b.phi0 = phi(rng);
    const pgv::EmissionDensity qa(d, a, 0.0, 22.0), qb(d, b, 0.0, 22.0);
    for (double x = 0; x <= 22.0; x += 0.37) EXPECT_NEAR(qb(x), qa(x), 1e-12 * qa(x) + 1e-300);
  }
}

TEST(EmissionDensity, ArgmaxMatchesDose) {
  const pgv::EmissionDensity q(kTruth, {}, 0.0, 21.9);
  const pgv::BortfeldModel model;
  double xq = 0, xd = 0, bq = -1, bd = -1;
  for (double x = 0; x <= 21.9; x += 1e-3) {
    if (q(x) > bq) bq = q(x), xq = x;
    if (model.dose(x, kTruth) > bd) bd = model.dose(x, kTruth), xd = x;
  }
  EXPECT_DOUBLE_EQ(xq, xd);
}

TEST(EmissionDensity, DegenerateWhenPeakFarOutsideDomain) {
  EXPECT_THROW(pgv::EmissionDensity(TissueParams{1.0, 0.05, 0.0}, {}, 10.0, 11.0),
               pgv::DegenerateDoseError);
  EXPECT_THROW(pgv::EmissionDensity(kTruth, {}, 5.0, 5.0), pgv::DomainError);
  const pgv::EmissionDensity q(kTruth, {}, 0.0, 21.9);
  EXPECT_THROW(q(22.0), pgv::DomainError);
}

}  // namespace
