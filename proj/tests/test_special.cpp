#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pgv/special.hpp"

namespace {

constexpr double kNuLead = -1.0 / 1.77;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

TEST(GammaFn, KnownValues) {
  EXPECT_DOUBLE_EQ(pgv::gamma_fn(1.0), 1.0);
  EXPECT_NEAR(pgv::gamma_fn(0.5), std::sqrt(std::numbers::pi), 1e-15);
}

TEST(GammaFn, MatchesIntegralOracle) {
  for (double z : {1.0 / 1.77, 0.1, 0.9, 1.5, 3.7, 10.0, 25.5, 50.0})
    EXPECT_LT(rel(pgv::gamma_fn(z), oracle::gamma(z)), 1e-12) << "z=" << z;
}

TEST(GammaFn, RejectsNonPositive) {
  EXPECT_THROW(pgv::gamma_fn(0.0), pgv::DomainError);
  EXPECT_THROW(pgv::gamma_fn(-1.5), pgv::DomainError);
  EXPECT_THROW(pgv::log_gamma_fn(0.0), pgv::DomainError);
}

TEST(PcfOrder, OnlyNegativeOrders) {
  EXPECT_NO_THROW(pgv::PcfOrder(-0.1));
  EXPECT_THROW(pgv::PcfOrder(0.0), pgv::DomainError);
  EXPECT_THROW(pgv::PcfOrder(0.5), pgv::DomainError);
  EXPECT_THROW(pgv::pcf_scaled(0.0, 1.0), pgv::DomainError);
  EXPECT_THROW(pgv::pcf_scaled(-1.0, std::nan("")), pgv::DomainError);
  EXPECT_THROW(pgv::pcf_scaled(-1.0, INFINITY), pgv::DomainError);
}

// S(-1, z) has a closed form through erfc; compare log values so the whole
// range [-40, 40] stays representable.
TEST(PcfScaled, ErfcClosedForm) {
  for (int i = 0; i <= 800; ++i) {
    const double z = -40.0 + 0.1 * i;
    const double want = oracle::log_pcf_scaled_minus_one(z);
    const double got = pgv::log_pcf_scaled(-1.0, z);
    EXPECT_LT(std::abs(std::expm1(got - want)), 1e-8) << "z=" << z;
  }
}

TEST(PcfScaled, ValueAtZero) {
  for (double nu : {-0.1, kNuLead, -1.0, kNuLead - 1.0, -2.5, -4.0})
    EXPECT_LT(rel(pgv::pcf(nu, 0.0), oracle::pcf_at_zero(nu)), 1e-10) << "nu=" << nu;
}

TEST(PcfScaled, MatchesIntegralOracle) {
  for (double nu : {kNuLead, kNuLead - 1.0})
    for (double z : {-18.0, -7.5, -1.0, 0.3, 4.0, 12.0, 19.0})
      EXPECT_LT(rel(pgv::pcf(nu, z), oracle::pcf(nu, z)), 1e-9) << nu << " " << z;
}

TEST(PcfScaled, FarDistalPositiveAndBelowZeroValue) {
  const double far = pgv::pcf_scaled(kNuLead, 60.0);
  EXPECT_GT(far, 0.0);
  EXPECT_LT(far, pgv::pcf_scaled(kNuLead, 0.0));
}

TEST(PcfScaled, RecurrenceInScaledForm) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> nu_d(-1.99, -1.01), z_d(-30.0, 30.0);
  for (int i = 0; i < 200; ++i) {
    const double nu = nu_d(rng), z = z_d(rng);
    const double a = pgv::pcf_scaled(nu + 1, z);
    const double b = z * pgv::pcf_scaled(nu, z);
    const double c = nu * pgv::pcf_scaled(nu - 1, z);
    const double scale = std::max({std::abs(a), std::abs(b), std::abs(c)});
    EXPECT_LT(std::abs(a - b + c) / scale, 1e-7) << "nu=" << nu << " z=" << z;
  }
}

TEST(PcfScaled, PositiveAndDecreasing) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> nu_d(-3.0, -0.05), z_d(-60.0, 60.0);
  for (int i = 0; i < 20; ++i) {
    const double nu = nu_d(rng), z = z_d(rng);
    const double h = 1e-4 * std::max(1.0, std::abs(z));
    EXPECT_GT(pgv::pcf_scaled(nu, z), 0.0);
    EXPECT_LT(pgv::log_pcf_scaled(nu, z + h) - pgv::log_pcf_scaled(nu, z - h), 0.0)
        << "nu=" << nu << " z=" << z;
  }
}

TEST(PcfScaled, StepHalvingIsStable) {
  for (double nu : {kNuLead, kNuLead - 1.0, -0.2, -3.0})
    for (double z : {-60.0, -20.0, -2.0, 0.0, 1.5, 15.0, 60.0}) {
      const double coarse = pgv::detail::log_pcf_scaled(-nu, z, 2, 1e-13);
      const double fine = pgv::detail::log_pcf_scaled(-nu, z, 4, 1e-13);
      EXPECT_LT(std::abs(std::expm1(coarse - fine)), 1e-9) << nu << " " << z;
    }
}

TEST(PcfScaled, DeepProximalSideStaysFinite) {
  for (double z : {-60.0, -500.0, -5000.0, -2e4}) {
    const double v = pgv::log_pcf_scaled(kNuLead, z);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0);
  }
}

TEST(PcfInterpolant, AgreesWithQuadrature) {
  const pgv::PcfInterpolant table(kNuLead);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> core(-120.0, 120.0), outer(std::log(120.0), std::log(1e4));
  for (int i = 0; i < 400; ++i) {
    double z = i % 2 ? core(rng) : std::exp(outer(rng));
    if (i % 4 == 2) z = -z;
    const double want = pgv::log_pcf_scaled(kNuLead, z);
    EXPECT_NEAR(table.log_value(z), want, 1e-11 * std::max(1.0, std::abs(want))) << "z=" << z;
  }
  EXPECT_DOUBLE_EQ(table.log_value(2e4), pgv::log_pcf_scaled(kNuLead, 2e4));
}

TEST(PcfInterpolant, SharedInstancesAreCached) {
  EXPECT_EQ(pgv::PcfInterpolant::shared(-0.7).get(), pgv::PcfInterpolant::shared(-0.7).get());
}

}  // namespace
