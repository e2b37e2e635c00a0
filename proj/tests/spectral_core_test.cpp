#include <gtest/gtest.h>

#include <random>

#include "axs/spectral_core.hpp"

using namespace axs;

TEST(EnergyCalibration, Endpoints) {
  EnergyCalibration cal(0.0, 50.0, 1024);
  EXPECT_EQ(energy_of_channel(cal, 0), 0.0);
  EXPECT_EQ(energy_of_channel(cal, 1023), 50.0);
  EXPECT_DOUBLE_EQ(energy_of_channel(cal, 511), 511.0 * 50.0 / 1023.0);
  EXPECT_EQ(channel_of_energy(cal, 0.0), 0.0);
  EXPECT_EQ(channel_of_energy(cal, 50.0), 1023.0);
}

TEST(EnergyCalibration, RoundTrip) {
  EnergyCalibration cal(0.0, 50.0, 1024);
  EXPECT_NEAR(channel_of_energy(cal, energy_of_channel(cal, 511)), 511.0, 1e-12 * 511.0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int k = 0; k < 100; ++k) {
    double e = u(rng);
    double ch = channel_of_energy(cal, e);
    double back = cal.e_min() + ch * cal.channel_width();
    EXPECT_NEAR(back, e, 1e-12 * std::max(1.0, e));
  }
}

TEST(EnergyCalibration, StrictlyIncreasing) {
  EnergyCalibration cal(0.5, 40.0, 300);
  for (std::int64_t ch = 1; ch < 300; ++ch) {
    EXPECT_LT(energy_of_channel(cal, ch - 1), energy_of_channel(cal, ch));
  }
}

TEST(EnergyCalibration, RangeErrors) {
  EnergyCalibration cal;
  EXPECT_THROW(energy_of_channel(cal, -1), RangeError);
  EXPECT_THROW(energy_of_channel(cal, 1024), RangeError);
  EXPECT_THROW(channel_of_energy(cal, -0.1), RangeError);
  EXPECT_THROW(channel_of_energy(cal, 50.01), RangeError);
  EXPECT_THROW(unit_position(cal, 1024), RangeError);
  EXPECT_THROW(EnergyCalibration(5.0, 5.0), DomainError);
  EXPECT_THROW(EnergyCalibration(0.0, 5.0, 1), DomainError);
}

TEST(EnergyCalibration, UnitPosition) {
  EnergyCalibration cal;
  EXPECT_EQ(unit_position(cal, 0), 0.0);
  EXPECT_EQ(unit_position(cal, 1023), 1.0);
  EXPECT_EQ(unit_position(cal, 341), 341.0 / 1023.0);
  auto u = cal.unit_positions();
  EXPECT_EQ(u[341], 341.0 / 1023.0);
}

TEST(Spectrum, RejectsBadCounts) {
  EnergyCalibration cal(0.0, 1.0, 4);
  EXPECT_NO_THROW(Spectrum({0, 1, 2, 3}, cal));
  EXPECT_THROW(Spectrum({0, 1, 2}, cal), ShapeError);
  EXPECT_THROW(Spectrum({0, -1, 2, 3}, cal), DomainError);
  EXPECT_THROW(Spectrum({0, std::nan(""), 2, 3}, cal), DomainError);
}

TEST(ElementRegistry, HasTheFortyEightTargets) {
  EXPECT_EQ(ElementRegistry::size(), 48u);
  EXPECT_EQ(ElementRegistry::symbol(0), "Ag");
  EXPECT_EQ(ElementRegistry::symbol(47), "Zr");
  EXPECT_EQ(ElementRegistry::index_of("Li"), 20u);
  EXPECT_FALSE(ElementRegistry::contains("Si"));
  EXPECT_THROW(ElementRegistry::index_of("Xx"), LookupError);
  auto syms = ElementRegistry::symbols();
  EXPECT_TRUE(std::is_sorted(syms.begin(), syms.end()));
}

TEST(Composition, RejectsOutOfRange) {
  Composition c;
  c.set("Fe", 0.05);
  EXPECT_EQ(c.at("Fe"), 0.05);
  EXPECT_THROW(c.set("Fe", 1.5), DomainError);
  EXPECT_THROW(c.set("Fe", -1e-9), DomainError);
  EXPECT_THROW(Composition(std::vector<double>(47, 0.0)), ShapeError);
}
