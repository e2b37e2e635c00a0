#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "axs/simulator.hpp"

using namespace axs;

namespace {

TransitionTable bundled() { return load_transition_table(AXS_DATA_DIR "/transitions.csv"); }

TransitionTable fixture_table() {
  std::istringstream in(
      "element,kind,energy_kev,probability\n"
      "Fe,K,6.40384,0.58\nFe,K,7.05798,0.12\n"
      "Cu,K,8.04778,0.58\nCu,K,8.90529,0.12\nCu,L3,0.9297,0.8\n"
      "Sr,K,14.165,0.58\nSr,L3,1.80656,0.8\n");
  return parse_transition_table(in);
}

// Straightforward per-channel evaluation of f, independent of XrfSimulator.
std::vector<double> naive_simulate(const TransitionTable& table, const std::vector<std::string>& elements,
                                   const std::vector<double>& theta, double alpha, const SimulatorGlobals& g,
                                   const EnergyCalibration& cal) {
  std::vector<double> out(cal.n_channels());
  for (std::size_t i = 0; i < cal.n_channels(); ++i) {
    const double e = cal.e_min() + static_cast<double>(i) * (cal.e_max() - cal.e_min()) / (cal.n_channels() - 1.0);
    const double u = static_cast<double>(i) / (cal.n_channels() - 1.0);
    double gsum = 0.0;
    for (std::size_t k = 0; k < elements.size(); ++k) {
      double peaks = 0.0;
      for (const auto& t : table.of(elements[k])) {
        const double half = g.gamma / 2.0;
        peaks += t.probability * half * half / ((e - t.energy_kev) * (e - t.energy_kev) + half * half);
      }
      gsum += theta[k] * peaks;
    }
    const double s = 1.0 / (1.0 + std::exp(g.a2 * (g.c2 - e)) + std::exp(g.a1 * (g.c1 - e)));
    const double b = alpha * (3.0 * g.p1 * u * (1 - u) * (1 - u) + 3.0 * g.p2 * u * u * (1 - u));
    out[i] = gsum * s + b;
  }
  return out;
}

std::vector<double> random_theta(std::size_t n, std::mt19937_64& rng, double hi = 10.0) {
  std::uniform_real_distribution<double> u(0.0, hi);
  std::vector<double> t(n);
  for (auto& v : t) v = u(rng);
  return t;
}

SimulatorGlobals random_globals(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {0.1 + 0.5 * u(rng), 0.5 + 3 * u(rng), 1 + 4 * u(rng), -0.5 * u(rng), 30 + 15 * u(rng), u(rng), u(rng)};
}

}  // namespace

TEST(Lorentzian, ClosedFormValues) {
  EXPECT_EQ(lorentzian(6.4, 0.58, 0.3, 6.4), 0.58);
  EXPECT_NEAR(lorentzian(6.4, 0.58, 0.3, 6.4 + 0.15), 0.29, 1e-12);
  EXPECT_NEAR(lorentzian(6.4, 0.58, 0.3, 6.4 - 0.15), 0.29, 1e-12);
  EXPECT_NEAR(lorentzian(6.4, 2.0, 0.2, 6.6), 0.4, 1e-12);
  EXPECT_THROW(lorentzian(6.4, 1.0, 0.0, 6.4), DomainError);
  EXPECT_THROW(lorentzian(6.4, 1.0, -0.1, 6.4), DomainError);
}

TEST(TheoreticalSpectrum, ZeroThetaGivesZero) {
  auto table = bundled();
  std::vector<double> theta(SimulatorLayout::standard().size(), 0.0);
  auto s = theoretical_spectrum(theta, table, {}, {});
  for (double c : s.counts()) EXPECT_EQ(c, 0.0);
}

TEST(TheoreticalSpectrum, SingleLineIsScaledLorentzian) {
  std::istringstream in("element,kind,energy_kev,probability\nFe,K,6.4,0.5\n");
  auto table = parse_transition_table(in);
  EnergyCalibration cal;
  SimulatorGlobals g;
  auto s = theoretical_spectrum(std::vector<double>{3.0}, table, g, cal, SimulatorLayout::of({"Fe"}));
  for (std::size_t i = 0; i < cal.n_channels(); ++i) {
    EXPECT_NEAR(s[i], 3.0 * lorentzian(6.4, 0.5, g.gamma, cal.energy_at(i)), 1e-14);
  }
}

TEST(TheoreticalSpectrum, AdditiveAcrossElements) {
  auto table = fixture_table();
  EnergyCalibration cal;
  SimulatorGlobals g;
  auto both = theoretical_spectrum(std::vector<double>{2.0, 5.0}, table, g, cal, SimulatorLayout::of({"Fe", "Cu"}));
  auto fe = theoretical_spectrum(std::vector<double>{2.0}, table, g, cal, SimulatorLayout::of({"Fe"}));
  auto cu = theoretical_spectrum(std::vector<double>{5.0}, table, g, cal, SimulatorLayout::of({"Cu"}));
  for (std::size_t i = 0; i < cal.n_channels(); ++i) EXPECT_NEAR(both[i], fe[i] + cu[i], 1e-12);
}

TEST(TheoreticalSpectrum, ElementListMismatch) {
  auto table = fixture_table();
  EXPECT_THROW(theoretical_spectrum(std::vector<double>{1.0}, table, {}, {}, SimulatorLayout::of({"Fe", "Cu"})),
               ShapeError);
}

TEST(InstrumentResponse, Values) {
  EnergyCalibration cal;
  SimulatorGlobals flat{0.3, 0.0, 3.0, 0.0, 40.0, 0.5, 0.5};
  for (double s : instrument_response(flat, cal)) EXPECT_NEAR(s, 1.0 / 3.0, 1e-15);

  SimulatorGlobals at_zero{0.3, 1.0, 0.0, 1.0, 0.0, 0.5, 0.5};
  EXPECT_NEAR(instrument_response(at_zero, cal)[0], 1.0 / 3.0, 1e-15);

  SimulatorGlobals steep{0.3, 50.0, 25.0, 50.0, 25.0, 0.5, 0.5};
  auto s = instrument_response(steep, cal);
  EXPECT_LT(s[100], 1e-12);
  EXPECT_GT(s[1000], 1.0 - 1e-12);
}

TEST(InstrumentResponse, StaysInsideUnitInterval) {
  std::mt19937_64 rng(3);
  EnergyCalibration cal;
  for (int k = 0; k < 100; ++k) {
    for (double v : instrument_response(random_globals(rng), cal)) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Background, Values) {
  EnergyCalibration cal;
  SimulatorGlobals g{0.3, 2, 3, -0.2, 40, 0.7, 1.3};
  auto b = background(g, 5.0, cal);
  EXPECT_EQ(b[0], 0.0);
  EXPECT_EQ(b[1023], 0.0);
  for (double v : background(g, 0.0, cal)) EXPECT_EQ(v, 0.0);

  EnergyCalibration odd(0.0, 50.0, 1025);
  SimulatorGlobals ones{0.3, 2, 3, -0.2, 40, 1.0, 1.0};
  EXPECT_NEAR(background(ones, 1.0, odd)[512], 0.75, 1e-15);
  EXPECT_THROW(background(g, -1.0, cal), DomainError);
}

TEST(Simulate, ZeroAndBackgroundOnly) {
  auto table = bundled();
  EnergyCalibration cal;
  SimulatorGlobals g;
  std::vector<double> zero(SimulatorLayout::standard().size(), 0.0);
  auto s0 = simulate({zero, 0.0}, table, g, cal);
  for (double v : s0.counts()) EXPECT_EQ(v, 0.0);
  auto sb = simulate({zero, 4.0}, table, g, cal);
  auto b = background(g, 4.0, cal);
  for (std::size_t i = 0; i < cal.n_channels(); ++i) EXPECT_EQ(sb[i], b[static_cast<Eigen::Index>(i)]);
}

TEST(Simulate, MatchesNaiveOracle) {
  auto table = fixture_table();
  EnergyCalibration cal;
  std::vector<std::string> els{"Fe", "Cu", "Sr"};
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto theta = random_theta(3, rng, 100.0);
    auto g = random_globals(rng);
    auto s = simulate({theta, 20.0}, table, g, cal, SimulatorLayout::of(els));
    auto ref = naive_simulate(table, els, theta, 20.0, g, cal);
    for (std::size_t i = 0; i < cal.n_channels(); ++i) EXPECT_NEAR(s[i], ref[i], 1e-10 * (1.0 + ref[i]));
  }
}

TEST(Simulate, RejectsInvalidLatent) {
  auto table = fixture_table();
  auto layout = SimulatorLayout::of({"Fe"});
  EXPECT_THROW(simulate({{-1.0}, 0.0}, table, {}, {}, layout), DomainError);
  EXPECT_THROW(simulate({{1.0}, -1.0}, table, {}, {}, layout), DomainError);
  SimulatorGlobals bad;
  bad.gamma = 0.0;
  EXPECT_THROW(simulate({{1.0}, 0.0}, table, bad, {}, layout), DomainError);
}

TEST(Simulate, LinearInThetaAffineInAlpha) {
  auto table = bundled();
  EnergyCalibration cal;
  XrfSimulator sim(table, cal);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ua(0.0, 50.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto g = random_globals(rng);
    auto t1 = random_theta(sim.n_slots(), rng), t2 = random_theta(sim.n_slots(), rng);
    std::vector<double> t12(t1.size()), zero(t1.size(), 0.0);
    for (std::size_t k = 0; k < t1.size(); ++k) t12[k] = t1[k] + t2[k];
    const double a = ua(rng), a1 = ua(rng), a2 = ua(rng);
    RowVector lhs = sim.simulate({t12, a}, g) - sim.simulate({zero, a}, g);
    RowVector rhs = sim.simulate({t1, 0.0}, g) + sim.simulate({t2, 0.0}, g);
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    RowVector l2 = sim.simulate({t1, a1 + a2}, g) + sim.simulate({t1, 0.0}, g);
    RowVector r2 = sim.simulate({t1, a1}, g) + sim.simulate({t1, a2}, g);
    worst = std::max(worst, (l2 - r2).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Simulate, PeakSitsAtNearestChannel) {
  EnergyCalibration cal;
  SimulatorGlobals flat{0.3, 0.0, 3.0, 0.0, 40.0, 0.5, 0.5};
  for (double e : {1.7, 6.40384, 14.165, 33.3}) {
    std::istringstream in("element,kind,energy_kev,probability\nX," + std::string("K,") + std::to_string(e) + ",1\n");
    auto table = parse_transition_table(in);
    auto s = simulate({{1.0}, 0.0}, table, flat, cal, SimulatorLayout::of({"X"}));
    auto it = std::max_element(s.counts().begin(), s.counts().end());
    auto argmax = static_cast<std::size_t>(it - s.counts().begin());
    EXPECT_EQ(argmax, *nearest_channel(cal, std::stod(std::to_string(e))));
  }
}

TEST(SimulateWithGradients, ClosedFormPartials) {
  auto table = fixture_table();
  EnergyCalibration cal;
  auto layout = SimulatorLayout::of({"Fe", "Cu", "Sr"});
  XrfSimulator sim(table, cal, layout);
  SimulatorGlobals g;
  auto j = sim.simulate_with_gradients({{1.0, 2.0, 3.0}, 7.0}, g);
  auto jb = sim.simulate_with_gradients({{9.0, 0.0, 0.5}, 7.0}, g);
  auto bz = bezier_basis(cal);
  RowVector shape = g.p1 * bz.first + g.p2 * bz.second;
  EXPECT_LT((j.d_alpha - shape).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((j.d_alpha - jb.d_alpha).cwiseAbs().maxCoeff(), 0.0 + 1e-300);

  RowVector s = sim.response(g);
  for (std::size_t e = 0; e < 3; ++e) {
    std::vector<double> unit(3, 0.0);
    unit[e] = 1.0;
    RowVector expect = sim.theoretical(unit, g.gamma).cwiseProduct(s);
    EXPECT_LT((j.d_theta.row(static_cast<Eigen::Index>(e)) - expect).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(SimulateWithGradients, MatchesCentralDifferences) {
  auto table = bundled();
  EnergyCalibration cal;
  XrfSimulator sim(table, cal);
  std::mt19937_64 rng(19);
  const double h = 1e-4;
  for (int trial = 0; trial < 3; ++trial) {
    SampleLatent lat{random_theta(sim.n_slots(), rng, 5.0), 30.0};
    auto g = random_globals(rng);
    auto j = sim.simulate_with_gradients(lat, g);
    auto rel = [](const RowVector& a, const RowVector& n) {
      return (a - n).cwiseAbs().maxCoeff() / std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    };
    for (std::size_t k = 0; k < 7; ++k) {
      auto v = g.as_array();
      auto up = v, dn = v;
      up[k] += h;
      dn[k] -= h;
      RowVector num = (sim.simulate(lat, SimulatorGlobals::from_array(up)) -
                       sim.simulate(lat, SimulatorGlobals::from_array(dn))) /
                      (2 * h);
      EXPECT_LT(rel(j.d_globals[k], num), 1e-5) << SimulatorGlobals::kNames[k];
    }
    auto lu = lat, ld = lat;
    lu.alpha += h;
    ld.alpha -= h;
    EXPECT_LT(rel(j.d_alpha, (sim.simulate(lu, g) - sim.simulate(ld, g)) / (2 * h)), 1e-5);
    for (std::size_t e : {13u, 28u, 48u}) {
      auto tu = lat, td = lat;
      tu.theta[e] += h;
      td.theta[e] -= h;
      RowVector num = (sim.simulate(tu, g) - sim.simulate(td, g)) / (2 * h);
      EXPECT_LT(rel(j.d_theta.row(static_cast<Eigen::Index>(e)), num), 1e-5) << e;
    }
  }
}

TEST(SimulateWithGradients, AgreesWithTape) {
  auto table = fixture_table();
  EnergyCalibration cal;
  XrfSimulator sim(table, cal, SimulatorLayout::of({"Fe", "Cu", "Sr"}));
  SimulatorGlobals g{0.25, 1.5, 2.5, -0.3, 35, 0.8, 0.4};
  SampleLatent lat{{4.0, 2.0, 1.0}, 12.0};
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  RowVector w(1024);
  for (auto& v : w) v = u(rng);

  SimulatorParameters params(g);
  ad::Tape tape;
  Matrix th(1, 3);
  th << 4.0, 2.0, 1.0;
  ad::Var theta = tape.input(th, true);
  ad::Var alpha = tape.input(Matrix::Constant(1, 1, 12.0), true);
  ad::Var f = sim.simulate(tape, theta, alpha, params);
  EXPECT_LT((f.value() - sim.simulate(lat, g)).cwiseAbs().maxCoeff(), 1e-12);
  tape.backward(ad::sum(f * tape.constant(Matrix(w))));

  auto j = sim.simulate_with_gradients(lat, g);
  for (std::size_t k = 0; k < 7; ++k) {
    double expect = w.dot(j.d_globals[k]);
    EXPECT_NEAR(params.p[k].grad(0, 0), expect, 1e-10 * (1 + std::abs(expect))) << SimulatorGlobals::kNames[k];
  }
  EXPECT_NEAR(tape.grad(alpha)(0, 0), w.dot(j.d_alpha), 1e-10);
  for (Eigen::Index e = 0; e < 3; ++e) {
    EXPECT_NEAR(tape.grad(theta)(0, e), w.dot(j.d_theta.row(e)), 1e-10);
  }
}

TEST(SimulatorGlobals, JsonHasExactlySevenFields) {
  SimulatorGlobals g{0.25, 1.5, 2.5, -0.3, 35, 0.8, 0.4};
  nlohmann::json j = g;
  EXPECT_EQ(j.size(), 7u);
  EXPECT_EQ(j.get<SimulatorGlobals>(), g);
  j["extra"] = 1.0;
  EXPECT_THROW(j.get<SimulatorGlobals>(), Error);
  nlohmann::json missing = g;
  missing.erase("p2");
  EXPECT_THROW(missing.get<SimulatorGlobals>(), Error);
  nlohmann::json bad = g;
  bad["gamma"] = -1.0;
  EXPECT_THROW(bad.get<SimulatorGlobals>(), DomainError);
}

TEST(SimulatorLayout, StandardHasFiftyOneSlots) {
  auto l = SimulatorLayout::standard();
  EXPECT_EQ(l.size(), 51u);
  EXPECT_EQ(l.slots()[48].label, "tube:Ag");
  EXPECT_EQ(l.slots()[48].source, "Ag");
  EXPECT_TRUE(l.find("Si"));
}
