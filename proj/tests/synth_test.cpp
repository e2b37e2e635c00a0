#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "axs/dataset_io.hpp"
#include "axs/synth.hpp"

using namespace axs;

namespace {

const TransitionTable& table() {
  static const TransitionTable t = load_transition_table(AXS_DATA_DIR "/transitions.csv");
  return t;
}

SynthConfig small_config() {
  SynthConfig c;
  c.n_samples = 12;
  c.seed = 42;
  return c;
}

}  // namespace

TEST(Synth, NoiselessSpectraEqualTheForwardModel) {
  auto cfg = small_config();
  auto ds = generate_dataset(cfg, table());
  XrfSimulator sim(table());
  for (Eigen::Index s = 0; s < ds.theta.rows(); ++s) {
    SampleLatent latent{std::vector<double>(ds.theta.row(s).data(), ds.theta.row(s).data() + ds.theta.cols()), ds.alpha(s)};
    EXPECT_EQ(RowVector(ds.data.spectra.row(s)), sim.simulate(latent, cfg.globals));
  }
  EXPECT_EQ(ds.data.spectra, ds.clean);
}

TEST(Synth, ThetaIsProportionalToConcentration) {
  auto cfg = small_config();
  auto ds = generate_dataset(cfg, table());
  for (std::size_t k = 0; k < cfg.elements.size(); ++k) {
    const auto slot = static_cast<Eigen::Index>(*ds.layout.find(cfg.elements[k]));
    for (Eigen::Index s = 0; s < ds.theta.rows(); ++s) {
      const double c = ds.data.concentrations(s, static_cast<Eigen::Index>(k));
      EXPECT_DOUBLE_EQ(ds.theta(s, slot), cfg.counts_per_fraction * ds.gains[k] * c);
      EXPECT_GE(c, cfg.concentration.lo);
      EXPECT_LE(c, cfg.concentration.hi);
    }
  }
  EXPECT_EQ(ds.theta.col(static_cast<Eigen::Index>(*ds.layout.find("Li"))).norm(), 0.0);
}

TEST(Synth, SameSeedSameCorpus) {
  auto cfg = small_config();
  cfg.noise.sigma = 3.0;
  auto a = generate_dataset(cfg, table());
  auto b = generate_dataset(cfg, table());
  EXPECT_EQ(a.data.spectra, b.data.spectra);
  EXPECT_EQ(a.data.concentrations, b.data.concentrations);
  cfg.seed = 43;
  auto c = generate_dataset(cfg, table());
  EXPECT_NE(a.data.spectra, c.data.spectra);
}

TEST(Synth, NoiseDoesNotChangeLabels) {
  auto cfg = small_config();
  auto clean = generate_dataset(cfg, table());
  cfg.noise.sigma = 5.0;
  auto noisy = generate_dataset(cfg, table());
  EXPECT_EQ(clean.data.concentrations, noisy.data.concentrations);
  EXPECT_EQ(clean.clean, noisy.clean);
  EXPECT_NE(clean.data.spectra, noisy.data.spectra);
  EXPECT_GE(noisy.data.spectra.minCoeff(), 0.0);
}

TEST(Noise, ZeroSigmaIsIdentity) {
  RowVector x = RowVector::LinSpaced(50, 0.0, 100.0);
  EXPECT_EQ(add_noise(x, {0.0, false}, 5), x);
}

TEST(Noise, EmpiricalSdAndMeanMatchConfiguration) {
  const double sigma = 4.0;
  const int draws = 10000;
  RowVector x = RowVector::Constant(8, 200.0);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(8), sq = Eigen::VectorXd::Zero(8);
  for (int k = 0; k < draws; ++k) {
    RowVector y = add_noise(x, {sigma, false}, 1000 + static_cast<std::uint64_t>(k));
    sum += y.transpose();
    sq += y.transpose().cwiseAbs2();
  }
  for (int i = 0; i < 8; ++i) {
    const double mean = sum(i) / draws;
    const double sd = std::sqrt(sq(i) / draws - mean * mean);
    EXPECT_NEAR(sd, sigma, 0.05 * sigma);
    EXPECT_NEAR(mean, 200.0, 3.0 * sigma / std::sqrt(static_cast<double>(draws)));
  }
}

TEST(Noise, PoissonVarianceTracksCounts) {
  const int draws = 10000;
  RowVector x = RowVector::Constant(1, 400.0);
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < draws; ++k) {
    const double y = add_noise(x, {0.0, true}, static_cast<std::uint64_t>(k))(0);
    s += y;
    s2 += y * y;
  }
  const double mean = s / draws;
  EXPECT_NEAR(std::sqrt(s2 / draws - mean * mean), 20.0, 0.05 * 20.0);
}

TEST(Synth, RejectsBadConfig) {
  auto cfg = small_config();
  cfg.elements = {"Xx"};
  EXPECT_THROW(generate_dataset(cfg, table()), LookupError);
  cfg = small_config();
  cfg.noise.sigma = -1.0;
  EXPECT_THROW(generate_dataset(cfg, table()), DomainError);
  cfg = small_config();
  cfg.concentration = {0.5, 2.0};
  EXPECT_THROW(generate_dataset(cfg, table()), DomainError);
}

TEST(DatasetIo, SpectraAndAssayRoundTrip) {
  auto cfg = small_config();
  cfg.noise.sigma = 2.0;
  auto d = generate_dataset(cfg, table()).data;
  std::stringstream s, a;
  write_spectra_csv(s, d.ids, d.spectra);
  write_assay_csv(a, d.ids, d.targets, d.concentrations);
  auto back = join_dataset(read_spectra_csv(s, d.calibration), read_assay_csv(a), d.calibration);
  EXPECT_EQ(back.ids, d.ids);
  EXPECT_EQ(back.spectra, d.spectra);
  EXPECT_EQ(back.concentrations, d.concentrations);
  EXPECT_EQ(back.targets, d.targets);
}

TEST(DatasetIo, AssayUnitsConvert) {
  std::istringstream in("sample_id,Fe:pct,Li:ppm,Cu:wt_frac\nr1,5,120,0.01\n");
  auto t = read_assay_csv(in);
  EXPECT_DOUBLE_EQ(t.fractions(0, 0), 0.05);
  EXPECT_DOUBLE_EQ(t.fractions(0, 1), 120e-6);
  EXPECT_DOUBLE_EQ(t.fractions(0, 2), 0.01);
}

TEST(DatasetIo, ErrorsNameTheLine) {
  std::istringstream bad_unit("sample_id,Fe:grams\nr1,5\n");
  EXPECT_THROW(read_assay_csv(bad_unit), ParseError);
  std::istringstream bad_value("sample_id,Fe:pct\nr1,5\nr2,abc\n");
  try {
    read_assay_csv(bad_value, "a.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream over("sample_id,Fe:pct\nr1,150\n");
  EXPECT_THROW(read_assay_csv(over), ParseError);

  EnergyCalibration cal(0.0, 1.0, 3);
  std::istringstream neg("sample_id,ch0,ch1,ch2\na,1,2,3\nb,1,-2,3\n");
  try {
    read_spectra_csv(neg, cal, "s.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream short_row("sample_id,ch0,ch1,ch2\na,1,2\n");
  EXPECT_THROW(read_spectra_csv(short_row, cal), ParseError);
  std::istringstream wrong_width("sample_id,ch0,ch1\na,1,2\n");
  EXPECT_THROW(read_spectra_csv(wrong_width, cal), ParseError);
}

TEST(DatasetIo, JoinRequiresEveryAssay) {
  EnergyCalibration cal(0.0, 1.0, 2);
  SpectraTable s{{"a", "b"}, Matrix::Ones(2, 2)};
  AssayTable a{{"a"}, {"Fe"}, Matrix::Constant(1, 1, 0.1)};
  EXPECT_THROW(join_dataset(s, a, cal), LookupError);
  a.ids.push_back("b");
  a.fractions = Matrix::Constant(2, 1, 0.1);
  EXPECT_NO_THROW(join_dataset(s, a, cal));
  EXPECT_THROW(join_dataset(s, a, cal, {"Cu"}), LookupError);
}

TEST(DatasetIo, AverageOrientations) {
  Dataset d;
  d.calibration = EnergyCalibration(0.0, 1.0, 2);
  d.targets = {"Fe"};
  d.ids = {"r1#1", "r2#1", "r1#2"};
  d.spectra.resize(3, 2);
  d.spectra << 1, 2, 10, 10, 3, 4;
  d.concentrations.resize(3, 1);
  d.concentrations << 0.1, 0.2, 0.1;
  auto avg = average_orientations(d);
  ASSERT_EQ(avg.ids, (std::vector<std::string>{"r1", "r2"}));
  EXPECT_EQ(avg.spectra(0, 0), 2.0);
  EXPECT_EQ(avg.spectra(0, 1), 3.0);
  EXPECT_EQ(avg.spectra(1, 0), 10.0);
  EXPECT_DOUBLE_EQ(avg.concentrations(0, 0), 0.1);
}

TEST(DatasetSplit, StratifiedValidationIsDisjointAndCovers) {
  auto cfg = small_config();
  cfg.n_samples = 100;
  auto d = generate_dataset(cfg, table()).data;
  auto s = stratified_validation_split(d, 0.1, 5);
  EXPECT_EQ(s.train.size() + s.validation.size(), 100u);
  EXPECT_GE(s.validation.size(), 8u);
  EXPECT_LE(s.validation.size(), 12u);
  std::vector<bool> seen(100, false);
  for (auto i : s.train) seen[i] = true;
  for (auto i : s.validation) {
    EXPECT_FALSE(seen[i]);
    seen[i] = true;
  }
  auto again = stratified_validation_split(d, 0.1, 5);
  EXPECT_EQ(again.validation, s.validation);
}
