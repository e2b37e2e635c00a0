#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "axs/eval.hpp"
#include "axs/synth.hpp"

using namespace axs;

namespace {

const TransitionTable& table() {
  static const TransitionTable t = load_transition_table(AXS_DATA_DIR "/transitions.csv");
  return t;
}

Dataset small_corpus(std::size_t n, std::uint64_t seed) {
  SynthConfig c;
  c.n_samples = n;
  c.seed = seed;
  c.elements = {"Fe", "Zn", "Sr"};
  c.noise.sigma = 1.0;
  return generate_dataset(c, table()).data;
}

EvalReport hand_report() {
  EvalReport r;
  r.models = {"lr", "lasso", "axs"};
  r.rows.push_back({"Fe", {ReportCell{1e-3, 1e-4, 10}, ReportCell{2e-3, 1e-4, 10}, ReportCell{1e-3, 2e-4, 10}}, {5e-3, 1e-3, 10}});
  r.rows.push_back({"Li", {std::nullopt, ReportCell{4e-2, 1e-3, 10}, ReportCell{3e-2, 1e-3, 10}}, {1e-2, 1e-3, 10}});
  mark_best_and_retained(r);
  return r;
}

}  // namespace

TEST(KFold, SizesFor177SamplesIn10Folds) {
  auto f = kfold_split(177, 10, 3);
  auto sizes = f.sizes();
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 18u), 7);
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), 17u), 3);
}

TEST(KFold, PartitionProperties) {
  for (std::size_t n : {10u, 23u, 100u}) {
    for (std::size_t k : {2u, 3u, 10u}) {
      auto f = kfold_split(n, k, n * k);
      std::vector<int> hits(n, 0);
      for (std::size_t fold = 0; fold < k; ++fold) {
        auto test = f.test_indices(fold);
        auto train = f.train_indices(fold);
        EXPECT_EQ(test.size() + train.size(), n);
        EXPECT_GE(test.size(), n / k);
        EXPECT_LE(test.size(), n / k + 1);
        std::set<std::size_t> tr(train.begin(), train.end());
        for (auto i : test) {
          EXPECT_EQ(tr.count(i), 0u);
          ++hits[i];
        }
      }
      for (int h : hits) EXPECT_EQ(h, 1);
    }
  }
  EXPECT_EQ(kfold_split(50, 5, 1).fold_of, kfold_split(50, 5, 1).fold_of);
  EXPECT_NE(kfold_split(50, 5, 1).fold_of, kfold_split(50, 5, 2).fold_of);
}

TEST(KFold, RejectsImpossibleSplits) {
  EXPECT_THROW(kfold_split(5, 10, 0), DomainError);
  EXPECT_THROW(kfold_split(5, 1, 0), DomainError);
}

TEST(StandardError, MatchesDefinition) {
  std::vector<double> two{0.0, 2.0};
  EXPECT_DOUBLE_EQ(standard_error(two), 1.0);
  std::vector<double> same(7, 0.25);
  EXPECT_EQ(standard_error(same), 0.0);
  std::vector<double> v{1.0, 2.0, 4.0, 8.0};
  // mean 3.75, sum of squares 7.5625+3.0625+0.0625+18.0625 = 28.75
  EXPECT_NEAR(standard_error(v), std::sqrt(28.75 / 3.0) / 2.0, 1e-15);
  std::vector<double> one{1.0};
  EXPECT_THROW(standard_error(one), DomainError);
}

TEST(Report, CellFormatUsesUnpaddedSignedExponent) {
  EXPECT_EQ(format_mse_se(1.03e-2, 1.6e-3), "1.03e-2±1.6e-3");
  EXPECT_EQ(format_mse_se(5.123, 0.42), "5.12e+0±4.2e-1");
  EXPECT_EQ(format_mse_se(12.0, 3.0), "1.20e+1±3.0e+0");
  EXPECT_EQ(format_mse_se(0.0, 0.0), "0.00e+0±0.0e+0");
  EXPECT_EQ(format_mse_se(9.996e-5, 1e-6), "1.00e-4±1.0e-6");
}

TEST(Report, BestAndRetention) {
  auto r = hand_report();
  // Tie between LR and AXS on Fe goes to LR.
  EXPECT_TRUE(r.rows[0].cells[0]->best);
  EXPECT_FALSE(r.rows[0].cells[2]->best);
  EXPECT_TRUE(r.rows[0].retained);
  // Li: nothing beats the mean predictor; LR does not apply.
  EXPECT_FALSE(r.rows[1].retained);
  EXPECT_FALSE(r.rows[1].cells[0].has_value());
  EXPECT_TRUE(r.rows[1].cells[2]->best);
  EXPECT_EQ(filter_elements(r), std::vector<std::string>{"Fe"});
}

TEST(Report, FilterIsMonotoneInTheThreshold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = hand_report();
    for (auto& row : r.rows) {
      for (auto& c : row.cells) if (c) c->mse = u(rng);
      row.mean.mse = u(rng);
    }
    mark_best_and_retained(r);
    const auto before = filter_elements(r);
    for (auto& row : r.rows) row.mean.mse *= 2.0;
    mark_best_and_retained(r);
    const auto after = filter_elements(r);
    for (const auto& e : before) EXPECT_NE(std::find(after.begin(), after.end(), e), after.end());
  }
}

TEST(Report, CsvRoundTrip) {
  auto r = hand_report();
  r.rows[0].cells[1]->mse = 0.1 + 0.2;  // not exactly representable in short decimal
  std::istringstream in(render_report(r, ReportFormat::Csv));
  EXPECT_EQ(parse_report_csv(in), r);
}

TEST(Report, TextMarksBestCell) {
  const auto text = render_report(hand_report(), ReportFormat::Text);
  EXPECT_NE(text.find("1.00e-3±1.0e-4*"), std::string::npos);
  EXPECT_NE(text.find("AXS"), std::string::npos);
  std::istringstream lines(text);
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header.rfind("Element", 0), 0u);
}

TEST(Report, ErrorBarsSpanOneStandardError) {
  std::istringstream in(render_error_bars(hand_report()));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "element,model,mse,se,lower,upper,retained");
  std::getline(in, line);
  auto f = detail::split(line);
  ASSERT_EQ(f.size(), 7u);
  EXPECT_EQ(f[0], "Fe");
  EXPECT_EQ(f[1], "lr");
  EXPECT_DOUBLE_EQ(*detail::parse_double(f[4]), 1e-3 - 1e-4);
  EXPECT_DOUBLE_EQ(*detail::parse_double(f[5]), 1e-3 + 1e-4);
  EXPECT_EQ(f[6], "1");
}

TEST(CrossValidate, ModelsNeverSeeTestLabels) {
  auto d = small_corpus(40, 9);
  auto folds = kfold_split(d.n_samples(), 5, 4);
  std::vector<std::uint64_t> seen;
  ModelSpec spy{"spy", [&](const Dataset& train, const Matrix& test, std::size_t f) {
                  for (const auto& id : train.ids) {
                    const auto i = static_cast<std::size_t>(std::find(d.ids.begin(), d.ids.end(), id) - d.ids.begin());
                    EXPECT_NE(folds.fold_of[i], f);
                  }
                  EXPECT_EQ(train.n_samples() + static_cast<std::size_t>(test.rows()), d.n_samples());
                  seen.push_back(dataset_fingerprint(train));
                  return mean_predictor_spec().fit_predict(train, test, f);
                }};
  auto cv = cross_validate({spy}, d, folds);
  EXPECT_EQ(seen, cv.train_fingerprint);
  // The spy is the mean predictor, so it ties with the threshold and is not retained.
  auto r = build_report(cv);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.cells[0]->mse, row.mean.mse);
    EXPECT_FALSE(row.retained);
  }
  // Same fold seed, same folds, same fingerprints.
  auto again = cross_validate({spy}, d, kfold_split(d.n_samples(), 5, 4));
  EXPECT_EQ(again.train_fingerprint, cv.train_fingerprint);
}

TEST(CrossValidate, BaselinesBeatTheMeanOnCleanSignal) {
  auto d = small_corpus(60, 2);
  LassoCvOptions lo;
  lo.n_lambdas = 8;
  auto cv = cross_validate({lr_spec(table()), lasso_spec(lo)}, d, kfold_split(d.n_samples(), 5, 1));
  auto r = build_report(cv);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.retained) << row.element;
    EXPECT_EQ(row.mean.n_folds, 5u);
  }
}

TEST(CrossValidate, ErrorsNameTheFold) {
  auto d = small_corpus(20, 3);
  ModelSpec broken{"broken", [](const Dataset&, const Matrix&, std::size_t f) -> FoldOutput {
                     if (f == 2) throw DomainError("boom");
                     return {};
                   }};
  try {
    cross_validate({broken}, d, kfold_split(20, 4, 0));
    FAIL();
  } catch (const Error& e) {
    // fold 0 returns an empty prediction, which is a shape error in fold 0
    EXPECT_NE(std::string(e.what()).find("fold 0"), std::string::npos);
  }
  ModelSpec late{"late", [](const Dataset& tr, const Matrix& test, std::size_t f) {
                   if (f == 2) throw DomainError("boom");
                   return mean_predictor_spec().fit_predict(tr, test, f);
                 }};
  try {
    cross_validate({late}, d, kfold_split(20, 4, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("fold 2, model late: boom"), std::string::npos);
  }
}

TEST(CrossValidate, ConstantElementIsDroppedEvenWithInexactMean) {
  SynthConfig c;
  c.n_samples = 30;
  c.seed = 8;
  c.elements = {"Fe", "Zn"};
  c.concentration_overrides["Zn"] = Range{0.013, 0.013};
  c.noise.sigma = 1.0;
  auto d = generate_dataset(c, table()).data;
  LassoCvOptions lo;
  lo.n_lambdas = 6;
  auto r = build_report(cross_validate({lr_spec(table()), lasso_spec(lo)}, d, kfold_split(30, 5, 2)));
  EXPECT_EQ(r.rows[1].mean.mse, 0.0);
  EXPECT_EQ(filter_elements(r), std::vector<std::string>{"Fe"});
}

TEST(CrossValidate, NotApplicableCellIsEmpty) {
  auto d = small_corpus(20, 5);
  d.targets = {"Fe", "Zn", "Li"};  // relabel a column so LR cannot apply
  auto cv = cross_validate({lr_spec(table())}, d, kfold_split(20, 4, 0));
  auto r = build_report(cv);
  EXPECT_TRUE(r.rows[0].cells[0].has_value());
  EXPECT_FALSE(r.rows[2].cells[0].has_value());
}

TEST(RmseSummary, OrderStatistics) {
  Eigen::VectorXd v(5);
  v << 3.0, 1.0, 5.0, 2.0, 4.0;
  auto s = summarize_rmse(v);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 5.0);
  EXPECT_EQ(s.median, 3.0);
  EXPECT_EQ(s.median_index, 0u);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  Eigen::VectorXd w(4);
  w << 4.0, 1.0, 3.0, 2.0;
  EXPECT_DOUBLE_EQ(summarize_rmse(w).median, 2.5);
  EXPECT_THROW(summarize_rmse(Eigen::VectorXd()), DomainError);
}
