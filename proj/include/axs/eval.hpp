#pragma once

// k-fold cross-validation, MSE +/- SE summaries and report rendering.
//
// Every model sees only the training rows of a fold (spectra and labels) and
// the spectra of the test rows. The mean predictor uses the training-fold
// mean and is the retention threshold: an element stays in the report iff
// some model beats it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "axs/baselines.hpp"
#include "axs/dataset.hpp"
#include "axs/detail/text.hpp"
#include "axs/errors.hpp"
#include "axs/neural.hpp"

namespace axs {

// ---- folds ----

struct FoldAssignment {
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;  // per sample

  std::vector<std::size_t> test_indices(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == f) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> train_indices(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != f) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (auto f : fold_of) ++s[f];
    return s;
  }
};

/// Shuffles once, then cuts into k contiguous folds; the first n % k folds get
/// one extra sample.
inline FoldAssignment kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw DomainError("kfold_split: k must be >= 2");
  if (n < k) throw DomainError("kfold_split: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldAssignment a{seed, k, std::vector<std::size_t>(n)};
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) a.fold_of[perm[pos++]] = f;
  }
  return a;
}

/// (1/sqrt(k)) * sample SD (n-1 denominator) of the fold MSEs.
inline double standard_error(std::span<const double> fold_mses) {
  const std::size_t k = fold_mses.size();
  if (k < 2) throw DomainError("standard_error needs at least 2 folds");
  const double mean = std::accumulate(fold_mses.begin(), fold_mses.end(), 0.0) / static_cast<double>(k);
  double ss = 0.0;
  for (double v : fold_mses) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(k - 1)) / std::sqrt(static_cast<double>(k));
}

// ---- model specs ----

/// What a model returns for one fold's test spectra.
struct FoldOutput {
  Matrix predictions;                    // test rows x targets; NaN where not applicable
  std::optional<Matrix> reconstructions; // AXS: test rows x channels, counts
};

struct ModelSpec {
  std::string name;  // lr, lasso, fcnn, cnn, axs, or anything for custom specs
  std::function<FoldOutput(const Dataset& train, const Matrix& test_spectra, std::size_t fold)> fit_predict;
};

inline const std::vector<std::string>& canonical_model_order() {
  static const std::vector<std::string> order{"lr", "lasso", "fcnn", "cnn", "axs"};
  return order;
}

inline std::string display_name(const std::string& model) {
  std::string s = model;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

inline ModelSpec mean_predictor_spec() {
  return {"mean", [](const Dataset& train, const Matrix& test, std::size_t) {
            FoldOutput out;
            const RowVector mean = detail::column_means(train.concentrations);
            out.predictions = mean.replicate(test.rows(), 1);
            return out;
          }};
}

inline ModelSpec lr_spec(const TransitionTable& table, LrOptions opt = {}) {
  return {"lr", [table, opt](const Dataset& train, const Matrix& test, std::size_t) {
            FoldOutput out;
            out.predictions = Matrix::Constant(test.rows(), static_cast<Eigen::Index>(train.n_targets()),
                                               std::numeric_limits<double>::quiet_NaN());
            for (std::size_t k = 0; k < train.n_targets(); ++k) {
              LrFit f;
              try {
                f = fit_lr(train, train.targets[k], table, opt);
              } catch (const NotApplicable&) {
                continue;
              }
              for (Eigen::Index r = 0; r < test.rows(); ++r) {
                out.predictions(r, static_cast<Eigen::Index>(k)) = predict_lr(f, test.row(r));
              }
            }
            return out;
          }};
}

inline ModelSpec lasso_spec(LassoCvOptions opt = {}) {
  return {"lasso", [opt](const Dataset& train, const Matrix& test, std::size_t fold) {
            FoldOutput out;
            out.predictions.resize(test.rows(), static_cast<Eigen::Index>(train.n_targets()));
            for (std::size_t k = 0; k < train.n_targets(); ++k) {
              LassoCvOptions o = opt;
              o.seed = detail::mix_seed(opt.seed, fold * 1000 + k);
              auto res = fit_lasso_cv(train.spectra, train.concentrations.col(static_cast<Eigen::Index>(k)), o);
              out.predictions.col(static_cast<Eigen::Index>(k)) = predict_lasso(res.fit, test);
            }
            return out;
          }};
}

/// FCNN, CNN or AXS; each fold holds out a stratified validation split of its
/// training rows for early stopping.
inline ModelSpec neural_spec(ModelKind kind, TrainConfig cfg, const TransitionTable* table = nullptr,
                             std::function<void(std::size_t, const EpochLog&)> progress = {}) {
  if (kind == ModelKind::Axs && table == nullptr) throw DomainError("AXS needs a transition table");
  std::optional<TransitionTable> tbl;
  if (table) tbl = *table;
  return {std::string(to_string(kind)), [kind, cfg, tbl, progress](const Dataset& train, const Matrix& test, std::size_t fold) {
            TrainConfig c = cfg;
            c.seed = detail::mix_seed(cfg.seed, fold);
            auto split = stratified_validation_split(train, c.validation_fraction, c.seed);
            const Dataset tr = train.subset(split.train);
            const Dataset va = train.subset(split.validation);
            std::function<void(const EpochLog&)> cb;
            if (progress) cb = [&](const EpochLog& e) { progress(fold, e); };
            TrainResult r = kind == ModelKind::Fcnn  ? train_fcnn(tr, va, c, cb)
                            : kind == ModelKind::Cnn ? train_cnn(tr, va, c, cb)
                                                     : train_axs(tr, va, c, *tbl, SimulatorLayout::standard(), {}, cb);
            FoldOutput out;
            out.predictions = predict_batch(r.model, test);
            if (kind == ModelKind::Axs) out.reconstructions = reconstruct_batch(r.model, test);
            return out;
          }};
}

// ---- cross-validation ----

/// FNV-1a over sample ids and the raw bytes of spectra and labels.
inline std::uint64_t dataset_fingerprint(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& id : d.ids) mix(id.data(), id.size() + 1);
  mix(d.spectra.data(), static_cast<std::size_t>(d.spectra.size()) * sizeof(double));
  mix(d.concentrations.data(), static_cast<std::size_t>(d.concentrations.size()) * sizeof(double));
  return h;
}

struct CvResult {
  std::vector<std::string> models;    // spec order
  std::vector<std::string> elements;
  std::size_t k = 0;
  // fold_mse[model][element][fold]; NaN when the model does not apply.
  std::vector<std::vector<std::vector<double>>> fold_mse;
  std::vector<std::vector<double>> mean_fold_mse;  // [element][fold], training-fold mean predictor
  std::vector<std::uint64_t> train_fingerprint;    // per fold, of what the models were given
  // Per-sample reconstruction RMSE (counts) from the first model that reconstructs, if any.
  std::optional<Eigen::VectorXd> reconstruction_rmse;
  std::string reconstruction_model;
};

inline CvResult cross_validate(const std::vector<ModelSpec>& specs, const Dataset& data, const FoldAssignment& folds) {
  data.validate();
  if (data.n_samples() == 0) throw DomainError("cross_validate: empty dataset");
  if (folds.fold_of.size() != data.n_samples()) throw ShapeError("fold assignment does not match the dataset");
  const auto n_el = data.n_targets();
  CvResult res;
  res.k = folds.k;
  res.elements = data.targets;
  for (const auto& s : specs) res.models.push_back(s.name);
  res.fold_mse.assign(specs.size(), std::vector<std::vector<double>>(n_el, std::vector<double>(folds.k, 0.0)));
  res.mean_fold_mse.assign(n_el, std::vector<double>(folds.k, 0.0));

  for (std::size_t f = 0; f < folds.k; ++f) {
    const auto test_idx = folds.test_indices(f);
    const Dataset train = data.subset(folds.train_indices(f));
    const Dataset test = data.subset(test_idx);
    res.train_fingerprint.push_back(dataset_fingerprint(train));
    auto mse_of = [&](const Matrix& pred, std::size_t e) {
      const auto c = static_cast<Eigen::Index>(e);
      return (pred.col(c) - test.concentrations.col(c)).squaredNorm() / static_cast<double>(test.n_samples());
    };
    const auto mean_pred = mean_predictor_spec().fit_predict(train, test.spectra, f).predictions;
    for (std::size_t e = 0; e < n_el; ++e) res.mean_fold_mse[e][f] = mse_of(mean_pred, e);

    for (std::size_t m = 0; m < specs.size(); ++m) {
      FoldOutput out;
      try {
        out = specs[m].fit_predict(train, test.spectra, f);
      } catch (const std::exception& ex) {
        throw Error("fold " + std::to_string(f) + ", model " + specs[m].name + ": " + ex.what());
      }
      if (out.predictions.rows() != test.spectra.rows() || out.predictions.cols() != static_cast<Eigen::Index>(n_el)) {
        throw ShapeError("fold " + std::to_string(f) + ", model " + specs[m].name + ": prediction shape mismatch");
      }
      for (std::size_t e = 0; e < n_el; ++e) res.fold_mse[m][e][f] = mse_of(out.predictions, e);
      if (out.reconstructions && (res.reconstruction_model.empty() || res.reconstruction_model == specs[m].name)) {
        if (!res.reconstruction_rmse) res.reconstruction_rmse = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.n_samples()));
        res.reconstruction_model = specs[m].name;
        auto rmse = axs::reconstruction_rmse(test.spectra, *out.reconstructions);
        for (std::size_t i = 0; i < test_idx.size(); ++i) (*res.reconstruction_rmse)(static_cast<Eigen::Index>(test_idx[i])) = rmse(static_cast<Eigen::Index>(i));
      }
    }
  }
  return res;
}

// ---- report ----

struct ReportCell {
  double mse = 0.0;
  double se = 0.0;
  std::size_t n_folds = 0;
  bool best = false;

  friend bool operator==(const ReportCell&, const ReportCell&) = default;
};

struct ReportRow {
  std::string element;
  std::vector<std::optional<ReportCell>> cells;  // one per report model; empty when not applicable
  ReportCell mean;                               // mean predictor
  bool retained = false;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<std::string> models;
  std::vector<ReportRow> rows;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

namespace detail {

inline std::size_t model_rank(const std::string& m) {
  const auto& o = canonical_model_order();
  auto it = std::find(o.begin(), o.end(), m);
  return static_cast<std::size_t>(it - o.begin());
}

inline ReportCell summarize(const std::vector<double>& folds) {
  ReportCell c;
  c.n_folds = folds.size();
  c.mse = std::accumulate(folds.begin(), folds.end(), 0.0) / static_cast<double>(folds.size());
  c.se = folds.size() >= 2 ? standard_error(folds) : 0.0;
  return c;
}

}  // namespace detail

/// Sets the best flag (lowest MSE; ties go to the earlier model in
/// LR, LASSO, FCNN, CNN, AXS order) and the retained flag of every row.
inline void mark_best_and_retained(EvalReport& r) {
  for (auto& row : r.rows) {
    std::optional<std::size_t> best;
    for (std::size_t m = 0; m < row.cells.size(); ++m) {
      if (!row.cells[m]) continue;
      row.cells[m]->best = false;
      if (!best) {
        best = m;
        continue;
      }
      const auto& c = *row.cells[m];
      const auto& b = *row.cells[*best];
      if (c.mse < b.mse || (c.mse == b.mse && detail::model_rank(r.models[m]) < detail::model_rank(r.models[*best]))) best = m;
    }
    if (best) row.cells[*best]->best = true;
    row.retained = best && row.cells[*best]->mse < row.mean.mse;
  }
}

inline EvalReport build_report(const CvResult& cv) {
  EvalReport r;
  r.models = cv.models;
  for (std::size_t e = 0; e < cv.elements.size(); ++e) {
    ReportRow row;
    row.element = cv.elements[e];
    for (std::size_t m = 0; m < cv.models.size(); ++m) {
      const auto& folds = cv.fold_mse[m][e];
      if (std::any_of(folds.begin(), folds.end(), [](double v) { return std::isnan(v); })) {
        row.cells.emplace_back();
      } else {
        row.cells.push_back(detail::summarize(folds));
      }
    }
    row.mean = detail::summarize(cv.mean_fold_mse[e]);
    r.rows.push_back(std::move(row));
  }
  mark_best_and_retained(r);
  return r;
}

/// Elements where some model beats the mean predictor.
inline std::vector<std::string> filter_elements(const EvalReport& r) {
  std::vector<std::string> out;
  for (const auto& row : r.rows) {
    if (row.retained) out.push_back(row.element);
  }
  return out;
}

/// "1.03e-2±1.6e-3": three significant digits for the MSE, two for the SE,
/// signed exponent without zero padding.
inline std::string format_mse_se(double mse, double se) {
  auto sci = [](double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*e", digits, v);
    std::string s(buf);
    const auto e = s.find('e');
    if (e == std::string::npos) return s;  // inf / nan
    std::string mant = s.substr(0, e);
    const char sign = s[e + 1];
    std::string digits_part = s.substr(e + 2);
    const auto nz = digits_part.find_first_not_of('0');
    digits_part = nz == std::string::npos ? "0" : digits_part.substr(nz);
    return mant + "e" + sign + digits_part;
  };
  return sci(mse, 2) + "±" + sci(se, 1);
}

enum class ReportFormat { Text, Csv };

inline std::string render_report(const EvalReport& r, ReportFormat fmt) {
  std::ostringstream out;
  if (fmt == ReportFormat::Csv) {
    out << "element,model,mse,se,n_folds,best,retained\n";
    for (const auto& row : r.rows) {
      auto line = [&](const std::string& model, const ReportCell& c) {
        out << row.element << ',' << model << ',' << detail::format_double(c.mse) << ',' << detail::format_double(c.se)
            << ',' << c.n_folds << ',' << (c.best ? 1 : 0) << ',' << (row.retained ? 1 : 0) << '\n';
      };
      for (std::size_t m = 0; m < r.models.size(); ++m) {
        if (row.cells[m]) line(r.models[m], *row.cells[m]);
      }
      line("mean", row.mean);
    }
    return out.str();
  }
  // Aligned text table; '*' marks the best cell, '-' a model that does not apply.
  std::vector<std::string> header{"Element"};
  for (const auto& m : r.models) header.push_back(display_name(m));
  header.push_back("Mean");
  header.push_back("Retained");
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& row : r.rows) {
    std::vector<std::string> line{row.element};
    for (const auto& c : row.cells) line.push_back(c ? format_mse_se(c->mse, c->se) + (c->best ? "*" : "") : "-");
    line.push_back(format_mse_se(row.mean.mse, row.mean.se));
    line.push_back(row.retained ? "yes" : "no");
    cells.push_back(std::move(line));
  }
  // Column widths in code points (the ± sign is two bytes in UTF-8).
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
  }
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << line[i];
      if (i + 1 < line.size()) out << std::string(widths[i] - width(line[i]) + 2, ' ');
    }
    out << '\n';
  }
  return out.str();
}

/// Inverse of render_report(..., Csv).
inline EvalReport parse_report_csv(std::istream& in, const std::string& source = "<report>") {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::read_line(in, line)) throw ParseError(source, 0, "missing header");
  ++line_no;
  if (line != "element,model,mse,se,n_folds,best,retained") throw ParseError(source, line_no, "unexpected header");
  EvalReport r;
  struct Entry {
    std::string element, model;
    ReportCell cell;
    bool retained;
  };
  std::vector<Entry> entries;
  while (detail::read_line(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    auto f = detail::split(line);
    if (f.size() != 7) throw ParseError(source, line_no, "expected 7 fields");
    Entry e{std::string(f[0]), std::string(f[1]), {}, f[6] == "1"};
    auto mse = detail::parse_double(f[2]);
    auto se = detail::parse_double(f[3]);
    auto nf = detail::parse_double(f[4]);
    if (!mse || !se || !nf || *nf < 0) throw ParseError(source, line_no, "bad number");
    e.cell = {*mse, *se, static_cast<std::size_t>(*nf), f[5] == "1"};
    if (e.model != "mean" && std::find(r.models.begin(), r.models.end(), e.model) == r.models.end()) {
      r.models.push_back(e.model);
    }
    entries.push_back(std::move(e));
  }
  for (const auto& e : entries) {
    if (r.rows.empty() || r.rows.back().element != e.element) {
      r.rows.push_back({e.element, std::vector<std::optional<ReportCell>>(r.models.size()), {}, e.retained});
    }
    auto& row = r.rows.back();
    if (e.model == "mean") {
      row.mean = e.cell;
    } else {
      const auto m = static_cast<std::size_t>(std::find(r.models.begin(), r.models.end(), e.model) - r.models.begin());
      row.cells[m] = e.cell;
    }
  }
  return r;
}

/// Plot data: one row per (element, model) with the +/- 1 SE interval.
inline std::string render_error_bars(const EvalReport& r) {
  std::ostringstream out;
  out << "element,model,mse,se,lower,upper,retained\n";
  for (const auto& row : r.rows) {
    auto line = [&](const std::string& model, const ReportCell& c) {
      out << row.element << ',' << model << ',' << detail::format_double(c.mse) << ',' << detail::format_double(c.se) << ','
          << detail::format_double(c.mse - c.se) << ',' << detail::format_double(c.mse + c.se) << ','
          << (row.retained ? 1 : 0) << '\n';
    };
    for (std::size_t m = 0; m < r.models.size(); ++m) {
      if (row.cells[m]) line(r.models[m], *row.cells[m]);
    }
    line("mean", row.mean);
  }
  return out.str();
}

struct RmseSummary {
  std::size_t n = 0;
  double min = 0.0, median = 0.0, mean = 0.0, max = 0.0;
  std::size_t median_index = 0;  // sample closest to the median (lower middle for even n)
};

inline RmseSummary summarize_rmse(const Eigen::VectorXd& rmse) {
  if (rmse.size() == 0) throw DomainError("no reconstruction errors to summarize");
  RmseSummary s;
  s.n = static_cast<std::size_t>(rmse.size());
  std::vector<std::size_t> order(s.n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rmse(static_cast<Eigen::Index>(a)) < rmse(static_cast<Eigen::Index>(b));
  });
  s.min = rmse.minCoeff();
  s.max = rmse.maxCoeff();
  s.mean = rmse.mean();
  s.median_index = order[(s.n - 1) / 2];
  s.median = s.n % 2 ? rmse(static_cast<Eigen::Index>(s.median_index))
                     : 0.5 * (rmse(static_cast<Eigen::Index>(order[s.n / 2 - 1])) + rmse(static_cast<Eigen::Index>(order[s.n / 2])));
  return s;
}

}  // namespace axs
