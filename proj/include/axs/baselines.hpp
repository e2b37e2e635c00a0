#pragma once

// Linear baselines.
//
// LR regresses one element's concentration on the counts around its K-alpha
// channel. LASSO regresses it on the whole spectrum:
//
//   min_{b0, b}  1/(2n) ||y - b0 - X b||^2 + lambda * sum_j w_j |b_j|
//
// with w_j = 1, or w_j = column SD when `standardize` is set (the usual
// "fit on standardized columns, report on the raw scale" convention). Solved
// by cyclic coordinate descent with an active set.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "axs/dataset.hpp"
#include "axs/detail/stats.hpp"
#include "axs/errors.hpp"
#include "axs/fp_data.hpp"
#include "axs/spectral_core.hpp"

namespace axs {

// ---------------------------------------------------------------- LR ----

struct LrOptions {
  std::size_t window = 1;  // channels summed, centred on the K-alpha channel
};

struct LrFit {
  std::string element;
  std::size_t channel = 0;
  std::size_t window = 1;
  double slope = 0.0;
  double intercept = 0.0;

  friend bool operator==(const LrFit&, const LrFit&) = default;
};

/// Counts summed over `window` channels centred on `channel`, clipped to the spectrum.
template <typename Row>
double window_counts(const Row& row, std::size_t channel, std::size_t window) {
  if (window == 0) throw DomainError("window must be >= 1");
  const auto n = static_cast<std::ptrdiff_t>(row.size());
  const auto c = static_cast<std::ptrdiff_t>(channel);
  const auto lo = std::max<std::ptrdiff_t>(0, c - static_cast<std::ptrdiff_t>((window - 1) / 2));
  const auto hi = std::min<std::ptrdiff_t>(n - 1, c + static_cast<std::ptrdiff_t>(window / 2));
  double s = 0.0;
  for (auto i = lo; i <= hi; ++i) s += row(i);
  return s;
}

/// Channel holding the element's strongest K line; NotApplicable when the
/// element has no K line inside the calibrated range.
inline std::size_t k_alpha_channel(const TransitionTable& table, std::string_view element, const EnergyCalibration& cal) {
  auto line = k_alpha_line(table, element);
  if (!line) throw NotApplicable("LR: no K-alpha line for " + std::string(element));
  auto ch = nearest_channel(cal, line->energy_kev);
  if (!ch) throw NotApplicable("LR: K-alpha of " + std::string(element) + " lies outside the calibrated range");
  return *ch;
}

/// Ordinary least squares of y on one feature. A constant feature yields
/// slope 0 and the mean of y.
inline std::pair<double, double> ols_1d(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("ols: x and y differ in length");
  if (x.empty()) throw DomainError("ols: no samples");
  const double n = static_cast<double>(x.size());
  const double mx = detail::shifted_mean(x);
  const double my = detail::shifted_mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0) return {0.0, my};
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

inline LrFit fit_lr(const Matrix& spectra, std::span<const double> y, std::string_view element,
                    const TransitionTable& table, const EnergyCalibration& cal, const LrOptions& opt = {}) {
  if (static_cast<std::size_t>(spectra.cols()) != cal.n_channels()) throw ShapeError("LR: spectra width differs from calibration");
  if (static_cast<std::size_t>(spectra.rows()) != y.size()) throw ShapeError("LR: one target per spectrum required");
  LrFit f;
  f.element = std::string(element);
  f.channel = k_alpha_channel(table, element, cal);
  f.window = opt.window;
  std::vector<double> x(y.size());
  for (Eigen::Index r = 0; r < spectra.rows(); ++r) x[static_cast<std::size_t>(r)] = window_counts(spectra.row(r), f.channel, f.window);
  std::tie(f.slope, f.intercept) = ols_1d(x, y);
  return f;
}

inline LrFit fit_lr(const Dataset& d, std::string_view element, const TransitionTable& table, const LrOptions& opt = {}) {
  const auto k = static_cast<Eigen::Index>(d.target_index(element));
  Eigen::VectorXd y = d.concentrations.col(k);
  return fit_lr(d.spectra, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), element, table,
                d.calibration, opt);
}

template <typename Row>
double predict_lr(const LrFit& f, const Row& row) {
  if (f.channel >= static_cast<std::size_t>(row.size())) throw ShapeError("LR: spectrum too short for fitted channel");
  return f.intercept + f.slope * window_counts(row, f.channel, f.window);
}

inline double predict_lr(const LrFit& f, const Spectrum& s) { return predict_lr(f, s.row()); }

inline void to_json(nlohmann::json& j, const LrFit& f) {
  j = {{"element", f.element}, {"channel", f.channel}, {"window", f.window}, {"slope", f.slope}, {"intercept", f.intercept}};
}

inline void from_json(const nlohmann::json& j, LrFit& f) {
  j.at("element").get_to(f.element);
  j.at("channel").get_to(f.channel);
  j.at("window").get_to(f.window);
  j.at("slope").get_to(f.slope);
  j.at("intercept").get_to(f.intercept);
}

// ------------------------------------------------------------- LASSO ----

struct LassoOptions {
  bool standardize = true;
  double tolerance = 1e-9;   // KKT violation accepted at convergence
  int max_sweeps = 200000;
};

struct LassoFit {
  double lambda = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd coef;  // raw-feature scale
  bool standardized = true;
  int sweeps = 0;
  bool converged = false;

  std::size_t nonzeros() const { return static_cast<std::size_t>((coef.array() != 0.0).count()); }
};

namespace detail {

struct LassoDesign {
  Eigen::MatrixXd z;        // centred, maybe scaled, features; column-major for CD
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;    // 1, or the population SD; 0 marks a constant column
  Eigen::VectorXd col_sq;   // ||z_j||^2 / n
  Eigen::VectorXd yc;
  double ymean = 0.0;
};

inline LassoDesign lasso_design(const Matrix& X, const Eigen::VectorXd& y, bool standardize) {
  if (X.rows() != y.size()) throw ShapeError("LASSO: one target per row required");
  if (X.rows() < 1) throw DomainError("LASSO: no samples");
  if (!X.allFinite() || !y.allFinite()) throw DomainError("LASSO: non-finite input");
  const double n = static_cast<double>(X.rows());
  LassoDesign d;
  d.mean = column_means(X).transpose();
  d.z = X.rowwise() - d.mean.transpose();
  d.scale = Eigen::VectorXd::Ones(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double sd = std::sqrt(d.z.col(j).squaredNorm() / n);
    if (sd == 0.0) {
      d.scale(j) = 0.0;
      d.z.col(j).setZero();
    } else if (standardize) {
      d.scale(j) = sd;
      d.z.col(j) /= sd;
    }
  }
  d.col_sq = d.z.colwise().squaredNorm().transpose() / n;
  d.ymean = shifted_mean(y);
  d.yc = y.array() - d.ymean;
  return d;
}

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// Coordinate descent in the design's (centred, maybe scaled) space; b is the warm start.
inline int lasso_cd(const LassoDesign& d, double lambda, Eigen::VectorXd& b, const LassoOptions& opt, bool& converged) {
  const double n = static_cast<double>(d.z.rows());
  const Eigen::Index p = d.z.cols();
  Eigen::VectorXd r = d.yc - d.z * b;
  const auto& zc = d.z;
  auto update = [&](Eigen::Index j) {
    if (d.col_sq(j) == 0.0) {
      b(j) = 0.0;
      return 0.0;
    }
    const double rho = zc.col(j).dot(r) / n + d.col_sq(j) * b(j);
    const double nb = soft_threshold(rho, lambda) / d.col_sq(j);
    const double delta = nb - b(j);
    if (delta != 0.0) {
      r.noalias() -= delta * zc.col(j);
      b(j) = nb;
    }
    return std::abs(delta) * std::sqrt(d.col_sq(j));
  };
  int sweeps = 0;
  converged = false;
  while (sweeps < opt.max_sweeps) {
    // Full pass, then iterate on the active set until it settles.
    ++sweeps;
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) max_change = std::max(max_change, update(j));
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (b(j) != 0.0) active.push_back(j);
    }
    while (max_change > opt.tolerance * 1e-2 && sweeps < opt.max_sweeps) {
      ++sweeps;
      max_change = 0.0;
      for (auto j : active) max_change = std::max(max_change, update(j));
    }
    // KKT over every coordinate decides convergence.
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (d.col_sq(j) == 0.0) continue;
      const double g = -zc.col(j).dot(r) / n;
      worst = std::max(worst, b(j) != 0.0 ? std::abs(g + lambda * (b(j) > 0 ? 1.0 : -1.0)) : std::abs(g) - lambda);
    }
    if (worst <= opt.tolerance) {
      converged = true;
      break;
    }
  }
  return sweeps;
}

struct LassoSolution {
  Eigen::VectorXd b;
  int sweeps = 0;
  bool converged = false;
};

// LARS-lasso homotopy from lambda_max down through the (descending) targets,
// each snapshot polished by coordinate descent. Collinear spectra make plain
// CD crawl; the path is exact until the active Gram matrix turns singular,
// after which CD carries on from the last point alone.
inline std::vector<LassoSolution> lasso_solve(const LassoDesign& d, const std::vector<double>& lambdas,
                                              const LassoOptions& opt) {
  const double n = static_cast<double>(d.z.rows());
  const Eigen::Index p = d.z.cols();
  std::vector<LassoSolution> out;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd c = d.z.transpose() * d.yc / n;
  double lam = 0.0;
  std::vector<Eigen::Index> act;
  std::vector<double> sgn;
  std::vector<char> in_act(static_cast<std::size_t>(p), 0);
  for (Eigen::Index j = 0; j < p; ++j) lam = std::max(lam, d.col_sq(j) > 0.0 ? std::abs(c(j)) : 0.0);
  bool exact = true;
  std::size_t next = 0;
  const double lam_max = lam;
  Eigen::VectorXd polished = b;
  // Peaks drift channel by channel along the path, so event counts run far past the rank.
  const int max_steps = 200 * static_cast<int>(std::min<Eigen::Index>(d.z.rows(), p)) + 1000;
  int steps = 0;

  auto emit = [&](double target) {
    LassoSolution s;
    if (target >= lam_max) {
      // b = 0 satisfies the KKT conditions exactly here
      s.b = Eigen::VectorXd::Zero(p);
      s.converged = true;
      polished = s.b;
      out.push_back(std::move(s));
      return;
    }
    s.b = exact ? b : polished;
    s.sweeps = lasso_cd(d, target, s.b, opt, s.converged);
    polished = s.b;
    out.push_back(std::move(s));
  };

  while (next < lambdas.size()) {
    const double target = lambdas[next];
    if (!exact || target >= lam) {
      emit(target);
      ++next;
      continue;
    }
    if (act.empty()) {
      // Bring in the most correlated feature.
      Eigen::Index j = -1;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (d.col_sq(k) > 0.0 && (j < 0 || std::abs(c(k)) > std::abs(c(j)))) j = k;
      }
      if (j < 0 || c(j) == 0.0) {
        exact = false;
        continue;
      }
      act.push_back(j);
      sgn.push_back(c(j) > 0.0 ? 1.0 : -1.0);
      in_act[static_cast<std::size_t>(j)] = 1;
    }
    if (++steps > max_steps || static_cast<Eigen::Index>(act.size()) > d.z.rows()) {
      exact = false;
      continue;
    }
    const auto k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd za(d.z.rows(), k);
    Eigen::VectorXd s(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      za.col(i) = d.z.col(act[static_cast<std::size_t>(i)]);
      s(i) = sgn[static_cast<std::size_t>(i)];
    }
    const Eigen::MatrixXd g = za.transpose() * za / n;
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() != Eigen::Success) {
      exact = false;
      continue;
    }
    const Eigen::VectorXd dir = llt.solve(s);
    if (!dir.allFinite() || (g * dir - s).cwiseAbs().maxCoeff() > 1e-8) {
      exact = false;
      continue;
    }
    const Eigen::VectorXd a = d.z.transpose() * (za * dir) / n;
    // Step length to the next event: a join, a drop, or the target.
    double gamma = lam - target;
    Eigen::Index join = -1, drop = -1;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (in_act[static_cast<std::size_t>(j)] || d.col_sq(j) == 0.0) continue;
      for (double sj : {1.0, -1.0}) {
        const double den = 1.0 - sj * a(j);
        if (den <= 1e-12) continue;
        const double t = (lam - sj * c(j)) / den;
        if (t > 1e-15 && t < gamma) {
          gamma = t;
          join = j;
          drop = -1;
        }
      }
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto j = act[static_cast<std::size_t>(i)];
      if (dir(i) == 0.0) continue;
      const double t = -b(j) / dir(i);
      if (t > 1e-15 && t < gamma) {
        gamma = t;
        drop = i;
        join = -1;
      }
    }
    for (Eigen::Index i = 0; i < k; ++i) b(act[static_cast<std::size_t>(i)]) += gamma * dir(i);
    lam -= gamma;
    c = d.z.transpose() * (d.yc - d.z * b) / n;
    if (drop >= 0) {
      const auto j = act[static_cast<std::size_t>(drop)];
      b(j) = 0.0;
      in_act[static_cast<std::size_t>(j)] = 0;
      act.erase(act.begin() + drop);
      sgn.erase(sgn.begin() + drop);
    } else if (join >= 0) {
      act.push_back(join);
      sgn.push_back(c(join) > 0.0 ? 1.0 : -1.0);
      in_act[static_cast<std::size_t>(join)] = 1;
    } else {
      lam = target;
    }
  }
  return out;
}

inline LassoFit lasso_unscale(const LassoDesign& d, const Eigen::VectorXd& b, double lambda, bool standardize) {
  LassoFit f;
  f.lambda = lambda;
  f.standardized = standardize;
  f.coef = Eigen::VectorXd::Zero(b.size());
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    if (d.scale(j) != 0.0) f.coef(j) = b(j) / d.scale(j);
  }
  f.intercept = d.ymean - d.mean.dot(f.coef);
  return f;
}

}  // namespace detail

/// Smallest lambda at which every coefficient is zero.
inline double lasso_lambda_max(const Matrix& X, const Eigen::VectorXd& y, bool standardize = true) {
  auto d = detail::lasso_design(X, y, standardize);
  return (d.z.transpose() * d.yc).cwiseAbs().maxCoeff() / static_cast<double>(X.rows());
}

inline LassoFit fit_lasso(const Matrix& X, const Eigen::VectorXd& y, double lambda, const LassoOptions& opt = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("LASSO: lambda must be >= 0");
  auto d = detail::lasso_design(X, y, opt.standardize);
  auto sol = detail::lasso_solve(d, {lambda}, opt).front();
  auto f = detail::lasso_unscale(d, sol.b, lambda, opt.standardize);
  f.sweeps = sol.sweeps;
  f.converged = sol.converged;
  return f;
}

/// Objective in the penalized space of the fit (weights w_j as above).
inline double lasso_objective(const Matrix& X, const Eigen::VectorXd& y, const LassoFit& f) {
  const double n = static_cast<double>(X.rows());
  Eigen::VectorXd r = y - X * f.coef;
  r.array() -= f.intercept;
  double pen = 0.0;
  const Eigen::VectorXd mean = X.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    double w = 1.0;
    if (f.standardized) w = std::sqrt((X.col(j).array() - mean(j)).square().sum() / n);
    pen += w * std::abs(f.coef(j));
  }
  return r.squaredNorm() / (2.0 * n) + f.lambda * pen;
}

/// Largest KKT violation of a fit, measured in its penalized space.
inline double lasso_kkt_violation(const Matrix& X, const Eigen::VectorXd& y, const LassoFit& f) {
  auto d = detail::lasso_design(X, y, f.standardized);
  const double n = static_cast<double>(X.rows());
  Eigen::VectorXd r = y - X * f.coef;
  r.array() -= f.intercept;
  double worst = std::abs(r.mean());  // intercept stationarity
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (d.scale(j) == 0.0) continue;
    const double g = -d.z.col(j).dot(r) / n;
    const double bj = f.coef(j) * d.scale(j);
    worst = std::max(worst, bj != 0.0 ? std::abs(g + f.lambda * (bj > 0 ? 1.0 : -1.0)) : std::abs(g) - f.lambda);
  }
  return std::max(worst, 0.0);
}

struct LassoCvOptions {
  LassoOptions solver;
  std::size_t n_lambdas = 20;
  double lambda_ratio = 1e-3;  // smallest / largest lambda on the grid
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

struct LassoCvResult {
  LassoFit fit;
  std::vector<double> lambdas;
  std::vector<double> cv_mse;
  std::size_t chosen = 0;
};

/// Log-spaced grid from lambda_max downwards.
inline std::vector<double> lasso_lambda_grid(double lambda_max, std::size_t count, double ratio) {
  if (count == 0) throw DomainError("lambda grid must not be empty");
  std::vector<double> g(count);
  if (!(lambda_max > 0.0)) {
    std::fill(g.begin(), g.end(), 0.0);
    return g;
  }
  for (std::size_t k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
    g[k] = lambda_max * std::pow(ratio, t);
  }
  return g;
}

/// Fits a whole lambda path with warm starts.
inline std::vector<LassoFit> fit_lasso_path(const Matrix& X, const Eigen::VectorXd& y, const std::vector<double>& lambdas,
                                            const LassoOptions& opt = {}) {
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    if (!(lambdas[k] >= 0.0) || (k > 0 && lambdas[k] > lambdas[k - 1])) throw DomainError("LASSO path: lambdas must be >= 0 and descending");
  }
  auto d = detail::lasso_design(X, y, opt.standardize);
  std::vector<LassoFit> out;
  for (auto& sol : detail::lasso_solve(d, lambdas, opt)) {
    out.push_back(detail::lasso_unscale(d, sol.b, lambdas[out.size()], opt.standardize));
    out.back().sweeps = sol.sweeps;
    out.back().converged = sol.converged;
  }
  return out;
}

/// Chooses lambda by inner k-fold CV, then refits on all rows.
inline LassoCvResult fit_lasso_cv(const Matrix& X, const Eigen::VectorXd& y, const LassoCvOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(X.rows());
  LassoCvResult res;
  res.lambdas = lasso_lambda_grid(lasso_lambda_max(X, y, opt.solver.standardize), opt.n_lambdas, opt.lambda_ratio);
  res.cv_mse.assign(res.lambdas.size(), 0.0);
  const std::size_t k = std::min(opt.folds, n);
  if (k >= 2) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(opt.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<std::size_t> tr, te;
      for (std::size_t i = 0; i < n; ++i) (i % k == f ? te : tr).push_back(perm[i]);
      Matrix Xtr(static_cast<Eigen::Index>(tr.size()), X.cols());
      Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
      for (std::size_t i = 0; i < tr.size(); ++i) {
        Xtr.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(tr[i]));
        ytr(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(tr[i]));
      }
      auto path = fit_lasso_path(Xtr, ytr, res.lambdas, opt.solver);
      for (std::size_t l = 0; l < path.size(); ++l) {
        double se = 0.0;
        for (auto i : te) {
          const auto r = static_cast<Eigen::Index>(i);
          const double e = y(r) - (path[l].intercept + X.row(r).dot(path[l].coef.transpose()));
          se += e * e;
        }
        res.cv_mse[l] += se / static_cast<double>(n);
      }
    }
    res.chosen = static_cast<std::size_t>(std::min_element(res.cv_mse.begin(), res.cv_mse.end()) - res.cv_mse.begin());
  } else {
    res.chosen = res.lambdas.size() - 1;
  }
  std::vector<double> upto(res.lambdas.begin(), res.lambdas.begin() + static_cast<std::ptrdiff_t>(res.chosen) + 1);
  res.fit = fit_lasso_path(X, y, upto, opt.solver).back();
  return res;
}

inline double predict_lasso(const LassoFit& f, const RowVector& row) {
  if (row.size() != f.coef.size()) throw ShapeError("LASSO: spectrum width differs from fit");
  return f.intercept + row.dot(f.coef.transpose());
}

inline double predict_lasso(const LassoFit& f, const Spectrum& s) { return predict_lasso(f, s.row()); }

inline Eigen::VectorXd predict_lasso(const LassoFit& f, const Matrix& rows) {
  if (rows.cols() != f.coef.size()) throw ShapeError("LASSO: spectrum width differs from fit");
  return (rows * f.coef).array() + f.intercept;
}

inline void to_json(nlohmann::json& j, const LassoFit& f) {
  j = {{"lambda", f.lambda},
       {"intercept", f.intercept},
       {"standardized", f.standardized},
       {"coef", std::vector<double>(f.coef.data(), f.coef.data() + f.coef.size())}};
}

inline void from_json(const nlohmann::json& j, LassoFit& f) {
  j.at("lambda").get_to(f.lambda);
  j.at("intercept").get_to(f.intercept);
  j.at("standardized").get_to(f.standardized);
  auto c = j.at("coef").get<std::vector<double>>();
  f.coef = Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  f.converged = true;
}

}  // namespace axs
