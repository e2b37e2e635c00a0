#pragma once

// Central finite-difference check of a model's training-objective gradient.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "axs/neural.hpp"

namespace axs {

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t max_coords_per_tensor = 200;  // all coordinates when the tensor is smaller
  // Denominator floor: |a - n| / max(|a|, |n|, floor). Below it both values
  // are at the level of central-difference roundoff.
  double floor = 1e-8;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  std::size_t coords() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.coords;
    return n;
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the taped gradient of record_objective() with central differences
/// for every trainable parameter (sampled coordinates for large tensors).
inline GradCheckReport check_gradients(Model& m, const Matrix& x_norm, const Matrix& y, double beta, double l1_factor,
                                       const Matrix* mask, const GradCheckOptions& opt = {}) {
  auto params = m.parameters();
  for (auto* p : params) p->zero_grad();
  ad::Tape tape;
  auto terms = record_objective(tape, m, x_norm, y, beta, l1_factor, mask);
  tape.backward(terms.total);
  const Matrix inputs[] = {x_norm};
  const ad::Var outputs[] = {terms.total};
  auto loss = [&] { return tape.evaluate(inputs, outputs)[0](0, 0); };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (auto* p : params) {
    if (!p->trainable) continue;
    std::vector<ad::Index> idx(static_cast<std::size_t>(p->size()));
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opt.max_coords_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_coords_per_tensor);
    }
    GradCheckEntry e{p->name, idx.size()};
    for (auto i : idx) {
      double& w = p->value.data()[i];
      const double w0 = w;
      w = w0 + opt.step;
      const double up = loss();
      w = w0 - opt.step;
      const double down = loss();
      w = w0;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p->grad.data()[i];
      const double r = relative_error(analytic, numeric, opt.floor);
      if (r >= e.max_rel_error) {
        e.max_rel_error = r;
        e.worst_analytic = analytic;
        e.worst_numeric = numeric;
      }
    }
    report.entries.push_back(e);
  }
  return report;
}

/// Moves entries with |w| < margin to +/-margin so |w| is differentiable
/// within a finite-difference step.
inline void push_away_from_zero(ad::Parameter& p, double margin) {
  for (ad::Index i = 0; i < p.size(); ++i) {
    double& v = p.value.data()[i];
    if (std::abs(v) < margin) v = v < 0.0 ? -margin : margin;
  }
}

}  // namespace axs
