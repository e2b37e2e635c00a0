#pragma once

// Labelled spectra in memory, plus the splitting helpers every trainer uses.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "axs/errors.hpp"
#include "axs/spectral_core.hpp"

namespace axs {

struct Dataset {
  std::vector<std::string> ids;
  Matrix spectra;                    // samples x channels, raw counts
  EnergyCalibration calibration;
  std::vector<std::string> targets;  // element symbols, one per column of concentrations
  Matrix concentrations;             // samples x targets, weight fractions

  std::size_t n_samples() const { return static_cast<std::size_t>(spectra.rows()); }
  std::size_t n_channels() const { return static_cast<std::size_t>(spectra.cols()); }
  std::size_t n_targets() const { return targets.size(); }

  std::size_t target_index(std::string_view element) const {
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (targets[k] == element) return k;
    }
    throw LookupError("dataset has no target '" + std::string(element) + "'");
  }

  Spectrum spectrum(std::size_t i) const { return Spectrum::from_row(spectra.row(static_cast<Eigen::Index>(i)), calibration); }

  void validate() const {
    if (ids.size() != n_samples()) throw ShapeError("dataset: one id per spectrum required");
    if (n_channels() != calibration.n_channels()) throw ShapeError("dataset: spectra width differs from calibration");
    if (static_cast<std::size_t>(concentrations.rows()) != n_samples() ||
        static_cast<std::size_t>(concentrations.cols()) != n_targets()) {
      throw ShapeError("dataset: concentrations must be samples x targets");
    }
    if (!spectra.allFinite() || (spectra.size() > 0 && spectra.minCoeff() < 0.0)) {
      throw DomainError("dataset: spectra must be finite and non-negative");
    }
    if (!concentrations.allFinite() ||
        (concentrations.size() > 0 && (concentrations.minCoeff() < 0.0 || concentrations.maxCoeff() > 1.0))) {
      throw DomainError("dataset: concentrations must lie in [0, 1]");
    }
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    d.calibration = calibration;
    d.targets = targets;
    d.spectra.resize(static_cast<Eigen::Index>(rows.size()), spectra.cols());
    d.concentrations.resize(static_cast<Eigen::Index>(rows.size()), concentrations.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = static_cast<Eigen::Index>(rows[r]);
      if (rows[r] >= n_samples()) throw RangeError("dataset subset index out of range");
      d.ids.push_back(ids[rows[r]]);
      d.spectra.row(static_cast<Eigen::Index>(r)) = spectra.row(src);
      d.concentrations.row(static_cast<Eigen::Index>(r)) = concentrations.row(src);
    }
    return d;
  }
};

struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Holds out `fraction` of the samples, stratified by quartile of one target
/// column (Li when present, otherwise the first target).
inline TrainValSplit stratified_validation_split(const Dataset& d, double fraction, std::uint64_t seed) {
  const std::size_t n = d.n_samples();
  if (n < 2) throw DomainError("validation split needs at least 2 samples");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("validation fraction must be in (0, 1)");
  std::size_t col = 0;
  for (std::size_t k = 0; k < d.targets.size(); ++k) {
    if (d.targets[k] == "Li") col = k;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (d.n_targets() > 0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return d.concentrations(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(col)) <
             d.concentrations(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(col));
    });
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> held(n, false);
  std::size_t n_held = 0;
  for (std::size_t q = 0; q < 4; ++q) {
    std::vector<std::size_t> bin(order.begin() + static_cast<std::ptrdiff_t>(q * n / 4),
                                 order.begin() + static_cast<std::ptrdiff_t>((q + 1) * n / 4));
    std::shuffle(bin.begin(), bin.end(), rng);
    const auto take = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(bin.size())));
    for (std::size_t i = 0; i < take && i < bin.size(); ++i) {
      held[bin[i]] = true;
      ++n_held;
    }
  }
  if (n_held == 0) {
    held[order[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]] = true;
    ++n_held;
  }
  if (n_held == n) held[order.front()] = false;
  TrainValSplit s;
  for (std::size_t i = 0; i < n; ++i) (held[i] ? s.validation : s.train).push_back(i);
  return s;
}

}  // namespace axs
