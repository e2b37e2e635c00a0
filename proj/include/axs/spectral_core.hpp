#pragma once

// Domain types shared by every module: energy calibration, spectra,
// the target element registry and compositions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "axs/errors.hpp"

namespace axs {

/// Row-major so that one row is one sample (or one spectrum).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr std::size_t kDefaultChannels = 1024;

/// Affine map between channel index [0, n-1] and energy [e_min, e_max] keV.
class EnergyCalibration {
 public:
  EnergyCalibration() : EnergyCalibration(0.0, 50.0, kDefaultChannels) {}

  EnergyCalibration(double e_min_kev, double e_max_kev, std::size_t n_channels = kDefaultChannels)
      : e_min_(e_min_kev), e_max_(e_max_kev), n_(n_channels) {
    if (!std::isfinite(e_min_) || !std::isfinite(e_max_) || !(e_min_ < e_max_)) {
      throw DomainError("calibration requires finite e_min < e_max");
    }
    if (n_ < 2) throw DomainError("calibration requires at least 2 channels");
  }

  double e_min() const noexcept { return e_min_; }
  double e_max() const noexcept { return e_max_; }
  std::size_t n_channels() const noexcept { return n_; }
  double channel_width() const noexcept { return (e_max_ - e_min_) / static_cast<double>(n_ - 1); }

  /// Energies of every channel, as a row.
  RowVector energies() const {
    RowVector e(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) e[static_cast<Eigen::Index>(i)] = energy_at(i);
    return e;
  }

  /// Channel positions normalized onto [0, 1], as a row.
  RowVector unit_positions() const {
    RowVector u(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      u[static_cast<Eigen::Index>(i)] = static_cast<double>(i) / static_cast<double>(n_ - 1);
    }
    return u;
  }

  friend bool operator==(const EnergyCalibration&, const EnergyCalibration&) = default;

  /// Unchecked; see energy_of_channel.
  double energy_at(std::size_t ch) const noexcept {
    // Hitting e_max exactly at the last channel keeps the endpoints exact.
    if (ch == n_ - 1) return e_max_;
    return e_min_ + static_cast<double>(ch) * (e_max_ - e_min_) / static_cast<double>(n_ - 1);
  }

 private:
  double e_min_;
  double e_max_;
  std::size_t n_;
};

inline void check_channel(const EnergyCalibration& cal, std::int64_t ch) {
  if (ch < 0 || static_cast<std::uint64_t>(ch) >= cal.n_channels()) {
    throw RangeError("channel " + std::to_string(ch) + " outside [0, " +
                     std::to_string(cal.n_channels() - 1) + "]");
  }
}

inline double energy_of_channel(const EnergyCalibration& cal, std::int64_t ch) {
  check_channel(cal, ch);
  return cal.energy_at(static_cast<std::size_t>(ch));
}

/// Fractional channel for an energy; inverse of energy_of_channel.
inline double channel_of_energy(const EnergyCalibration& cal, double e_kev) {
  if (!(e_kev >= cal.e_min() && e_kev <= cal.e_max())) {
    throw RangeError("energy " + std::to_string(e_kev) + " keV outside calibrated range");
  }
  return (e_kev - cal.e_min()) * static_cast<double>(cal.n_channels() - 1) / (cal.e_max() - cal.e_min());
}

inline double unit_position(const EnergyCalibration& cal, std::int64_t ch) {
  check_channel(cal, ch);
  return static_cast<double>(ch) / static_cast<double>(cal.n_channels() - 1);
}

/// Channel whose energy is closest to e_kev, or nullopt outside the calibrated range.
inline std::optional<std::size_t> nearest_channel(const EnergyCalibration& cal, double e_kev) {
  if (!(e_kev >= cal.e_min() && e_kev <= cal.e_max())) return std::nullopt;
  return static_cast<std::size_t>(std::lround(channel_of_energy(cal, e_kev)));
}

/// Photon counts per channel. Construction rejects anything malformed.
class Spectrum {
 public:
  Spectrum(std::vector<double> counts, EnergyCalibration cal) : counts_(std::move(counts)), cal_(cal) {
    if (counts_.size() != cal_.n_channels()) {
      throw ShapeError("spectrum has " + std::to_string(counts_.size()) + " channels, calibration expects " +
                       std::to_string(cal_.n_channels()));
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (!std::isfinite(counts_[i]) || counts_[i] < 0.0) {
        throw DomainError("spectrum channel " + std::to_string(i) + " is negative or non-finite");
      }
    }
  }

  static Spectrum from_row(const RowVector& row, const EnergyCalibration& cal) {
    return Spectrum(std::vector<double>(row.data(), row.data() + row.size()), cal);
  }

  std::span<const double> counts() const noexcept { return counts_; }
  double operator[](std::size_t i) const { return counts_.at(i); }
  std::size_t size() const noexcept { return counts_.size(); }
  const EnergyCalibration& calibration() const noexcept { return cal_; }

  RowVector row() const {
    return Eigen::Map<const RowVector>(counts_.data(), static_cast<Eigen::Index>(counts_.size()));
  }

 private:
  std::vector<double> counts_;
  EnergyCalibration cal_;
};

struct ElementInfo {
  std::string_view symbol;
  int z;
};

/// The 48 assayed elements, in the fixed order used for every composition vector.
class ElementRegistry {
 public:
  static constexpr std::size_t kSize = 48;

  static constexpr std::array<ElementInfo, kSize> kTargets{{
      {"Ag", 47}, {"Al", 13}, {"As", 33}, {"Ba", 56}, {"Be", 4},  {"Bi", 83}, {"Ca", 20}, {"Cd", 48},
      {"Ce", 58}, {"Co", 27}, {"Cr", 24}, {"Cs", 55}, {"Cu", 29}, {"Fe", 26}, {"Ga", 31}, {"Ge", 32},
      {"Hf", 72}, {"In", 49}, {"K", 19},  {"La", 57}, {"Li", 3},  {"Mg", 12}, {"Mn", 25}, {"Mo", 42},
      {"Na", 11}, {"Nb", 41}, {"Ni", 28}, {"P", 15},  {"Pb", 82}, {"Rb", 37}, {"Re", 75}, {"S", 16},
      {"Sb", 51}, {"Sc", 21}, {"Se", 34}, {"Sn", 50}, {"Sr", 38}, {"Ta", 73}, {"Te", 52}, {"Th", 90},
      {"Ti", 22}, {"Tl", 81}, {"U", 92},  {"V", 23},  {"W", 74},  {"Y", 39},  {"Zn", 30}, {"Zr", 40},
  }};

  static constexpr std::size_t size() noexcept { return kSize; }

  static std::optional<std::size_t> find(std::string_view symbol) noexcept {
    for (std::size_t i = 0; i < kSize; ++i) {
      if (kTargets[i].symbol == symbol) return i;
    }
    return std::nullopt;
  }

  static std::size_t index_of(std::string_view symbol) {
    if (auto i = find(symbol)) return *i;
    throw LookupError("element '" + std::string(symbol) + "' is not a target element");
  }

  static bool contains(std::string_view symbol) noexcept { return find(symbol).has_value(); }

  static std::string_view symbol(std::size_t i) { return kTargets.at(i).symbol; }

  static std::vector<std::string> symbols() {
    std::vector<std::string> out;
    out.reserve(kSize);
    for (const auto& e : kTargets) out.emplace_back(e.symbol);
    return out;
  }
};

/// Weight fractions over the registry order.
class Composition {
 public:
  Composition() : values_(ElementRegistry::size(), 0.0) {}

  explicit Composition(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() != ElementRegistry::size()) {
      throw ShapeError("composition must have " + std::to_string(ElementRegistry::size()) + " entries");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) check(i, values_[i]);
  }

  double operator[](std::size_t i) const { return values_.at(i); }
  double at(std::string_view symbol) const { return values_[ElementRegistry::index_of(symbol)]; }

  void set(std::string_view symbol, double value) {
    auto i = ElementRegistry::index_of(symbol);
    check(i, value);
    values_[i] = value;
  }

  std::span<const double> values() const noexcept { return values_; }

 private:
  static void check(std::size_t i, double v) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DomainError("concentration of " + std::string(ElementRegistry::symbol(i)) + " outside [0, 1]");
    }
  }

  std::vector<double> values_;
};

}  // namespace axs
