#pragma once

// Synthetic labelled spectra drawn from the forward model.
//
// Each chosen element gets a hidden sensitivity gain (log-uniform); a sample's
// theta for that element is counts_per_fraction * gain * concentration. Every
// other slot stays at zero. Noise is added after simulation and clipped at 0.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "axs/dataset.hpp"
#include "axs/errors.hpp"
#include "axs/simulator.hpp"

namespace axs {

struct NoiseModel {
  double sigma = 0.0;    // additive Gaussian SD, counts
  bool poisson = false;  // counting noise applied before the Gaussian term
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthConfig {
  std::size_t n_samples = 100;
  std::vector<std::string> elements{"K", "Ca", "Ti", "Mn", "Fe", "Zn", "Rb", "Sr", "Zr", "Pb"};
  Range concentration{1e-3, 5e-2};  // log-uniform, weight fraction
  std::map<std::string, Range> concentration_overrides;
  Range gain{0.5, 2.0};             // log-uniform per element
  double counts_per_fraction = 2e4;
  Range alpha{100.0, 400.0};        // uniform, counts
  SimulatorGlobals globals;
  NoiseModel noise;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples == 0) throw DomainError("synth: n_samples must be > 0");
    if (elements.empty()) throw DomainError("synth: at least one element required");
    auto check_range = [](const Range& r, const char* what, bool positive) {
      if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || r.lo < 0.0 || (positive && r.lo <= 0.0)) {
        throw DomainError(std::string("synth: bad ") + what + " range");
      }
    };
    check_range(concentration, "concentration", true);
    if (concentration.hi > 1.0) throw DomainError("synth: concentrations must be <= 1");
    for (const auto& [el, r] : concentration_overrides) {
      check_range(r, "concentration override", true);
      if (r.hi > 1.0) throw DomainError("synth: concentrations must be <= 1");
    }
    check_range(gain, "gain", true);
    check_range(alpha, "alpha", false);
    if (!(counts_per_fraction > 0.0)) throw DomainError("synth: counts_per_fraction must be > 0");
    if (!(noise.sigma >= 0.0) || !std::isfinite(noise.sigma)) throw DomainError("synth: sigma must be >= 0");
    globals.validate();
  }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

inline void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw DomainError("range must be a [lo, hi] pair");
  r = {j[0].get<double>(), j[1].get<double>()};
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_samples", c.n_samples},
       {"elements", c.elements},
       {"concentration", c.concentration},
       {"concentration_overrides", c.concentration_overrides},
       {"gain", c.gain},
       {"counts_per_fraction", c.counts_per_fraction},
       {"alpha", c.alpha},
       {"globals", c.globals},
       {"noise", {{"sigma", c.noise.sigma}, {"poisson", c.noise.poisson}}},
       {"seed", c.seed}};
}

/// Overlays the keys present in `j`; unknown keys are an error.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  if (!j.is_object()) throw DomainError("synth config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "n_samples") v.get_to(c.n_samples);
    else if (k == "elements") v.get_to(c.elements);
    else if (k == "concentration") v.get_to(c.concentration);
    else if (k == "concentration_overrides") v.get_to(c.concentration_overrides);
    else if (k == "gain") v.get_to(c.gain);
    else if (k == "counts_per_fraction") v.get_to(c.counts_per_fraction);
    else if (k == "alpha") v.get_to(c.alpha);
    else if (k == "globals") v.get_to(c.globals);
    else if (k == "seed") v.get_to(c.seed);
    else if (k == "noise") {
      for (auto n = v.begin(); n != v.end(); ++n) {
        if (n.key() == "sigma") n.value().get_to(c.noise.sigma);
        else if (n.key() == "poisson") n.value().get_to(c.noise.poisson);
        else throw DomainError("synth config: unknown noise key '" + n.key() + "'");
      }
    } else {
      throw DomainError("synth config: unknown key '" + k + "'");
    }
  }
}

/// Generated corpus with its hidden ground truth.
struct SynthDataset {
  Dataset data;
  Matrix theta;            // samples x slots, counts
  Eigen::VectorXd alpha;   // counts
  Matrix clean;            // noiseless spectra
  SimulatorLayout layout;
  std::vector<double> gains;  // per configured element
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double log_uniform(std::mt19937_64& rng, Range r) {
  if (r.lo == r.hi) return r.lo;
  std::uniform_real_distribution<double> u(std::log(r.lo), std::log(r.hi));
  return std::exp(u(rng));
}

}  // namespace detail

/// Adds noise to a spectrum; the same seed gives the same draw.
inline RowVector add_noise(const RowVector& clean, const NoiseModel& noise, std::uint64_t seed) {
  if (!(noise.sigma >= 0.0)) throw DomainError("noise sigma must be >= 0");
  if (noise.sigma == 0.0 && !noise.poisson) return clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RowVector out(clean.size());
  for (Eigen::Index i = 0; i < clean.size(); ++i) {
    double v = clean(i);
    if (noise.poisson) v = static_cast<double>(std::poisson_distribution<long long>(std::max(v, 0.0))(rng));
    if (noise.sigma > 0.0) v += noise.sigma * gauss(rng);
    out(i) = std::max(v, 0.0);
  }
  return out;
}

inline Spectrum add_noise(const Spectrum& s, const NoiseModel& noise, std::uint64_t seed) {
  return Spectrum::from_row(add_noise(s.row(), noise, seed), s.calibration());
}

inline SynthDataset generate_dataset(const SynthConfig& cfg, const TransitionTable& table,
                                     const EnergyCalibration& cal = {},
                                     const SimulatorLayout& layout = SimulatorLayout::standard()) {
  cfg.validate();
  std::vector<std::size_t> slot_of;
  for (const auto& el : cfg.elements) {
    auto slot = layout.find(el);
    if (!slot) throw LookupError("synth: element '" + el + "' is not in the simulator layout");
    if (!table.contains(el)) throw LookupError("synth: no transitions for '" + el + "'");
    slot_of.push_back(*slot);
  }
  const XrfSimulator sim(table, cal, layout);

  SynthDataset out;
  out.layout = layout;
  std::mt19937_64 gain_rng(detail::splitmix64(cfg.seed));
  for (std::size_t k = 0; k < cfg.elements.size(); ++k) out.gains.push_back(detail::log_uniform(gain_rng, cfg.gain));

  const auto n = static_cast<Eigen::Index>(cfg.n_samples);
  const auto m = static_cast<Eigen::Index>(cal.n_channels());
  Dataset& d = out.data;
  d.calibration = cal;
  d.targets = cfg.elements;
  d.spectra.resize(n, m);
  d.concentrations.resize(n, static_cast<Eigen::Index>(cfg.elements.size()));
  out.theta = Matrix::Zero(n, static_cast<Eigen::Index>(layout.size()));
  out.alpha.resize(n);
  out.clean.resize(n, m);

  for (Eigen::Index s = 0; s < n; ++s) {
    const std::uint64_t sample_seed = detail::splitmix64(cfg.seed ^ detail::splitmix64(static_cast<std::uint64_t>(s) + 1));
    std::mt19937_64 rng(sample_seed);
    SampleLatent latent;
    latent.theta.assign(layout.size(), 0.0);
    for (std::size_t k = 0; k < cfg.elements.size(); ++k) {
      auto it = cfg.concentration_overrides.find(cfg.elements[k]);
      const double c = detail::log_uniform(rng, it == cfg.concentration_overrides.end() ? cfg.concentration : it->second);
      d.concentrations(s, static_cast<Eigen::Index>(k)) = c;
      latent.theta[slot_of[k]] = cfg.counts_per_fraction * out.gains[k] * c;
    }
    latent.alpha = std::uniform_real_distribution<double>(cfg.alpha.lo, cfg.alpha.hi)(rng);
    for (std::size_t j = 0; j < latent.theta.size(); ++j) out.theta(s, static_cast<Eigen::Index>(j)) = latent.theta[j];
    out.alpha(s) = latent.alpha;

    out.clean.row(s) = sim.simulate(latent, cfg.globals);
    d.spectra.row(s) = add_noise(RowVector(out.clean.row(s)), cfg.noise, detail::splitmix64(sample_seed));
    d.ids.push_back("syn" + std::to_string(s));
  }
  d.validate();
  return out;
}

}  // namespace axs
