#pragma once

// Differentiable XRF forward model.
//
//   f(theta, alpha)(i) = g(theta)(i) * S(i) + b(alpha)(i)
//
// g sums a Lorentzian per transition, scaled per simulated element by
// theta. S is the two-sigmoid instrument response and b a cubic Bezier
// background. L and S take channel energy in keV; b takes the channel's
// unit position in [0, 1], so the Bezier endpoints sit on the spectrum edges.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "axs/autodiff.hpp"
#include "axs/errors.hpp"
#include "axs/fp_data.hpp"
#include "axs/spectral_core.hpp"

namespace axs {

/// Learned global simulator parameters. gamma is the Lorentzian FWHM in keV;
/// c1 and c2 are sigmoid centres in keV.
struct SimulatorGlobals {
  double gamma = 0.3;
  double a1 = 2.0;
  double c1 = 3.0;
  double a2 = -0.2;
  double c2 = 40.0;
  double p1 = 0.5;
  double p2 = 0.5;

  static constexpr std::array<const char*, 7> kNames{"gamma", "a1", "c1", "a2", "c2", "p1", "p2"};

  std::array<double, 7> as_array() const { return {gamma, a1, c1, a2, c2, p1, p2}; }

  static SimulatorGlobals from_array(const std::array<double, 7>& v) {
    SimulatorGlobals g{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    g.validate();
    return g;
  }

  void validate() const {
    for (double v : as_array()) {
      if (!std::isfinite(v)) throw DomainError("simulator globals must be finite");
    }
    if (!(gamma > 0.0)) throw DomainError("gamma must be > 0");
  }

  friend bool operator==(const SimulatorGlobals&, const SimulatorGlobals&) = default;
};

inline void to_json(nlohmann::json& j, const SimulatorGlobals& g) {
  j = nlohmann::json::object();
  auto v = g.as_array();
  for (std::size_t k = 0; k < v.size(); ++k) j[SimulatorGlobals::kNames[k]] = v[k];
}

inline void from_json(const nlohmann::json& j, SimulatorGlobals& g) {
  if (!j.is_object() || j.size() != SimulatorGlobals::kNames.size()) {
    throw Error("simulator globals: expected an object with exactly the fields gamma,a1,c1,a2,c2,p1,p2");
  }
  std::array<double, 7> v{};
  for (std::size_t k = 0; k < v.size(); ++k) {
    auto it = j.find(SimulatorGlobals::kNames[k]);
    if (it == j.end() || !it->is_number()) {
      throw Error(std::string("simulator globals: missing numeric field '") + SimulatorGlobals::kNames[k] + "'");
    }
    v[k] = it->get<double>();
  }
  g = SimulatorGlobals::from_array(v);
}

/// Per-sample simulator input: element multipliers and background amount.
struct SampleLatent {
  std::vector<double> theta;
  double alpha = 0.0;

  void validate() const {
    for (double t : theta) {
      if (!std::isfinite(t) || t < 0.0) throw DomainError("theta entries must be finite and >= 0");
    }
    if (!std::isfinite(alpha) || alpha < 0.0) throw DomainError("alpha must be finite and >= 0");
  }
};

/// One theta entry: a label and the element whose lines it contributes.
struct ElementSlot {
  std::string label;
  std::string source;

  friend bool operator==(const ElementSlot&, const ElementSlot&) = default;
};

/// Simulated element set; theta is indexed in this order.
class SimulatorLayout {
 public:
  SimulatorLayout() = default;
  explicit SimulatorLayout(std::vector<ElementSlot> slots) : slots_(std::move(slots)) {}

  /// The 48 targets, a separate tube-anode (Ag) scatter slot, then `extra` elements.
  static SimulatorLayout standard(const std::vector<std::string>& extra = {"Si", "Ar"}) {
    std::vector<ElementSlot> s;
    for (const auto& e : ElementRegistry::symbols()) s.push_back({e, e});
    s.push_back({"tube:Ag", "Ag"});
    for (const auto& e : extra) s.push_back({e, e});
    return SimulatorLayout(std::move(s));
  }

  /// One slot per listed element.
  static SimulatorLayout of(const std::vector<std::string>& elements) {
    std::vector<ElementSlot> s;
    for (const auto& e : elements) s.push_back({e, e});
    return SimulatorLayout(std::move(s));
  }

  std::size_t size() const noexcept { return slots_.size(); }
  const std::vector<ElementSlot>& slots() const noexcept { return slots_; }

  std::optional<std::size_t> find(std::string_view label) const {
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i].label == label) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const SimulatorLayout&, const SimulatorLayout&) = default;

 private:
  std::vector<ElementSlot> slots_;
};

inline double lorentzian(double t_i, double t_p, double gamma, double e) {
  if (!(gamma > 0.0)) throw DomainError("lorentzian: gamma must be > 0");
  const double h2 = 0.25 * gamma * gamma;
  const double d = e - t_i;
  return t_p * h2 / (d * d + h2);
}

/// 3u(1-u)^2 and 3u^2(1-u) per channel.
struct BezierBasis {
  RowVector first;
  RowVector second;
};

inline BezierBasis bezier_basis(const EnergyCalibration& cal) {
  RowVector u = cal.unit_positions();
  BezierBasis b;
  b.first = (3.0 * u.array() * (1.0 - u.array()).square()).matrix();
  b.second = (3.0 * u.array().square() * (1.0 - u.array())).matrix();
  return b;
}

/// Spectrum values and their derivatives with respect to every input.
struct SimulationJacobian {
  RowVector spectrum;
  Matrix d_theta;  // slots x channels
  RowVector d_alpha;
  std::array<RowVector, 7> d_globals;  // order of SimulatorGlobals::kNames
};

/// Globals held as 1x1 trainable parameters for use on a tape.
struct SimulatorParameters {
  std::array<ad::Parameter, 7> p;

  explicit SimulatorParameters(const SimulatorGlobals& g = {}, bool trainable = true) {
    auto v = g.as_array();
    for (std::size_t k = 0; k < 7; ++k) {
      p[k] = ad::Parameter(std::string("sim.") + SimulatorGlobals::kNames[k], Matrix::Constant(1, 1, v[k]), trainable);
    }
  }

  SimulatorGlobals globals() const {
    std::array<double, 7> v{};
    for (std::size_t k = 0; k < 7; ++k) v[k] = p[k].value(0, 0);
    return SimulatorGlobals::from_array(v);
  }

  void set_trainable(bool t) {
    for (auto& q : p) q.trainable = t;
  }

  std::vector<ad::Parameter*> pointers() {
    std::vector<ad::Parameter*> out;
    for (auto& q : p) out.push_back(&q);
    return out;
  }
};

/// Forward model bound to a transition table, calibration and element layout.
class XrfSimulator {
 public:
  XrfSimulator(const TransitionTable& table, EnergyCalibration cal, SimulatorLayout layout)
      : cal_(cal), layout_(std::move(layout)), energies_(cal.energies()), bezier_(bezier_basis(cal)) {
    for (std::size_t s = 0; s < layout_.size(); ++s) {
      for (const auto& t : table.of(layout_.slots()[s].source)) {
        line_energy_.push_back(t.energy_kev);
        line_prob_.push_back(t.probability);
        line_slot_.push_back(s);
      }
    }
  }

  XrfSimulator(const TransitionTable& table, EnergyCalibration cal = {})
      : XrfSimulator(table, cal, SimulatorLayout::standard()) {}

  const EnergyCalibration& calibration() const noexcept { return cal_; }
  const SimulatorLayout& layout() const noexcept { return layout_; }
  std::size_t n_slots() const noexcept { return layout_.size(); }
  std::size_t n_channels() const noexcept { return cal_.n_channels(); }
  std::size_t n_lines() const noexcept { return line_energy_.size(); }

  /// Per-slot sum of unit-theta Lorentzians, (slots x channels).
  /// With `d_gamma`, also fills d(basis)/d(gamma).
  Matrix line_basis(double gamma, Matrix* d_gamma = nullptr) const {
    if (!(gamma > 0.0)) throw DomainError("gamma must be > 0");
    const Eigen::Index m = energies_.size();
    Matrix basis = Matrix::Zero(static_cast<Eigen::Index>(n_slots()), m);
    if (d_gamma) d_gamma->setZero(basis.rows(), m);
    const double h = 0.5 * gamma;
    const double h2 = h * h;
    for (std::size_t t = 0; t < line_energy_.size(); ++t) {
      const auto row = static_cast<Eigen::Index>(line_slot_[t]);
      const double ti = line_energy_[t];
      const double tp = line_prob_[t];
      double* out = basis.row(row).data();
      double* dout = d_gamma ? d_gamma->row(row).data() : nullptr;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double d = energies_[i] - ti;
        const double d2 = d * d;
        const double inv = 1.0 / (d2 + h2);
        out[i] += tp * h2 * inv;
        if (dout) dout[i] += tp * h * d2 * inv * inv;
      }
    }
    return basis;
  }

  RowVector theoretical(std::span<const double> theta, double gamma) const {
    check_theta(theta.size());
    Eigen::Map<const RowVector> th(theta.data(), static_cast<Eigen::Index>(theta.size()));
    return th * line_basis(gamma);
  }

  RowVector response(const SimulatorGlobals& g) const {
    RowVector s(energies_.size());
    for (Eigen::Index i = 0; i < energies_.size(); ++i) {
      s[i] = 1.0 / (1.0 + std::exp(g.a2 * (g.c2 - energies_[i])) + std::exp(g.a1 * (g.c1 - energies_[i])));
    }
    return s;
  }

  RowVector background(const SimulatorGlobals& g, double alpha) const {
    return alpha * (g.p1 * bezier_.first + g.p2 * bezier_.second);
  }

  RowVector simulate(const SampleLatent& latent, const SimulatorGlobals& g) const {
    latent.validate();
    g.validate();
    return theoretical(latent.theta, g.gamma).cwiseProduct(response(g)) + background(g, latent.alpha);
  }

  /// Batched simulate: theta (batch x slots), alpha (batch x 1).
  Matrix simulate_batch(const Matrix& theta, const Eigen::VectorXd& alpha, const SimulatorGlobals& g) const {
    check_theta(static_cast<std::size_t>(theta.cols()));
    Matrix out = theta * line_basis(g.gamma);
    out.array().rowwise() *= response(g).array();
    RowVector shape = g.p1 * bezier_.first + g.p2 * bezier_.second;
    out.noalias() += alpha * shape;
    return out;
  }

  SimulationJacobian simulate_with_gradients(const SampleLatent& latent, const SimulatorGlobals& g) const {
    latent.validate();
    g.validate();
    check_theta(latent.theta.size());
    Matrix d_basis;
    const Matrix basis = line_basis(g.gamma, &d_basis);
    Eigen::Map<const RowVector> th(latent.theta.data(), static_cast<Eigen::Index>(latent.theta.size()));
    const RowVector gth = th * basis;
    const RowVector s = response(g);
    const RowVector shape = g.p1 * bezier_.first + g.p2 * bezier_.second;

    SimulationJacobian j;
    j.spectrum = gth.cwiseProduct(s) + latent.alpha * shape;
    j.d_theta = basis;
    j.d_theta.array().rowwise() *= s.array();
    j.d_alpha = shape;

    const Eigen::Index m = energies_.size();
    RowVector ds_a1(m), ds_c1(m), ds_a2(m), ds_c2(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double e1 = std::exp(g.a1 * (g.c1 - energies_[i]));
      const double e2 = std::exp(g.a2 * (g.c2 - energies_[i]));
      const double s2 = s[i] * s[i];
      ds_a1[i] = -s2 * e1 * (g.c1 - energies_[i]);
      ds_c1[i] = -s2 * e1 * g.a1;
      ds_a2[i] = -s2 * e2 * (g.c2 - energies_[i]);
      ds_c2[i] = -s2 * e2 * g.a2;
    }
    j.d_globals[0] = (th * d_basis).cwiseProduct(s);
    j.d_globals[1] = gth.cwiseProduct(ds_a1);
    j.d_globals[2] = gth.cwiseProduct(ds_c1);
    j.d_globals[3] = gth.cwiseProduct(ds_a2);
    j.d_globals[4] = gth.cwiseProduct(ds_c2);
    j.d_globals[5] = latent.alpha * bezier_.first;
    j.d_globals[6] = latent.alpha * bezier_.second;
    return j;
  }

  /// Records f(theta, alpha) on a tape. theta: (batch x slots), alpha: (batch x 1).
  ad::Var simulate(ad::Tape& tape, ad::Var theta, ad::Var alpha, SimulatorParameters& params) const {
    if (static_cast<std::size_t>(theta.cols()) != n_slots()) {
      throw ShapeError("theta has " + std::to_string(theta.cols()) + " entries, layout has " +
                       std::to_string(n_slots()));
    }
    using namespace ad;
    Var gamma = tape.parameter(params.p[0]);
    Var a1 = tape.parameter(params.p[1]);
    Var c1 = tape.parameter(params.p[2]);
    Var a2 = tape.parameter(params.p[3]);
    Var c2 = tape.parameter(params.p[4]);
    Var p1 = tape.parameter(params.p[5]);
    Var p2 = tape.parameter(params.p[6]);

    Var basis = basis_op(gamma);
    Var g = matmul(theta, basis);

    Var e = tape.constant(Matrix(energies_));
    Var s = reciprocal(1.0 + exp(a2 * (c2 - e)) + exp(a1 * (c1 - e)));

    Var shape = p1 * tape.constant(Matrix(bezier_.first)) + p2 * tape.constant(Matrix(bezier_.second));
    return g * s + alpha * shape;
  }

 private:
  void check_theta(std::size_t n) const {
    if (n != n_slots()) {
      throw ShapeError("theta has " + std::to_string(n) + " entries, layout has " + std::to_string(n_slots()));
    }
  }

  // Fused tape op for line_basis(gamma); the derivative comes from line_basis.
  ad::Var basis_op(ad::Var gamma) const {
    auto d_basis = std::make_shared<Matrix>();
    return gamma.tape->record(
        {gamma},
        [this, d_basis](ad::Inputs in, Matrix& out) {
          const double gv = (*in[0])(0, 0);
          if (!(gv > 0.0) || !std::isfinite(gv)) throw DomainError("gamma must be finite and > 0");
          out = line_basis(gv, d_basis.get());
        },
        [d_basis](ad::Inputs, const Matrix&, const Matrix& gout, std::span<Matrix* const> gin) {
          if (gin[0]) (*gin[0])(0, 0) += gout.cwiseProduct(*d_basis).sum();
        });
  }

  EnergyCalibration cal_;
  SimulatorLayout layout_;
  RowVector energies_;
  BezierBasis bezier_;
  std::vector<double> line_energy_;
  std::vector<double> line_prob_;
  std::vector<std::size_t> line_slot_;
};

// ---- free-function forms over the standard layout ----

inline Spectrum theoretical_spectrum(std::span<const double> theta, const TransitionTable& table,
                                     const SimulatorGlobals& g, const EnergyCalibration& cal,
                                     const SimulatorLayout& layout = SimulatorLayout::standard()) {
  g.validate();
  SampleLatent{std::vector<double>(theta.begin(), theta.end()), 0.0}.validate();
  XrfSimulator sim(table, cal, layout);
  return Spectrum::from_row(sim.theoretical(theta, g.gamma), cal);
}

inline RowVector instrument_response(const SimulatorGlobals& g, const EnergyCalibration& cal) {
  RowVector e = cal.energies();
  RowVector s(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    s[i] = 1.0 / (1.0 + std::exp(g.a2 * (g.c2 - e[i])) + std::exp(g.a1 * (g.c1 - e[i])));
  }
  return s;
}

inline RowVector background(const SimulatorGlobals& g, double alpha, const EnergyCalibration& cal) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
  auto b = bezier_basis(cal);
  return alpha * (g.p1 * b.first + g.p2 * b.second);
}

inline Spectrum simulate(const SampleLatent& latent, const TransitionTable& table, const SimulatorGlobals& g,
                         const EnergyCalibration& cal, const SimulatorLayout& layout = SimulatorLayout::standard()) {
  XrfSimulator sim(table, cal, layout);
  return Spectrum::from_row(sim.simulate(latent, g), cal);
}

inline SimulationJacobian simulate_with_gradients(const SampleLatent& latent, const TransitionTable& table,
                                                  const SimulatorGlobals& g, const EnergyCalibration& cal,
                                                  const SimulatorLayout& layout = SimulatorLayout::standard()) {
  XrfSimulator sim(table, cal, layout);
  return sim.simulate_with_gradients(latent, g);
}

}  // namespace axs
