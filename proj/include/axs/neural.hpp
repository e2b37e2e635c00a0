#pragma once

// FCNN, CNN and the AXS auto-encoder.
//
//   FCNN: x -> dense -> ReLU -> y
//   CNN:  x -> Encoder -> latent -> Output -> y
//   AXS:  x -> Encoder -> (theta, alpha) -> Output -> y
//                                    \-> simulator -> x'
//
// Encoder: conv(16, k9, s2) -> sigmoid -> conv(16, k9, s2) -> sigmoid ->
// dense(256) -> sigmoid -> dense(latent) -> softplus. Output: dropout ->
// dense -> sigmoid, with an L1 penalty on its weights.
//
// Spectra enter divided by one global scale (max count of the training set),
// so the reconstruction x' and the latent live in those normalized units.
// Per batch the objective is
//
//   J = sum_s [ J_p(y_s, y'_s) + beta * J_r(x_s, x'_s) ] + l1 * sum |W_out|
//
// with J_p = mean over targets and J_r = mean over channels. FCNN and CNN drop
// the J_r term.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "axs/autodiff.hpp"
#include "axs/dataset.hpp"
#include "axs/errors.hpp"
#include "axs/fp_data.hpp"
#include "axs/simulator.hpp"
#include "axs/spectral_core.hpp"

namespace axs {

enum class ModelKind { Fcnn, Cnn, Axs };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Fcnn: return "fcnn";
    case ModelKind::Cnn: return "cnn";
    case ModelKind::Axs: return "axs";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  if (s == "fcnn") return ModelKind::Fcnn;
  if (s == "cnn") return ModelKind::Cnn;
  if (s == "axs") return ModelKind::Axs;
  return std::nullopt;
}

struct TrainConfig {
  double learning_rate = 0.001;
  double l1_factor = 0.001;
  long early_stop_patience = 1000;
  double dropout_start = 0.5;
  long dropout_end_epoch = 10000;
  long max_epochs = 60000;
  double beta = 1.0;
  long batch_size = 32;
  double validation_fraction = 0.1;
  bool train_simulator = true;  // AXS only: learn the simulator globals
  std::string optimizer = "adam";  // or "sgd"
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& what) { throw DomainError("train config: " + what); };
    if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
    if (!(l1_factor >= 0.0)) bad("l1_factor must be >= 0");
    if (early_stop_patience < 1) bad("early_stop_patience must be >= 1");
    if (!(dropout_start >= 0.0 && dropout_start < 1.0)) bad("dropout_start must be in [0, 1)");
    if (dropout_end_epoch < 1) bad("dropout_end_epoch must be >= 1");
    if (max_epochs < 0) bad("max_epochs must be >= 0");
    if (!(beta >= 0.0)) bad("beta must be >= 0");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) bad("validation_fraction must be in (0, 1)");
    if (optimizer != "adam" && optimizer != "sgd") bad("optimizer must be \"adam\" or \"sgd\"");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"l1_factor", c.l1_factor},
       {"early_stop_patience", c.early_stop_patience},
       {"dropout_start", c.dropout_start},
       {"dropout_end_epoch", c.dropout_end_epoch},
       {"max_epochs", c.max_epochs},
       {"beta", c.beta},
       {"batch_size", c.batch_size},
       {"validation_fraction", c.validation_fraction},
       {"train_simulator", c.train_simulator},
       {"optimizer", c.optimizer},
       {"seed", c.seed}};
}

/// Overlays the keys present in `j`; unknown keys are an error.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw DomainError("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "learning_rate") v.get_to(c.learning_rate);
    else if (k == "l1_factor") v.get_to(c.l1_factor);
    else if (k == "early_stop_patience") v.get_to(c.early_stop_patience);
    else if (k == "dropout_start") v.get_to(c.dropout_start);
    else if (k == "dropout_end_epoch") v.get_to(c.dropout_end_epoch);
    else if (k == "max_epochs") v.get_to(c.max_epochs);
    else if (k == "beta") v.get_to(c.beta);
    else if (k == "batch_size") v.get_to(c.batch_size);
    else if (k == "validation_fraction") v.get_to(c.validation_fraction);
    else if (k == "train_simulator") v.get_to(c.train_simulator);
    else if (k == "optimizer") v.get_to(c.optimizer);
    else if (k == "seed") v.get_to(c.seed);
    else throw DomainError("train config: unknown key '" + k + "'");
  }
}

/// Dropout probability at `epoch` (0-based): linear decay to 0 at dropout_end_epoch.
inline double dropout_probability(const TrainConfig& c, long epoch) {
  const double t = static_cast<double>(epoch) / static_cast<double>(c.dropout_end_epoch);
  return std::max(0.0, c.dropout_start * (1.0 - t));
}

// ---- plain losses ----

inline double loss_reconstruction(std::span<const double> x, std::span<const double> xr) {
  if (x.size() != xr.size()) throw ShapeError("loss_reconstruction: length mismatch");
  if (x.empty()) throw ShapeError("loss_reconstruction: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - xr[i]) * (x[i] - xr[i]);
  return s / static_cast<double>(x.size());
}

inline double loss_prediction(std::span<const double> y, std::span<const double> yp) {
  if (y.size() != yp.size()) throw ShapeError("loss_prediction: length mismatch");
  if (y.empty()) throw ShapeError("loss_prediction: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yp[i]) * (y[i] - yp[i]);
  return s / static_cast<double>(y.size());
}

// ---- architecture ----

struct EncoderShape {
  ad::Index filters1 = 16, kernel1 = 9, stride1 = 2;
  ad::Index filters2 = 16, kernel2 = 9, stride2 = 2;
  ad::Index hidden = 256;

  ad::Conv1dShape conv1(ad::Index channels) const { return {1, channels, filters1, kernel1, stride1}; }
  ad::Conv1dShape conv2(ad::Index channels) const {
    return {filters1, conv1(channels).out_length(), filters2, kernel2, stride2};
  }
  ad::Index flat(ad::Index channels) const { return conv2(channels).out_width(); }

  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

inline void to_json(nlohmann::json& j, const EncoderShape& e) {
  j = {{"filters1", e.filters1}, {"kernel1", e.kernel1}, {"stride1", e.stride1}, {"filters2", e.filters2},
       {"kernel2", e.kernel2},   {"stride2", e.stride2}, {"hidden", e.hidden}};
}

inline void from_json(const nlohmann::json& j, EncoderShape& e) {
  j.at("filters1").get_to(e.filters1);
  j.at("kernel1").get_to(e.kernel1);
  j.at("stride1").get_to(e.stride1);
  j.at("filters2").get_to(e.filters2);
  j.at("kernel2").get_to(e.kernel2);
  j.at("stride2").get_to(e.stride2);
  j.at("hidden").get_to(e.hidden);
}

/// Nodes of one forward pass.
struct ForwardGraph {
  ad::Var prediction;
  std::optional<ad::Var> latent;
  std::optional<ad::Var> reconstruction;
  ad::Var l1_weights;
};

inline constexpr const char* kCheckpointFormat = "axs-model/1";

class Model {
 public:
  Model() = default;

  static Model fcnn(std::vector<std::string> targets, const EnergyCalibration& cal, std::uint64_t seed) {
    Model m(ModelKind::Fcnn, std::move(targets), cal);
    std::mt19937_64 rng(seed);
    const auto ch = static_cast<ad::Index>(cal.n_channels());
    m.add_dense("fc", ch, m.n_targets(), rng);
    return m;
  }

  static Model cnn(std::vector<std::string> targets, const EnergyCalibration& cal, std::uint64_t seed,
                   std::size_t latent_dim = SimulatorLayout::standard().size() + 1, EncoderShape enc = {}) {
    Model m(ModelKind::Cnn, std::move(targets), cal);
    m.enc_ = enc;
    m.latent_dim_ = static_cast<ad::Index>(latent_dim);
    m.init_encoder_output(seed);
    return m;
  }

  static Model axs(std::vector<std::string> targets, const TransitionTable& table, const EnergyCalibration& cal,
                   std::uint64_t seed, SimulatorLayout layout = SimulatorLayout::standard(),
                   const SimulatorGlobals& globals = {}, EncoderShape enc = {}) {
    Model m(ModelKind::Axs, std::move(targets), cal);
    m.enc_ = enc;
    m.latent_dim_ = static_cast<ad::Index>(layout.size() + 1);
    m.table_ = table;
    m.sim_ = std::make_shared<const XrfSimulator>(table, cal, std::move(layout));
    m.init_encoder_output(seed);
    m.sim_params_.emplace(globals);
    return m;
  }

  bool initialized() const noexcept { return initialized_; }
  ModelKind kind() const { return require().kind_; }
  const std::vector<std::string>& targets() const { return targets_; }
  ad::Index n_targets() const { return static_cast<ad::Index>(targets_.size()); }
  const EnergyCalibration& calibration() const { return cal_; }
  ad::Index n_channels() const { return static_cast<ad::Index>(cal_.n_channels()); }
  const EncoderShape& encoder_shape() const { return enc_; }
  ad::Index latent_dim() const { return latent_dim_; }

  double input_scale() const { return input_scale_; }
  void set_input_scale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("input scale must be finite and > 0");
    input_scale_ = s;
  }

  /// Width of the dropout mask forward() expects.
  ad::Index dropout_width() const { return kind_ == ModelKind::Fcnn ? n_channels() : latent_dim_; }

  /// Network weights followed by the simulator globals (AXS).
  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    if (sim_params_) {
      for (auto* p : sim_params_->pointers()) out.push_back(p);
    }
    return out;
  }

  ad::Parameter& parameter(std::string_view name) {
    for (auto* p : parameters()) {
      if (p->name == name) return *p;
    }
    throw LookupError("model has no parameter '" + std::string(name) + "'");
  }
  const ad::Parameter& parameter(std::string_view name) const { return const_cast<Model*>(this)->parameter(name); }

  std::size_t n_weights() const {
    std::size_t n = 0;
    for (const auto* p : const_cast<Model*>(this)->parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  const XrfSimulator& simulator() const {
    if (!sim_) throw NotApplicable("only AXS models carry a simulator");
    return *sim_;
  }

  SimulatorGlobals globals() const {
    simulator();
    return sim_params_->globals();
  }

  void set_simulator_trainable(bool t) {
    simulator();
    sim_params_->set_trainable(t);
  }

  /// Records one forward pass. `x` holds normalized spectra (batch x channels);
  /// `mask` is an inverted-dropout mask of width dropout_width(), or null.
  ForwardGraph forward(ad::Tape& tape, ad::Var x, const Matrix* mask = nullptr) {
    using namespace ad;
    require();
    if (x.cols() != n_channels()) throw ShapeError("model expects " + std::to_string(n_channels()) + " channels");
    if (mask && (mask->rows() != x.rows() || mask->cols() != dropout_width())) {
      throw ShapeError("dropout mask shape mismatch");
    }
    ForwardGraph g;
    if (kind_ == ModelKind::Fcnn) {
      Var h = mask ? x * tape.constant(*mask) : x;
      Var w = tape.parameter(parameter("fc.w"));
      g.prediction = relu(matmul(h, w) + tape.parameter(parameter("fc.b")));
      g.l1_weights = w;
      return g;
    }
    const auto ch = n_channels();
    Var h = conv1d(x, tape.parameter(parameter("enc.conv1.w")), tape.parameter(parameter("enc.conv1.b")), enc_.conv1(ch));
    h = sigmoid(h);
    h = conv1d(h, tape.parameter(parameter("enc.conv2.w")), tape.parameter(parameter("enc.conv2.b")), enc_.conv2(ch));
    h = sigmoid(h);
    h = sigmoid(matmul(h, tape.parameter(parameter("enc.dense.w"))) + tape.parameter(parameter("enc.dense.b")));
    Var latent = softplus(matmul(h, tape.parameter(parameter("enc.latent.w"))) + tape.parameter(parameter("enc.latent.b")));
    g.latent = latent;
    g.prediction = output_head(tape, latent, mask, g.l1_weights);
    if (kind_ == ModelKind::Axs) g.reconstruction = simulate_latent(tape, latent);
    return g;
  }

  /// Simulator applied to a (batch x latent_dim) latent, in normalized units.
  ad::Var simulate_latent(ad::Tape& tape, ad::Var latent) {
    const auto slots = static_cast<ad::Index>(simulator().n_slots());
    if (latent.cols() != slots + 1) throw ShapeError("latent width differs from the simulator layout");
    return sim_->simulate(tape, ad::slice_cols(latent, 0, slots), ad::slice_cols(latent, slots, 1), *sim_params_);
  }

  const TransitionTable& transition_table() const {
    simulator();
    return table_;
  }

 private:
  Model(ModelKind kind, std::vector<std::string> targets, const EnergyCalibration& cal)
      : kind_(kind), initialized_(true), targets_(std::move(targets)), cal_(cal) {
    if (targets_.empty()) throw DomainError("model needs at least one target");
  }

  const Model& require() const {
    if (!initialized_) throw Error("model is not initialized");
    return *this;
  }

  // Glorot-uniform weights, zero biases.
  void add_dense(const std::string& name, ad::Index in, ad::Index out, std::mt19937_64& rng) {
    params_.emplace_back(name + ".w", glorot(in, out, in, out, rng));
    params_.emplace_back(name + ".b", Matrix::Zero(1, out));
  }

  void add_conv(const std::string& name, const ad::Conv1dShape& s, std::mt19937_64& rng) {
    params_.emplace_back(name + ".w", glorot(s.out_channels, s.patch(), s.patch(), s.out_channels * s.kernel, rng));
    params_.emplace_back(name + ".b", Matrix::Zero(1, s.out_channels));
  }

  static Matrix glorot(ad::Index rows, ad::Index cols, ad::Index fan_in, ad::Index fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(rows, cols);
    for (ad::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    return w;
  }

  void init_encoder_output(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto ch = n_channels();
    if (enc_.conv2(ch).out_length() < 1) throw DomainError("encoder: spectrum too short for the convolutions");
    add_conv("enc.conv1", enc_.conv1(ch), rng);
    add_conv("enc.conv2", enc_.conv2(ch), rng);
    add_dense("enc.dense", enc_.flat(ch), enc_.hidden, rng);
    add_dense("enc.latent", enc_.hidden, latent_dim_, rng);
    add_dense("out", latent_dim_, n_targets(), rng);
  }

  ad::Var output_head(ad::Tape& tape, ad::Var latent, const Matrix* mask, ad::Var& l1_weights) {
    using namespace ad;
    Var h = mask ? latent * tape.constant(*mask) : latent;
    Var w = tape.parameter(parameter("out.w"));
    l1_weights = w;
    return sigmoid(matmul(h, w) + tape.parameter(parameter("out.b")));
  }

  ModelKind kind_ = ModelKind::Fcnn;
  bool initialized_ = false;
  std::vector<std::string> targets_;
  EnergyCalibration cal_;
  double input_scale_ = 1.0;
  EncoderShape enc_;
  ad::Index latent_dim_ = 0;
  std::vector<ad::Parameter> params_;
  TransitionTable table_;
  std::shared_ptr<const XrfSimulator> sim_;
  std::optional<SimulatorParameters> sim_params_;
};

// ---- objective ----

struct ObjectiveTerms {
  ad::Var total;
  ad::Var prediction;                     // sum_s J_p
  std::optional<ad::Var> reconstruction;  // sum_s J_r (AXS)
  ad::Var l1;                             // l1_factor * sum |W_out|
  ForwardGraph graph;
};

/// Records the training objective for one batch of normalized spectra.
inline ObjectiveTerms record_objective(ad::Tape& tape, Model& m, const Matrix& x_norm, const Matrix& y, double beta,
                                       double l1_factor, const Matrix* mask = nullptr) {
  using namespace ad;
  if (!(beta >= 0.0)) throw DomainError("beta must be >= 0");
  if (y.rows() != x_norm.rows() || y.cols() != m.n_targets()) throw ShapeError("targets must be batch x n_targets");
  ObjectiveTerms t;
  Var x = tape.input(x_norm);
  t.graph = m.forward(tape, x, mask);
  t.prediction = scale(sum(square(t.graph.prediction - tape.constant(y))), 1.0 / static_cast<double>(y.cols()));
  t.total = t.prediction;
  if (t.graph.reconstruction) {
    t.reconstruction = scale(sum(square(*t.graph.reconstruction - x)), 1.0 / static_cast<double>(x_norm.cols()));
    t.total = t.total + beta * *t.reconstruction;
  }
  t.l1 = scale(sum(abs(t.graph.l1_weights)), l1_factor);
  t.total = t.total + t.l1;
  return t;
}

struct LossBreakdown {
  double prediction = 0.0;
  double reconstruction = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

/// Objective value on raw-count spectra (normalized with the model's scale).
inline LossBreakdown evaluate_loss(Model& m, const Matrix& x_raw, const Matrix& y, double beta, double l1_factor,
                                   const Matrix* mask = nullptr) {
  ad::Tape tape;
  auto t = record_objective(tape, m, x_raw / m.input_scale(), y, beta, l1_factor, mask);
  LossBreakdown b;
  b.prediction = t.prediction.scalar();
  if (t.reconstruction) b.reconstruction = t.reconstruction->scalar();
  b.l1 = t.l1.scalar();
  b.total = t.total.scalar();
  return b;
}

inline double loss_total(Model& m, const Matrix& x_raw, const Matrix& y, double beta, double l1_factor) {
  return evaluate_loss(m, x_raw, y, beta, l1_factor).total;
}

/// Inverted dropout: entries are 0 with probability p, else 1/(1-p).
inline Matrix dropout_mask(ad::Index rows, ad::Index cols, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout probability must be in [0, 1)");
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  const double k = 1.0 / (1.0 - p);
  for (ad::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? k : 0.0;
  return mask;
}

// ---- training ----

struct EpochLog {
  long epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double dropout = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  long best_epoch = -1;  // -1: no epoch beat the initial weights (or none ran)
  long epochs_run = 0;
  bool early_stopped = false;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<ad::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<ad::Index>(r)) = m.row(static_cast<ad::Index>(rows[r]));
  return out;
}

inline void check_dataset_for(const Model& m, const Dataset& d, const char* which) {
  if (d.n_samples() == 0) throw DomainError(std::string(which) + " set is empty");
  if (d.targets != m.targets()) throw ShapeError(std::string(which) + " set targets differ from the model's");
  if (static_cast<ad::Index>(d.n_channels()) != m.n_channels()) {
    throw ShapeError(std::string(which) + " set channel count differs from the model's");
  }
}

}  // namespace detail

/// Early-stopping criterion: sum_s J_p for FCNN/CNN, sum_s (J_p + beta J_r)
/// for AXS. No dropout, no L1.
inline double validation_loss(Model& m, const Matrix& x_raw, const Matrix& y, double beta) {
  auto b = evaluate_loss(m, x_raw, y, beta, 0.0);
  return b.prediction + (m.kind() == ModelKind::Axs ? beta * b.reconstruction : 0.0);
}

/// Trains an initialized model with Adam (or SGD), minibatches, scheduled dropout and
/// early stopping; returns the weights of the best validation epoch.
inline TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& progress = {}) {
  cfg.validate();
  if (!model.initialized()) throw Error("model is not initialized");
  detail::check_dataset_for(model, train_set, "training");
  detail::check_dataset_for(model, val_set, "validation");

  const double max_count = train_set.spectra.maxCoeff();
  model.set_input_scale(max_count > 0.0 ? max_count : 1.0);
  if (model.kind() == ModelKind::Axs) model.set_simulator_trainable(cfg.train_simulator);

  TrainResult res;
  const Matrix xn = train_set.spectra / model.input_scale();
  const Matrix& y = train_set.concentrations;
  auto params = model.parameters();
  auto snapshot = [&] {
    std::vector<Matrix> v;
    for (auto* p : params) v.push_back(p->value);
    return v;
  };
  std::vector<Matrix> best = snapshot();
  res.best_val_loss = validation_loss(model, val_set.spectra, val_set.concentrations, cfg.beta);

  ad::Adam adam(params, {cfg.learning_rate});
  ad::Sgd sgd(params, cfg.learning_rate);
  const bool use_adam = cfg.optimizer == "adam";
  std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, 1));
  std::mt19937_64 drop_rng(detail::mix_seed(cfg.seed, 2));
  std::vector<std::size_t> order(train_set.n_samples());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (long epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double p = dropout_probability(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
      const Matrix xb = detail::gather_rows(xn, rows);
      const Matrix yb = detail::gather_rows(y, rows);
      std::optional<Matrix> mask;
      if (p > 0.0) mask = dropout_mask(xb.rows(), model.dropout_width(), p, drop_rng);
      for (auto* q : params) q->zero_grad();
      ad::Tape tape;
      auto terms = record_objective(tape, model, xb, yb, cfg.beta, cfg.l1_factor, mask ? &*mask : nullptr);
      const double l = terms.total.scalar();
      if (!std::isfinite(l)) throw Error("training diverged at epoch " + std::to_string(epoch));
      tape.backward(terms.total);
      if (use_adam) {
        adam.step();
      } else {
        sgd.step();
      }
      epoch_loss += l;
    }
    EpochLog e{epoch, epoch_loss, validation_loss(model, val_set.spectra, val_set.concentrations, cfg.beta), p};
    res.log.push_back(e);
    res.epochs_run = epoch + 1;
    if (progress) progress(e);
    if (e.val_loss < res.best_val_loss) {
      res.best_val_loss = e.val_loss;
      res.best_epoch = epoch;
      best = snapshot();
    } else if (epoch - res.best_epoch >= cfg.early_stop_patience) {
      res.early_stopped = true;
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  res.model = std::move(model);
  return res;
}

inline TrainResult train_fcnn(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                              const std::function<void(const EpochLog&)>& progress = {}) {
  return train(Model::fcnn(train_set.targets, train_set.calibration, cfg.seed), train_set, val_set, cfg, progress);
}

inline TrainResult train_cnn(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                             const std::function<void(const EpochLog&)>& progress = {}) {
  return train(Model::cnn(train_set.targets, train_set.calibration, cfg.seed), train_set, val_set, cfg, progress);
}

inline TrainResult train_axs(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                             const TransitionTable& table, const SimulatorLayout& layout = SimulatorLayout::standard(),
                             const SimulatorGlobals& initial = {},
                             const std::function<void(const EpochLog&)>& progress = {}) {
  return train(Model::axs(train_set.targets, table, train_set.calibration, cfg.seed, layout, initial), train_set,
               val_set, cfg, progress);
}

// ---- inference ----

namespace detail {

// Forward passes never call backward(), so the parameters are only read.
inline Model& mutable_view(const Model& m) { return const_cast<Model&>(m); }

template <typename F>
void in_chunks(ad::Index rows, F&& f) {
  constexpr ad::Index kChunk = 64;
  for (ad::Index r = 0; r < rows; r += kChunk) f(r, std::min(kChunk, rows - r));
}

}  // namespace detail

/// Predictions for raw-count spectra (rows). `latent` receives the encoder
/// output in count units when requested (CNN/AXS).
inline Matrix predict_batch(const Model& model, const Matrix& raw, Matrix* latent = nullptr) {
  Model& m = detail::mutable_view(model);
  if (!m.initialized()) throw Error("model is not initialized");
  if (raw.cols() != m.n_channels()) throw ShapeError("spectrum width differs from the model's");
  if (latent && m.kind() == ModelKind::Fcnn) throw NotApplicable("FCNN has no latent representation");
  Matrix out(raw.rows(), m.n_targets());
  if (latent) latent->resize(raw.rows(), m.latent_dim());
  detail::in_chunks(raw.rows(), [&](ad::Index r, ad::Index n) {
    ad::Tape tape;
    auto g = m.forward(tape, tape.input(raw.middleRows(r, n) / m.input_scale()));
    out.middleRows(r, n) = g.prediction.value();
    if (latent) latent->middleRows(r, n) = g.latent->value() * m.input_scale();
  });
  return out;
}

struct Prediction {
  std::vector<std::string> targets;
  std::vector<double> values;
  std::optional<SampleLatent> latent;  // count units

  /// Registry-indexed composition; targets outside the registry or values
  /// outside [0, 1] are an error.
  Composition composition() const {
    Composition c;
    for (std::size_t k = 0; k < targets.size(); ++k) c.set(targets[k], values[k]);
    return c;
  }
};

inline Prediction predict(const Model& model, const Spectrum& s) {
  Matrix x = s.row();
  Prediction p;
  p.targets = model.targets();
  if (model.kind() == ModelKind::Fcnn) {
    Matrix y = predict_batch(model, x);
    p.values.assign(y.data(), y.data() + y.size());
    return p;
  }
  Matrix lat;
  Matrix y = predict_batch(model, x, &lat);
  p.values.assign(y.data(), y.data() + y.size());
  SampleLatent l;
  l.theta.assign(lat.data(), lat.data() + lat.cols() - 1);
  l.alpha = lat(0, lat.cols() - 1);
  p.latent = l;
  return p;
}

/// f(encode(x)) in count units, for raw-count spectra (rows). AXS only.
inline Matrix reconstruct_batch(const Model& model, const Matrix& raw) {
  Model& m = detail::mutable_view(model);
  if (!m.initialized()) throw Error("model is not initialized");
  if (m.kind() != ModelKind::Axs) throw NotApplicable("reconstruction needs an AXS model");
  if (raw.cols() != m.n_channels()) throw ShapeError("spectrum width differs from the model's");
  Matrix out(raw.rows(), raw.cols());
  detail::in_chunks(raw.rows(), [&](ad::Index r, ad::Index n) {
    ad::Tape tape;
    auto g = m.forward(tape, tape.input(raw.middleRows(r, n) / m.input_scale()));
    out.middleRows(r, n) = g.reconstruction->value() * m.input_scale();
  });
  return out;
}

/// Reconstruction in count units. Counts can come out negative if training
/// drove the background control points below zero, so this is a plain row.
inline RowVector reconstruct(const Model& model, const Spectrum& s) {
  return reconstruct_batch(model, Matrix(s.row())).row(0);
}

/// Decoder alone: the model's simulator applied to a latent given in count units.
inline RowVector reconstruct_from_latent(const Model& model, const SampleLatent& latent) {
  Model& m = detail::mutable_view(model);
  if (!m.initialized() || m.kind() != ModelKind::Axs) throw NotApplicable("reconstruction needs an AXS model");
  latent.validate();
  if (static_cast<ad::Index>(latent.theta.size()) + 1 != m.latent_dim()) throw ShapeError("latent width mismatch");
  Matrix z(1, m.latent_dim());
  for (std::size_t i = 0; i < latent.theta.size(); ++i) z(0, static_cast<ad::Index>(i)) = latent.theta[i] / m.input_scale();
  z(0, m.latent_dim() - 1) = latent.alpha / m.input_scale();
  ad::Tape tape;
  return m.simulate_latent(tape, tape.input(z)).value() * m.input_scale();
}

/// Per-spectrum RMSE over channels; sqrt of J_r in count units.
inline Eigen::VectorXd reconstruction_rmse(const Matrix& observed, const Matrix& reconstructed) {
  if (observed.rows() != reconstructed.rows() || observed.cols() != reconstructed.cols()) {
    throw ShapeError("reconstruction_rmse: shape mismatch");
  }
  return ((observed - reconstructed).rowwise().squaredNorm() / static_cast<double>(observed.cols())).cwiseSqrt();
}

// ---- checkpoints ----

inline void to_json(nlohmann::json& j, const Model& m) {
  if (!m.initialized()) throw Error("model is not initialized");
  j = nlohmann::json::object();
  j["format"] = kCheckpointFormat;
  j["kind"] = std::string(to_string(m.kind()));
  j["targets"] = m.targets();
  j["calibration"] = {{"e_min", m.calibration().e_min()}, {"e_max", m.calibration().e_max()}, {"n_channels", m.calibration().n_channels()}};
  j["input_scale"] = m.input_scale();
  if (m.kind() != ModelKind::Fcnn) {
    j["encoder"] = m.encoder_shape();
    j["latent_dim"] = m.latent_dim();
  }
  if (m.kind() == ModelKind::Axs) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : m.simulator().layout().slots()) slots.push_back({s.label, s.source});
    j["layout"] = slots;
    nlohmann::json lines = nlohmann::json::array();
    for (const auto& el : m.transition_table().elements()) {
      for (const auto& t : m.transition_table().of(el)) {
        lines.push_back({t.element, std::string(to_string(t.kind)), t.energy_kev, t.probability});
      }
    }
    j["transitions"] = lines;
    j["globals"] = m.globals();
  }
  nlohmann::json params = nlohmann::json::array();
  for (const auto* p : detail::mutable_view(m).parameters()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"trainable", p->trainable},
                      {"values", std::vector<double>(p->value.data(), p->value.data() + p->value.size())}});
  }
  j["parameters"] = params;
}

inline void from_json(const nlohmann::json& j, Model& out) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw DomainError(std::string("checkpoint: missing or unsupported format tag (expected ") + kCheckpointFormat + ")");
  }
  auto kind = parse_model_kind(j.at("kind").get<std::string>());
  if (!kind) throw DomainError("checkpoint: unknown model kind");
  const auto targets = j.at("targets").get<std::vector<std::string>>();
  const auto& c = j.at("calibration");
  EnergyCalibration cal(c.at("e_min").get<double>(), c.at("e_max").get<double>(), c.at("n_channels").get<std::size_t>());
  Model m;
  if (*kind == ModelKind::Fcnn) {
    m = Model::fcnn(targets, cal, 0);
  } else if (*kind == ModelKind::Cnn) {
    m = Model::cnn(targets, cal, 0, j.at("latent_dim").get<std::size_t>(), j.at("encoder").get<EncoderShape>());
  } else {
    std::vector<ElementSlot> slots;
    for (const auto& s : j.at("layout")) slots.push_back({s.at(0).get<std::string>(), s.at(1).get<std::string>()});
    std::vector<Transition> lines;
    for (const auto& t : j.at("transitions")) {
      auto k = parse_transition_kind(t.at(1).get<std::string>());
      if (!k) throw DomainError("checkpoint: bad transition kind");
      lines.push_back({t.at(0).get<std::string>(), *k, t.at(2).get<double>(), t.at(3).get<double>()});
    }
    m = Model::axs(targets, TransitionTable(lines), cal, 0, SimulatorLayout(std::move(slots)),
                   j.at("globals").get<SimulatorGlobals>(), j.at("encoder").get<EncoderShape>());
  }
  m.set_input_scale(j.at("input_scale").get<double>());
  const auto& params = j.at("parameters");
  auto mine = m.parameters();
  if (params.size() != mine.size()) throw DomainError("checkpoint: parameter count mismatch");
  for (std::size_t k = 0; k < mine.size(); ++k) {
    const auto& p = params[k];
    if (p.at("name").get<std::string>() != mine[k]->name) throw DomainError("checkpoint: unexpected parameter " + p.at("name").get<std::string>());
    const auto rows = p.at("rows").get<ad::Index>(), cols = p.at("cols").get<ad::Index>();
    auto values = p.at("values").get<std::vector<double>>();
    if (rows != mine[k]->value.rows() || cols != mine[k]->value.cols() || static_cast<ad::Index>(values.size()) != rows * cols) {
      throw DomainError("checkpoint: shape mismatch for " + mine[k]->name);
    }
    mine[k]->value = Eigen::Map<Matrix>(values.data(), rows, cols);
    mine[k]->trainable = p.at("trainable").get<bool>();
    mine[k]->zero_grad();
  }
  out = std::move(m);
}

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << nlohmann::json(m).dump() << '\n';
}

inline Model load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("checkpoint '" + path + "': " + e.what());
  }
  return j.get<Model>();
}

}  // namespace axs
