#pragma once

// Batch front end: simulate, train, evaluate, gen-synth, report.
//
// Configuration is one JSON document; every flag mirrors a config key and
// overrides it. Failures print a single line
//   axs: error: <kind>: <message>
// on the diagnostic stream and return a nonzero exit code (2 for usage).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "axs/baselines.hpp"
#include "axs/dataset_io.hpp"
#include "axs/eval.hpp"
#include "axs/neural.hpp"
#include "axs/synth.hpp"

namespace axs::cli {

struct UsageError : Error {
  using Error::Error;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> models{"lr", "lasso", "fcnn", "cnn", "axs"};
  std::size_t folds = 10;
  std::string spectra, assay, transitions, composition, globals, report;
  std::vector<std::string> targets;  // empty: every assay column
  bool average_orientations = false;
  EnergyCalibration calibration;
  TrainConfig train;
  SynthConfig synth;
  LassoCvOptions lasso;
  LrOptions lr;
  double theta_scale = 2e4;  // simulate: theta = theta_scale * weight fraction
  double alpha = 200.0;      // simulate: background amount, counts
  long progress_every = 1000;

  std::uint64_t require_seed() const {
    if (!seed) throw UsageError("--seed is required (or \"seed\" in the config file)");
    return *seed;
  }
};

namespace detail {

inline void require_path(const std::string& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(p)) throw Error(std::string(what) + " file not found: '" + p + "'");
}

inline nlohmann::json read_json(const std::string& path) {
  auto f = axs::detail::open_input(path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
}

inline void apply_config(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw DomainError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "out_dir") v.get_to(c.out_dir);
    else if (k == "models") v.get_to(c.models);
    else if (k == "folds") v.get_to(c.folds);
    else if (k == "spectra") v.get_to(c.spectra);
    else if (k == "assay") v.get_to(c.assay);
    else if (k == "transitions") v.get_to(c.transitions);
    else if (k == "composition") v.get_to(c.composition);
    else if (k == "globals") v.get_to(c.globals);
    else if (k == "report") v.get_to(c.report);
    else if (k == "targets") v.get_to(c.targets);
    else if (k == "average_orientations") v.get_to(c.average_orientations);
    else if (k == "calibration") {
      c.calibration = EnergyCalibration(v.value("e_min", c.calibration.e_min()), v.value("e_max", c.calibration.e_max()),
                                        v.value("n_channels", c.calibration.n_channels()));
      for (auto f = v.begin(); f != v.end(); ++f) {
        if (f.key() != "e_min" && f.key() != "e_max" && f.key() != "n_channels") {
          throw DomainError("config: unknown calibration key '" + f.key() + "'");
        }
      }
    } else if (k == "train") from_json(v, c.train);
    else if (k == "synth") from_json(v, c.synth);
    else if (k == "lasso") {
      for (auto f = v.begin(); f != v.end(); ++f) {
        if (f.key() == "n_lambdas") f.value().get_to(c.lasso.n_lambdas);
        else if (f.key() == "lambda_ratio") f.value().get_to(c.lasso.lambda_ratio);
        else if (f.key() == "folds") f.value().get_to(c.lasso.folds);
        else if (f.key() == "standardize") f.value().get_to(c.lasso.solver.standardize);
        else throw DomainError("config: unknown lasso key '" + f.key() + "'");
      }
    } else if (k == "lr") {
      for (auto f = v.begin(); f != v.end(); ++f) {
        if (f.key() == "window") f.value().get_to(c.lr.window);
        else throw DomainError("config: unknown lr key '" + f.key() + "'");
      }
    } else if (k == "theta_scale") v.get_to(c.theta_scale);
    else if (k == "alpha") v.get_to(c.alpha);
    else if (k == "progress_every") v.get_to(c.progress_every);
    else throw DomainError("config: unknown key '" + k + "'");
  }
}

inline std::vector<std::string> split_models(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    for (auto part : axs::detail::split(item)) {
      auto name = std::string(axs::detail::trim(part));
      if (name.empty()) continue;
      const auto& known = canonical_model_order();
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw UsageError("unknown model '" + name + "' (expected lr, lasso, fcnn, cnn, axs)");
      }
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
  }
  if (out.empty()) throw UsageError("no models selected");
  // canonical order keeps outputs independent of how the list was written
  std::vector<std::string> ordered;
  for (const auto& m : canonical_model_order()) {
    if (std::find(out.begin(), out.end(), m) != out.end()) ordered.push_back(m);
  }
  return ordered;
}

inline std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

inline std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.out_dir);
  return std::filesystem::path(c.out_dir) / name;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f << text;
}

inline TransitionTable load_table(const RunConfig& c) {
  require_path(c.transitions, "transitions");
  return load_transition_table(c.transitions);
}

inline Dataset load_labelled(const RunConfig& c) {
  require_path(c.spectra, "spectra");
  require_path(c.assay, "assay");
  Dataset d = load_dataset(c.spectra, c.assay, c.calibration, c.targets);
  if (c.average_orientations) d = average_orientations(d);
  if (d.n_samples() == 0) throw DomainError("dataset is empty");
  return d;
}

inline std::function<void(const EpochLog&)> progress_printer(const RunConfig& c, std::ostream& err, std::string label) {
  if (c.progress_every <= 0) return {};
  return [&err, label = std::move(label), every = c.progress_every](const EpochLog& e) {
    if (e.epoch % every == 0) {
      err << "axs: " << label << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << '\n';
    }
  };
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream s;
  s << "epoch,train_loss,val_loss\n";
  for (const auto& e : log) {
    s << e.epoch << ',' << axs::detail::format_double(e.train_loss) << ',' << axs::detail::format_double(e.val_loss) << '\n';
  }
  return s.str();
}

}  // namespace detail

// ---- commands ----

inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  detail::require_path(c.composition, "composition");
  detail::require_path(c.globals, "globals");
  if (!(c.theta_scale >= 0.0) || !(c.alpha >= 0.0)) throw DomainError("theta_scale and alpha must be >= 0");
  const auto table = detail::load_table(c);
  auto f = axs::detail::open_input(c.composition);
  const auto comp = read_assay_csv(f, c.composition);
  const auto globals = detail::read_json(c.globals).get<SimulatorGlobals>();
  const auto layout = SimulatorLayout::standard();
  const XrfSimulator sim(table, c.calibration, layout);
  std::vector<std::size_t> slot;
  for (const auto& el : comp.elements) {
    auto s = layout.find(el);
    if (!s) throw LookupError("element '" + el + "' is not in the simulator layout");
    slot.push_back(*s);
  }
  Matrix spectra(static_cast<Eigen::Index>(comp.ids.size()), static_cast<Eigen::Index>(c.calibration.n_channels()));
  for (std::size_t r = 0; r < comp.ids.size(); ++r) {
    SampleLatent latent{std::vector<double>(layout.size(), 0.0), c.alpha};
    for (std::size_t k = 0; k < slot.size(); ++k) {
      latent.theta[slot[k]] = c.theta_scale * comp.fractions(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    }
    spectra.row(static_cast<Eigen::Index>(r)) = sim.simulate(latent, globals);
  }
  const auto path = detail::out_path(c, "simulated_spectra.csv");
  std::ostringstream s;
  write_spectra_csv(s, comp.ids, spectra);
  detail::write_text(path, s.str());
  out << "wrote " << path.string() << '\n';
  return 0;
}

inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto seed = c.require_seed();
  const auto models = detail::split_models(c.models);
  const Dataset d = detail::load_labelled(c);
  std::optional<TransitionTable> table;
  const bool need_table = std::find(models.begin(), models.end(), "lr") != models.end() ||
                          std::find(models.begin(), models.end(), "axs") != models.end();
  if (need_table) table = detail::load_table(c);

  for (const auto& name : models) {
    if (name == "lr") {
      nlohmann::json j = {{"format", "axs-lr/1"}, {"fits", nlohmann::json::array()}, {"not_applicable", nlohmann::json::array()}};
      for (const auto& el : d.targets) {
        try {
          j["fits"].push_back(fit_lr(d, el, *table, c.lr));
        } catch (const NotApplicable&) {
          j["not_applicable"].push_back(el);
        }
      }
      detail::write_text(detail::out_path(c, "lr.json"), j.dump() + "\n");
      out << "trained lr: " << j["fits"].size() << " elements\n";
    } else if (name == "lasso") {
      nlohmann::json j = {{"format", "axs-lasso/1"}, {"targets", d.targets}, {"fits", nlohmann::json::array()}};
      for (std::size_t k = 0; k < d.n_targets(); ++k) {
        LassoCvOptions o = c.lasso;
        o.seed = axs::detail::mix_seed(seed, k);
        auto res = fit_lasso_cv(d.spectra, d.concentrations.col(static_cast<Eigen::Index>(k)), o);
        j["fits"].push_back(res.fit);
      }
      detail::write_text(detail::out_path(c, "lasso.json"), j.dump() + "\n");
      out << "trained lasso: " << d.n_targets() << " elements\n";
    } else {
      TrainConfig tc = c.train;
      tc.seed = seed;
      const auto split = stratified_validation_split(d, tc.validation_fraction, seed);
      const Dataset tr = d.subset(split.train);
      const Dataset va = d.subset(split.validation);
      auto progress = detail::progress_printer(c, err, "train " + name);
      TrainResult r;
      if (name == "fcnn") {
        r = train_fcnn(tr, va, tc, progress);
      } else if (name == "cnn") {
        r = train_cnn(tr, va, tc, progress);
      } else {
        SimulatorGlobals initial;
        if (!c.globals.empty()) {
          detail::require_path(c.globals, "globals");
          initial = detail::read_json(c.globals).get<SimulatorGlobals>();
        }
        r = train_axs(tr, va, tc, *table, SimulatorLayout::standard(), initial, progress);
      }
      detail::write_text(detail::out_path(c, name + ".json"), nlohmann::json(r.model).dump() + "\n");
      detail::write_text(detail::out_path(c, name + "_log.csv"), detail::training_log_csv(r.log));
      out << "trained " << name << ": epochs " << r.epochs_run << ", best epoch " << r.best_epoch << ", best val loss "
          << axs::detail::format_double(r.best_val_loss) << '\n';
    }
  }
  return 0;
}

inline int cmd_evaluate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto seed = c.require_seed();
  const auto models = detail::split_models(c.models);
  const Dataset d = detail::load_labelled(c);
  std::optional<TransitionTable> table;
  if (std::find(models.begin(), models.end(), "lr") != models.end() ||
      std::find(models.begin(), models.end(), "axs") != models.end()) {
    table = detail::load_table(c);
  }
  std::vector<ModelSpec> specs;
  for (const auto& name : models) {
    if (name == "lr") {
      specs.push_back(lr_spec(*table, c.lr));
    } else if (name == "lasso") {
      LassoCvOptions o = c.lasso;
      o.seed = seed;
      specs.push_back(lasso_spec(o));
    } else {
      TrainConfig tc = c.train;
      tc.seed = seed;
      const auto kind = *parse_model_kind(name);
      std::function<void(std::size_t, const EpochLog&)> progress;
      if (c.progress_every > 0) {
        progress = [&err, name, every = c.progress_every](std::size_t fold, const EpochLog& e) {
          if (e.epoch % every == 0) {
            err << "axs: evaluate " << name << " fold " << fold << " epoch " << e.epoch << " val_loss " << e.val_loss << '\n';
          }
        };
      }
      specs.push_back(neural_spec(kind, tc, table ? &*table : nullptr, progress));
    }
  }
  const auto folds = kfold_split(d.n_samples(), c.folds, seed);
  const auto cv = cross_validate(specs, d, folds);
  const auto report = build_report(cv);

  const auto text = render_report(report, ReportFormat::Text);
  detail::write_text(detail::out_path(c, "report.csv"), render_report(report, ReportFormat::Csv));
  detail::write_text(detail::out_path(c, "report.txt"), text);
  detail::write_text(detail::out_path(c, "error_bars.csv"), render_error_bars(report));
  {
    std::ostringstream s;
    s << "sample_id,fold\n";
    for (std::size_t i = 0; i < d.n_samples(); ++i) s << d.ids[i] << ',' << folds.fold_of[i] << '\n';
    detail::write_text(detail::out_path(c, "folds.csv"), s.str());
  }
  if (cv.reconstruction_rmse) {
    const auto& rmse = *cv.reconstruction_rmse;
    std::ostringstream per, sum;
    per << "sample_id,rmse\n";
    for (std::size_t i = 0; i < d.n_samples(); ++i) {
      per << d.ids[i] << ',' << axs::detail::format_double(rmse(static_cast<Eigen::Index>(i))) << '\n';
    }
    const auto s = summarize_rmse(rmse);
    sum << "model,n,min,median,mean,max,median_sample\n"
        << cv.reconstruction_model << ',' << s.n << ',' << axs::detail::format_double(s.min) << ','
        << axs::detail::format_double(s.median) << ',' << axs::detail::format_double(s.mean) << ','
        << axs::detail::format_double(s.max) << ',' << d.ids[s.median_index] << '\n';
    detail::write_text(detail::out_path(c, "reconstruction_rmse.csv"), per.str());
    detail::write_text(detail::out_path(c, "reconstruction_summary.csv"), sum.str());
  }
  out << text;
  return 0;
}

inline int cmd_gen_synth(const RunConfig& c, std::ostream& out) {
  SynthConfig sc = c.synth;
  sc.seed = c.require_seed();
  const auto table = detail::load_table(c);
  const auto ds = generate_dataset(sc, table, c.calibration);
  std::ostringstream spectra, assay, latents;
  write_spectra_csv(spectra, ds.data.ids, ds.data.spectra);
  write_assay_csv(assay, ds.data.ids, ds.data.targets, ds.data.concentrations);
  write_latents_csv(latents, ds.data.ids, ds.layout, ds.theta, ds.alpha);
  detail::write_text(detail::out_path(c, "spectra.csv"), spectra.str());
  detail::write_text(detail::out_path(c, "assay.csv"), assay.str());
  detail::write_text(detail::out_path(c, "latents.csv"), latents.str());
  nlohmann::json truth = {{"config", sc}, {"gains", nlohmann::json::object()}};
  for (std::size_t k = 0; k < sc.elements.size(); ++k) truth["gains"][sc.elements[k]] = ds.gains[k];
  detail::write_text(detail::out_path(c, "truth.json"), truth.dump(2) + "\n");
  out << "wrote " << ds.data.n_samples() << " samples to " << c.out_dir << '\n';
  return 0;
}

inline int cmd_report(const RunConfig& c, std::ostream& out) {
  detail::require_path(c.report, "report");
  auto f = axs::detail::open_input(c.report);
  const auto r = parse_report_csv(f, c.report);
  const auto text = render_report(r, ReportFormat::Text);
  detail::write_text(detail::out_path(c, "report.txt"), text);
  detail::write_text(detail::out_path(c, "error_bars.csv"), render_error_bars(r));
  out << text;
  return 0;
}

// ---- entry point ----

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const LookupError*>(&e)) return "lookup";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const RangeError*>(&e)) return "range";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const NotApplicable*>(&e)) return "not_applicable";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "config";
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return "io";
  return "error";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Spectra-to-composition models: simulate, train, evaluate, gen-synth, report", "axs"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir, spectra, assay, transitions, composition, globals, report;
  std::vector<std::string> models, targets;
  std::optional<std::size_t> folds, n_samples;
  std::optional<long> max_epochs;
  std::optional<double> beta, noise_sigma, theta_scale, alpha;

  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed (required)");
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--models", models, "Comma-separated subset of lr,lasso,fcnn,cnn,axs")->delimiter(',');
  app.add_option("--folds", folds, "Cross-validation folds");
  app.add_option("--spectra", spectra, "Spectra CSV");
  app.add_option("--assay", assay, "Assay CSV");
  app.add_option("--transitions", transitions, "Transition table CSV");
  app.add_option("--composition", composition, "Composition CSV (simulate)");
  app.add_option("--globals", globals, "Simulator globals JSON");
  app.add_option("--report", report, "Report CSV (report)");
  app.add_option("--targets", targets, "Assay columns to model")->delimiter(',');
  app.add_option("--max-epochs", max_epochs, "train.max_epochs");
  app.add_option("--beta", beta, "train.beta");
  app.add_option("--n-samples", n_samples, "synth.n_samples");
  app.add_option("--noise-sigma", noise_sigma, "synth.noise.sigma");
  app.add_option("--theta-scale", theta_scale, "Simulate: theta per unit weight fraction");
  app.add_option("--alpha", alpha, "Simulate: background amount");

  auto* sim = app.add_subcommand("simulate", "Simulate spectra for compositions");
  auto* train = app.add_subcommand("train", "Train the selected models and write checkpoints");
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validate the selected models and write reports");
  auto* gen = app.add_subcommand("gen-synth", "Generate a labelled synthetic corpus");
  auto* rep = app.add_subcommand("report", "Render a report CSV as text and error-bar data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "axs: error: usage: " << detail::one_line(e.what()) << '\n';
    return 2;
  }

  try {
    RunConfig c;
    if (!config_path.empty()) detail::apply_config(detail::read_json(config_path), c);
    if (seed) c.seed = seed;
    if (!out_dir.empty()) c.out_dir = out_dir;
    if (!models.empty()) c.models = models;
    if (folds) c.folds = *folds;
    if (!spectra.empty()) c.spectra = spectra;
    if (!assay.empty()) c.assay = assay;
    if (!transitions.empty()) c.transitions = transitions;
    if (!composition.empty()) c.composition = composition;
    if (!globals.empty()) c.globals = globals;
    if (!report.empty()) c.report = report;
    if (!targets.empty()) c.targets = targets;
    if (max_epochs) c.train.max_epochs = *max_epochs;
    if (beta) c.train.beta = *beta;
    if (n_samples) c.synth.n_samples = *n_samples;
    if (noise_sigma) c.synth.noise.sigma = *noise_sigma;
    if (theta_scale) c.theta_scale = *theta_scale;
    if (alpha) c.alpha = *alpha;
    c.require_seed();
    detail::split_models(c.models);

    if (sim->parsed()) return cmd_simulate(c, out);
    if (train->parsed()) return cmd_train(c, out, err);
    if (evaluate->parsed()) return cmd_evaluate(c, out, err);
    if (gen->parsed()) return cmd_gen_synth(c, out);
    if (rep->parsed()) return cmd_report(c, out);
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "axs: error: usage: " << detail::one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "axs: error: " << error_kind(e) << ": " << detail::one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace axs::cli
