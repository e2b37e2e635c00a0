#pragma once

// CSV formats.
//
//   spectra: sample_id,ch0,ch1,...,ch{m-1}      raw counts
//   assay:   sample_id,Fe:wt_frac,Li:ppm,...    unit per column: wt_frac, pct or ppm
//   latents: sample_id,<slot labels>...,alpha
//
// Lines starting with '#' and blank lines are skipped. Sample ids of the form
// "rock#2" name one orientation of a rock; average_orientations merges them.

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "axs/dataset.hpp"
#include "axs/detail/text.hpp"
#include "axs/errors.hpp"
#include "axs/simulator.hpp"

namespace axs {

struct SpectraTable {
  std::vector<std::string> ids;
  Matrix counts;
};

struct AssayTable {
  std::vector<std::string> ids;
  std::vector<std::string> elements;
  Matrix fractions;  // weight fractions after unit conversion
};

enum class AssayUnit { WeightFraction, Percent, Ppm };

inline double to_weight_fraction(double v, AssayUnit u) {
  switch (u) {
    case AssayUnit::WeightFraction: return v;
    case AssayUnit::Percent: return v / 100.0;
    case AssayUnit::Ppm: return v / 1e6;
  }
  return v;
}

inline std::optional<AssayUnit> parse_assay_unit(std::string_view s) {
  if (s == "wt_frac") return AssayUnit::WeightFraction;
  if (s == "pct") return AssayUnit::Percent;
  if (s == "ppm") return AssayUnit::Ppm;
  return std::nullopt;
}

namespace detail {

// Next non-comment line; returns false at end of input.
inline bool next_record(std::istream& in, std::string& line, std::size_t& line_no) {
  while (read_line(in, line)) {
    ++line_no;
    if (!is_blank_or_comment(line)) return true;
  }
  return false;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return f;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  return f;
}

}  // namespace detail

inline SpectraTable read_spectra_csv(std::istream& in, const EnergyCalibration& cal,
                                     const std::string& source = "<spectra>") {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_record(in, line, line_no)) throw ParseError(source, line_no, "missing header");
  const auto header = detail::split(line);
  const std::size_t m = cal.n_channels();
  if (header.size() != m + 1 || header[0] != "sample_id") {
    throw ParseError(source, line_no,
                     "header must be sample_id followed by " + std::to_string(m) + " channel columns");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (header[i + 1] != "ch" + std::to_string(i)) {
      throw ParseError(source, line_no, "expected column ch" + std::to_string(i) + ", got '" +
                                            std::string(header[i + 1]) + "'");
    }
  }
  SpectraTable t;
  std::vector<double> flat;
  while (detail::next_record(in, line, line_no)) {
    const auto f = detail::split(line);
    if (f.size() != m + 1) {
      throw ParseError(source, line_no, "expected " + std::to_string(m + 1) + " fields, got " + std::to_string(f.size()));
    }
    if (f[0].empty()) throw ParseError(source, line_no, "empty sample_id");
    t.ids.emplace_back(f[0]);
    for (std::size_t i = 0; i < m; ++i) {
      auto v = detail::parse_double(f[i + 1]);
      if (!v || !std::isfinite(*v) || *v < 0.0) {
        throw ParseError(source, line_no, "channel " + std::to_string(i) + ": invalid count '" + std::string(f[i + 1]) + "'");
      }
      flat.push_back(*v);
    }
  }
  if (t.ids.empty()) throw ParseError(source, line_no, "no spectra");
  t.counts = Eigen::Map<Matrix>(flat.data(), static_cast<Eigen::Index>(t.ids.size()), static_cast<Eigen::Index>(m));
  return t;
}

inline void write_spectra_csv(std::ostream& out, const std::vector<std::string>& ids, const Matrix& counts) {
  if (ids.size() != static_cast<std::size_t>(counts.rows())) throw ShapeError("one id per spectrum required");
  out << "sample_id";
  for (Eigen::Index i = 0; i < counts.cols(); ++i) out << ",ch" << i;
  out << '\n';
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    out << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index i = 0; i < counts.cols(); ++i) out << ',' << detail::format_double(counts(r, i));
    out << '\n';
  }
}

inline AssayTable read_assay_csv(std::istream& in, const std::string& source = "<assay>") {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_record(in, line, line_no)) throw ParseError(source, line_no, "missing header");
  const auto header = detail::split(line);
  if (header.size() < 2 || header[0] != "sample_id") {
    throw ParseError(source, line_no, "header must be sample_id followed by <element>:<unit> columns");
  }
  AssayTable t;
  std::vector<AssayUnit> units;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto col = header[c];
    const auto colon = col.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(source, line_no, "column '" + std::string(col) + "' must be <element>:<unit>");
    }
    const std::string el(col.substr(0, colon));
    auto unit = parse_assay_unit(col.substr(colon + 1));
    if (!unit) throw ParseError(source, line_no, "unknown unit in '" + std::string(col) + "'");
    if (!ElementRegistry::contains(el)) throw ParseError(source, line_no, "'" + el + "' is not a target element");
    for (const auto& e : t.elements) {
      if (e == el) throw ParseError(source, line_no, "duplicate column for " + el);
    }
    t.elements.push_back(el);
    units.push_back(*unit);
  }
  std::vector<double> flat;
  while (detail::next_record(in, line, line_no)) {
    const auto f = detail::split(line);
    if (f.size() != header.size()) {
      throw ParseError(source, line_no,
                       "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    if (f[0].empty()) throw ParseError(source, line_no, "empty sample_id");
    t.ids.emplace_back(f[0]);
    for (std::size_t c = 0; c < units.size(); ++c) {
      auto v = detail::parse_double(f[c + 1]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(source, line_no, t.elements[c] + ": invalid value '" + std::string(f[c + 1]) + "'");
      }
      const double w = to_weight_fraction(*v, units[c]);
      if (w < 0.0 || w > 1.0) throw ParseError(source, line_no, t.elements[c] + ": concentration outside [0, 1]");
      flat.push_back(w);
    }
  }
  if (t.ids.empty()) throw ParseError(source, line_no, "no assay rows");
  t.fractions = Eigen::Map<Matrix>(flat.data(), static_cast<Eigen::Index>(t.ids.size()),
                                   static_cast<Eigen::Index>(t.elements.size()));
  return t;
}

/// Writes weight fractions; values round-trip exactly.
inline void write_assay_csv(std::ostream& out, const std::vector<std::string>& ids,
                            const std::vector<std::string>& elements, const Matrix& fractions) {
  if (ids.size() != static_cast<std::size_t>(fractions.rows()) ||
      elements.size() != static_cast<std::size_t>(fractions.cols())) {
    throw ShapeError("assay table shape mismatch");
  }
  out << "sample_id";
  for (const auto& e : elements) out << ',' << e << ":wt_frac";
  out << '\n';
  for (Eigen::Index r = 0; r < fractions.rows(); ++r) {
    out << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < fractions.cols(); ++c) out << ',' << detail::format_double(fractions(r, c));
    out << '\n';
  }
}

inline void write_latents_csv(std::ostream& out, const std::vector<std::string>& ids, const SimulatorLayout& layout,
                              const Matrix& theta, const Eigen::VectorXd& alpha) {
  out << "sample_id";
  for (const auto& s : layout.slots()) out << ',' << s.label;
  out << ",alpha\n";
  for (Eigen::Index r = 0; r < theta.rows(); ++r) {
    out << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < theta.cols(); ++c) out << ',' << detail::format_double(theta(r, c));
    out << ',' << detail::format_double(alpha(r)) << '\n';
  }
}

/// Pairs spectra with assay rows by sample id, keeping spectra order.
/// `targets` selects assay columns; empty means all of them.
inline Dataset join_dataset(const SpectraTable& spectra, const AssayTable& assay, const EnergyCalibration& cal,
                            const std::vector<std::string>& targets = {}) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < assay.ids.size(); ++r) {
    if (!row_of.emplace(assay.ids[r], r).second) throw DomainError("duplicate assay id '" + assay.ids[r] + "'");
  }
  std::vector<std::size_t> cols;
  const auto& wanted = targets.empty() ? assay.elements : targets;
  for (const auto& el : wanted) {
    std::size_t c = 0;
    while (c < assay.elements.size() && assay.elements[c] != el) ++c;
    if (c == assay.elements.size()) throw LookupError("assay has no column for '" + el + "'");
    cols.push_back(c);
  }
  Dataset d;
  d.calibration = cal;
  d.targets = wanted;
  d.ids = spectra.ids;
  d.spectra = spectra.counts;
  d.concentrations.resize(spectra.counts.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < spectra.ids.size(); ++r) {
    auto it = row_of.find(spectra.ids[r]);
    if (it == row_of.end()) throw LookupError("no assay row for sample '" + spectra.ids[r] + "'");
    for (std::size_t k = 0; k < cols.size(); ++k) {
      d.concentrations(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          assay.fractions(static_cast<Eigen::Index>(it->second), static_cast<Eigen::Index>(cols[k]));
    }
  }
  d.validate();
  return d;
}

inline Dataset load_dataset(const std::string& spectra_path, const std::string& assay_path,
                            const EnergyCalibration& cal = {}, const std::vector<std::string>& targets = {}) {
  auto sf = detail::open_input(spectra_path);
  auto af = detail::open_input(assay_path);
  return join_dataset(read_spectra_csv(sf, cal, spectra_path), read_assay_csv(af, assay_path), cal, targets);
}

inline void save_dataset(const Dataset& d, const std::string& spectra_path, const std::string& assay_path) {
  auto sf = detail::open_output(spectra_path);
  write_spectra_csv(sf, d.ids, d.spectra);
  auto af = detail::open_output(assay_path);
  write_assay_csv(af, d.ids, d.targets, d.concentrations);
}

/// Group key: the id up to the first '#'.
inline std::string rock_of(const std::string& id) { return id.substr(0, id.find('#')); }

/// Averages spectra and assays over orientations of the same rock, keeping
/// first-appearance order.
inline Dataset average_orientations(const Dataset& d) {
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < d.n_samples(); ++i) {
    auto k = rock_of(d.ids[i]);
    auto& v = members[k];
    if (v.empty()) keys.push_back(k);
    v.push_back(i);
  }
  Dataset out;
  out.calibration = d.calibration;
  out.targets = d.targets;
  out.ids = keys;
  out.spectra = Matrix::Zero(static_cast<Eigen::Index>(keys.size()), d.spectra.cols());
  out.concentrations = Matrix::Zero(static_cast<Eigen::Index>(keys.size()), d.concentrations.cols());
  for (std::size_t g = 0; g < keys.size(); ++g) {
    const auto& rows = members[keys[g]];
    const auto r = static_cast<Eigen::Index>(g);
    for (auto i : rows) {
      out.spectra.row(r) += d.spectra.row(static_cast<Eigen::Index>(i));
      out.concentrations.row(r) += d.concentrations.row(static_cast<Eigen::Index>(i));
    }
    out.spectra.row(r) /= static_cast<double>(rows.size());
    out.concentrations.row(r) /= static_cast<double>(rows.size());
  }
  return out;
}

}  // namespace axs
