#pragma once

// Fundamental-parameters transition database: characteristic line
// energies and relative probabilities per element.

#include <algorithm>
#include <fstream>
#include <limits>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "axs/detail/text.hpp"
#include "axs/errors.hpp"

namespace axs {

/// Initial vacancy shell of a transition.
enum class TransitionKind { K, L1, L2, L3 };

inline std::string_view to_string(TransitionKind k) {
  switch (k) {
    case TransitionKind::K: return "K";
    case TransitionKind::L1: return "L1";
    case TransitionKind::L2: return "L2";
    case TransitionKind::L3: return "L3";
  }
  return "?";
}

inline std::optional<TransitionKind> parse_transition_kind(std::string_view s) {
  if (s == "K") return TransitionKind::K;
  if (s == "L1") return TransitionKind::L1;
  if (s == "L2") return TransitionKind::L2;
  if (s == "L3") return TransitionKind::L3;
  return std::nullopt;
}

struct Transition {
  std::string element;
  TransitionKind kind;
  double energy_kev;
  double probability;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct EnergyWindow {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

/// Element symbol -> transitions sorted by ascending energy.
class TransitionTable {
 public:
  TransitionTable() = default;

  /// Entries are validated and sorted; probabilities are kept as given.
  explicit TransitionTable(std::vector<Transition> transitions) {
    for (auto& t : transitions) {
      validate(t);
      by_element_[t.element].push_back(std::move(t));
    }
    for (auto& [_, list] : by_element_) sort_entries(list);
  }

  bool contains(std::string_view element) const { return by_element_.find(std::string(element)) != by_element_.end(); }

  /// Every transition of one element; empty if the element has none.
  const std::vector<Transition>& of(std::string_view element) const {
    static const std::vector<Transition> kEmpty;
    auto it = by_element_.find(std::string(element));
    return it == by_element_.end() ? kEmpty : it->second;
  }

  std::vector<std::string> elements() const {
    std::vector<std::string> out;
    for (const auto& [e, _] : by_element_) out.push_back(e);
    return out;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, list] : by_element_) n += list.size();
    return n;
  }

  friend bool operator==(const TransitionTable&, const TransitionTable&) = default;

 private:
  static void validate(const Transition& t) {
    if (t.element.empty()) throw DomainError("transition without element");
    if (!(t.energy_kev > 0.0) || !std::isfinite(t.energy_kev)) throw DomainError("transition energy must be > 0");
    if (!(t.probability > 0.0) || !std::isfinite(t.probability)) {
      throw DomainError("transition probability must be > 0");
    }
  }

  // Total order so that the loaded table does not depend on row order.
  static void sort_entries(std::vector<Transition>& list) {
    std::sort(list.begin(), list.end(), [](const Transition& a, const Transition& b) {
      return std::tie(a.energy_kev, a.kind, a.probability) < std::tie(b.energy_kev, b.kind, b.probability);
    });
  }

  std::map<std::string, std::vector<Transition>> by_element_;
};

/// Parses `element,kind,energy_kev,probability` CSV. `#` lines and blank lines are skipped.
inline TransitionTable parse_transition_table(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<Transition> rows;
  while (detail::read_line(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    auto fields = detail::split(line);
    if (!have_header) {
      if (fields.size() != 4 || fields[0] != "element" || fields[1] != "kind" || fields[2] != "energy_kev" ||
          fields[3] != "probability") {
        throw ParseError(source, line_no, "expected header 'element,kind,energy_kev,probability'");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != 4) throw ParseError(source, line_no, "expected 4 fields");
    auto kind = parse_transition_kind(fields[1]);
    if (!kind) throw ParseError(source, line_no, "unknown transition kind '" + std::string(fields[1]) + "'");
    auto energy = detail::parse_double(fields[2]);
    auto prob = detail::parse_double(fields[3]);
    if (!energy || !prob) throw ParseError(source, line_no, "non-numeric energy or probability");
    if (fields[0].empty()) throw ParseError(source, line_no, "empty element symbol");
    if (!(*energy > 0.0) || !std::isfinite(*energy)) throw ParseError(source, line_no, "energy must be > 0");
    if (!(*prob > 0.0) || !std::isfinite(*prob)) throw ParseError(source, line_no, "probability must be > 0");
    rows.push_back({std::string(fields[0]), *kind, *energy, *prob});
  }
  if (!have_header) throw ParseError(source, line_no, "missing header");
  if (rows.empty()) throw ParseError(source, line_no, "no transitions");
  return TransitionTable(std::move(rows));
}

inline TransitionTable load_transition_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open transition table '" + path + "'");
  return parse_transition_table(in, path);
}

/// Transitions of `element` with energy in [lo, hi], ascending.
inline std::vector<Transition> transitions_for(const TransitionTable& table, std::string_view element,
                                               EnergyWindow window = {}) {
  if (window.lo > window.hi) throw DomainError("energy window lo > hi");
  if (!table.contains(element)) throw LookupError("no transitions for element '" + std::string(element) + "'");
  const auto& all = table.of(element);
  auto first = std::lower_bound(all.begin(), all.end(), window.lo,
                                [](const Transition& t, double e) { return t.energy_kev < e; });
  auto last = std::upper_bound(first, all.end(), window.hi,
                               [](double e, const Transition& t) { return e < t.energy_kev; });
  return {first, last};
}

/// The Kα (K-L3) line: the most probable K transition of the element.
inline std::optional<Transition> k_alpha_line(const TransitionTable& table, std::string_view element) {
  std::optional<Transition> best;
  for (const auto& t : table.of(element)) {
    if (t.kind == TransitionKind::K && (!best || t.probability > best->probability)) best = t;
  }
  return best;
}

inline void write_transition_table(std::ostream& out, const TransitionTable& table) {
  out << "element,kind,energy_kev,probability\n";
  for (const auto& e : table.elements()) {
    for (const auto& t : table.of(e)) {
      out << t.element << ',' << to_string(t.kind) << ',' << detail::format_double(t.energy_kev) << ','
          << detail::format_double(t.probability) << '\n';
    }
  }
}

}  // namespace axs
