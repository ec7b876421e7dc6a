// SPDX-License-Identifier: Apache-2.0
#include "specnovo/elements.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

#include "specnovo/errors.hpp"

namespace specnovo {

namespace {

const std::array<std::string, kNumElements>& symbols() {
  static const std::array<std::string, kNumElements> table = {
      "C", "H", "N", "O", "S", "P", "F",
      "Cl", "Br", "I", "B", "Si", "Se", "As"};
  return table;
}

const std::array<std::vector<int>, kNumElements>& valences() {
  static const std::array<std::vector<int>, kNumElements> table = {{
      {4},        // C
      {1},        // H
      {3},        // N
      {2},        // O
      {2, 4, 6},  // S
      {3, 5},     // P
      {1},        // F
      {1},        // Cl
      {1},        // Br
      {1},        // I
      {3},        // B
      {4},        // Si
      {2, 4, 6},  // Se
      {3, 5},     // As
  }};
  return table;
}

}  // namespace

const std::string& element_symbol(Element e) {
  return symbols()[static_cast<int>(e)];
}

std::optional<Element> element_from_symbol(std::string_view s) {
  for (int i = 0; i < kNumElements; ++i) {
    if (symbols()[i] == s) return static_cast<Element>(i);
  }
  return std::nullopt;
}

const std::vector<int>& element_valences(Element e) {
  return valences()[static_cast<int>(e)];
}

int ElementCounts::get(Element e) const {
  auto it = counts_.find(e);
  return it == counts_.end() ? 0 : it->second;
}

void ElementCounts::set(Element e, int count) {
  if (count <= 0) {
    counts_.erase(e);
  } else {
    counts_[e] = count;
  }
}

void ElementCounts::add(Element e, int count) {
  set(e, get(e) + count);
}

int ElementCounts::total() const {
  int sum = 0;
  for (const auto& [e, c] : counts_) sum += c;
  return sum;
}

bool ElementCounts::covers(const ElementCounts& other) const {
  for (const auto& [e, c] : other.counts_) {
    if (get(e) < c) return false;
  }
  return true;
}

void ElementCounts::subtract(const ElementCounts& other) {
  for (const auto& [e, c] : other.counts_) {
    set(e, get(e) - c);
  }
}

std::string ElementCounts::to_string() const {
  // Hill order: with carbon, C then H then the rest alphabetically;
  // without carbon, everything alphabetically (H included).
  const bool has_carbon = contains(Element::C);
  std::vector<std::pair<std::string, int>> rest;
  for (const auto& [e, c] : counts_) {
    if (has_carbon && (e == Element::C || e == Element::H)) continue;
    rest.emplace_back(element_symbol(e), c);
  }
  std::sort(rest.begin(), rest.end());

  std::ostringstream out;
  auto emit = [&out](const std::string& sym, int count) {
    out << sym;
    if (count > 1) out << count;
  };
  if (has_carbon) {
    emit("C", get(Element::C));
    if (int h = get(Element::H); h > 0) emit("H", h);
  }
  for (const auto& [sym, count] : rest) emit(sym, count);
  return out.str();
}

ElementCounts parse_formula(std::string_view text) {
  if (text.empty()) throw FormulaError("empty formula");
  ElementCounts counts;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isupper(static_cast<unsigned char>(text[i]))) {
      throw FormulaError(
          "expected element symbol at position " + std::to_string(i) +
              " in formula '" + std::string(text) + "'",
          i);
    }
    // Greedy: try the two-letter symbol before the single letter.
    std::optional<Element> elem;
    std::size_t sym_len = 0;
    if (i + 1 < text.size() &&
        std::islower(static_cast<unsigned char>(text[i + 1]))) {
      elem = element_from_symbol(text.substr(i, 2));
      sym_len = 2;
    }
    if (!elem) {
      elem = element_from_symbol(text.substr(i, 1));
      sym_len = 1;
    }
    if (!elem) {
      throw FormulaError("unknown element symbol '" +
                             std::string(text.substr(i, 2)) +
                             "' at position " + std::to_string(i),
                         i);
    }
    i += sym_len;
    int count = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      count = count * 10 + (text[i] - '0');
      ++i;
    }
    if (count == 0) count = 1;
    counts.add(*elem, count);
  }
  return counts;
}

}  // namespace specnovo
