// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace specnovo {

// Element alphabet shared by formulas, SMILES atoms and decoding budgets.
enum class Element : int {
  C, H, N, O, S, P, F, Cl, Br, I, B, Si, Se, As,
};

inline constexpr int kNumElements = 14;

const std::string& element_symbol(Element e);

// Greedy symbol lookup, two-letter symbols first. Case-sensitive.
std::optional<Element> element_from_symbol(std::string_view s);

// Allowed valences, smallest first (P 3/5, S 2/4/6, ...).
const std::vector<int>& element_valences(Element e);

// Multiset of element -> count. Zero counts are never stored.
class ElementCounts {
 public:
  ElementCounts() = default;

  int get(Element e) const;
  void set(Element e, int count);
  void add(Element e, int count = 1);

  bool contains(Element e) const { return get(e) > 0; }
  bool empty() const { return counts_.empty(); }
  int total() const;

  // True when every count of `other` fits inside this multiset.
  bool covers(const ElementCounts& other) const;
  // Subtract counts of `other`; caller must ensure covers(other).
  void subtract(const ElementCounts& other);

  bool operator==(const ElementCounts& other) const {
    return counts_ == other.counts_;
  }

  // Hill order: C first, then H, then the rest alphabetically.
  std::string to_string() const;

  const std::map<Element, int>& entries() const { return counts_; }

 private:
  std::map<Element, int> counts_;
};

// Parses "C10H5F3INO" style formulas. Greedy two-letter matching, absent
// count means 1. Throws FormulaError on unknown symbols or empty input.
ElementCounts parse_formula(std::string_view text);

}  // namespace specnovo
