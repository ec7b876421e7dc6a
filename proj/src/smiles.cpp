// SPDX-License-Identifier: Apache-2.0
//
// SMILES lexer, graph builder and canonical writer. Canonicalization is
// iterative neighborhood refinement with exhaustive tie-breaking: every
// member of the first ambiguous class is tried and the lexicographically
// smallest rendering wins, which makes the output independent of input
// atom order.

#include "specnovo/smiles.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <optional>
#include <string_view>

#include "specnovo/errors.hpp"

namespace specnovo {

double bond_weight(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1.0;
    case BondOrder::Double: return 2.0;
    case BondOrder::Triple: return 3.0;
    case BondOrder::Aromatic: return 1.5;
  }
  return 1.0;
}

namespace {

struct AromaticSymbol {
  const char* text;
  Element element;
};

constexpr AromaticSymbol kAromaticTwo[] = {{"se", Element::Se},
                                           {"as", Element::As}};
constexpr AromaticSymbol kAromaticOne[] = {
    {"b", Element::B}, {"c", Element::C}, {"n", Element::N},
    {"o", Element::O}, {"p", Element::P}, {"s", Element::S}};

std::optional<Element> organic_upper(std::string_view s) {
  static const char* allowed[] = {"B", "C", "N", "O", "P",
                                  "S", "F", "Cl", "Br", "I"};
  for (const char* a : allowed) {
    if (s == a) return element_from_symbol(s);
  }
  return std::nullopt;
}

SmilesToken lex_bracket(const std::string& s, std::size_t start,
                        std::size_t end) {
  // start points at '[', end at the matching ']'.
  SmilesToken tok;
  tok.kind = TokenKind::BracketAtom;
  tok.text = s.substr(start, end - start + 1);
  std::size_t i = start + 1;
  auto fail = [&](const std::string& why) -> TokenError {
    return TokenError("bad bracket atom '" + tok.text + "': " + why, start);
  };

  while (i < end && std::isdigit(static_cast<unsigned char>(s[i]))) {
    tok.isotope = tok.isotope * 10 + (s[i] - '0');
    ++i;
  }
  if (i >= end) throw fail("missing element symbol");

  if (std::isupper(static_cast<unsigned char>(s[i]))) {
    std::optional<Element> elem;
    if (i + 1 < end && std::islower(static_cast<unsigned char>(s[i + 1]))) {
      elem = element_from_symbol(s.substr(i, 2));
      if (elem) i += 2;
    }
    if (!elem) {
      elem = element_from_symbol(s.substr(i, 1));
      if (elem) i += 1;
    }
    if (!elem) throw fail("unknown element symbol");
    tok.element = *elem;
  } else if (std::islower(static_cast<unsigned char>(s[i]))) {
    bool matched = false;
    for (const auto& two : kAromaticTwo) {
      if (i + 1 < end && s[i] == two.text[0] && s[i + 1] == two.text[1]) {
        tok.element = two.element;
        tok.aromatic = true;
        i += 2;
        matched = true;
        break;
      }
    }
    if (!matched) {
      for (const auto& one : kAromaticOne) {
        if (s[i] == one.text[0]) {
          tok.element = one.element;
          tok.aromatic = true;
          i += 1;
          matched = true;
          break;
        }
      }
    }
    if (!matched) throw fail("unknown aromatic symbol");
  } else {
    throw fail("missing element symbol");
  }

  int chiral = 0;
  if (i < end && s[i] == '@') {
    chiral = 1;
    ++i;
    if (i < end && s[i] == '@') {
      chiral = 2;
      ++i;
    }
  }
  tok.charge = 0;  // reused below; chirality stashed via text only
  if (i < end && s[i] == 'H') {
    ++i;
    int h = 0;
    bool any = false;
    while (i < end && std::isdigit(static_cast<unsigned char>(s[i]))) {
      h = h * 10 + (s[i] - '0');
      ++i;
      any = true;
    }
    tok.explicit_h = any ? h : 1;
  }
  if (i < end && (s[i] == '+' || s[i] == '-')) {
    const char sign_char = s[i];
    const int sign = sign_char == '+' ? 1 : -1;
    ++i;
    int magnitude = 1;
    if (i < end && std::isdigit(static_cast<unsigned char>(s[i]))) {
      magnitude = 0;
      while (i < end && std::isdigit(static_cast<unsigned char>(s[i]))) {
        magnitude = magnitude * 10 + (s[i] - '0');
        ++i;
      }
    } else {
      while (i < end && s[i] == sign_char) {
        ++magnitude;
        ++i;
      }
    }
    tok.charge = sign * magnitude;
  }
  if (i < end && s[i] == ':') {
    ++i;  // atom class, parsed and dropped
    if (i >= end || !std::isdigit(static_cast<unsigned char>(s[i]))) {
      throw fail("atom class expects digits");
    }
    while (i < end && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  }
  if (i != end) throw fail("unexpected content");
  // Chirality marker survives only in the token text; the parser re-reads it.
  (void)chiral;
  return tok;
}

int bracket_chirality(const std::string& text) {
  auto at = text.find('@');
  if (at == std::string::npos) return 0;
  return at + 1 < text.size() && text[at + 1] == '@' ? 2 : 1;
}

}  // namespace

std::vector<SmilesToken> tokenize_smiles(const std::string& s) {
  std::vector<SmilesToken> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    SmilesToken tok;
    if (c == '[') {
      std::size_t close = s.find(']', i);
      if (close == std::string::npos) {
        throw TokenError("unterminated bracket atom at position " +
                             std::to_string(i),
                         i);
      }
      tok = lex_bracket(s, i, close);
      i = close + 1;
      tokens.push_back(std::move(tok));
      continue;
    }
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::optional<Element> elem;
      std::size_t len = 1;
      if (i + 1 < s.size() &&
          std::islower(static_cast<unsigned char>(s[i + 1]))) {
        elem = organic_upper(std::string_view(s).substr(i, 2));
        if (elem) len = 2;
      }
      if (!elem) elem = organic_upper(std::string_view(s).substr(i, 1));
      if (!elem) {
        throw TokenError("unrecognized atom symbol at position " +
                             std::to_string(i) + " in '" + s + "'",
                         i);
      }
      tok.kind = TokenKind::OrganicAtom;
      tok.text = s.substr(i, len);
      tok.element = *elem;
      i += len;
      tokens.push_back(std::move(tok));
      continue;
    }
    if (std::islower(static_cast<unsigned char>(c))) {
      std::optional<Element> elem;
      for (const auto& one : kAromaticOne) {
        if (c == one.text[0]) elem = one.element;
      }
      if (!elem) {
        throw TokenError("unrecognized character '" + std::string(1, c) +
                             "' at position " + std::to_string(i),
                         i);
      }
      tok.kind = TokenKind::OrganicAtom;
      tok.text = std::string(1, c);
      tok.element = *elem;
      tok.aromatic = true;
      ++i;
      tokens.push_back(std::move(tok));
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      tok.kind = TokenKind::RingBond;
      tok.text = std::string(1, c);
      ++i;
      tokens.push_back(std::move(tok));
      continue;
    }
    switch (c) {
      case '%': {
        if (i + 2 >= s.size() ||
            !std::isdigit(static_cast<unsigned char>(s[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s[i + 2]))) {
          throw TokenError("'%' ring bond expects two digits at position " +
                               std::to_string(i),
                           i);
        }
        tok.kind = TokenKind::RingBond;
        tok.text = s.substr(i, 3);
        i += 3;
        break;
      }
      case '-': case '=': case '#': case ':': case '/': case '\\':
        tok.kind = TokenKind::Bond;
        tok.text = std::string(1, c);
        ++i;
        break;
      case '(':
        tok.kind = TokenKind::BranchOpen;
        tok.text = "(";
        ++i;
        break;
      case ')':
        tok.kind = TokenKind::BranchClose;
        tok.text = ")";
        ++i;
        break;
      case '.':
        tok.kind = TokenKind::Dot;
        tok.text = ".";
        ++i;
        break;
      default:
        throw TokenError("unrecognized character '" + std::string(1, c) +
                             "' at position " + std::to_string(i),
                         i);
    }
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

std::vector<std::vector<int>> MolGraph::adjacency() const {
  std::vector<std::vector<int>> adj(atoms.size());
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    adj[bonds[i].a].push_back(static_cast<int>(i));
    adj[bonds[i].b].push_back(static_cast<int>(i));
  }
  return adj;
}

namespace {

int bond_int(BondOrder order) {
  return order == BondOrder::Aromatic ? 1 : static_cast<int>(order);
}

// Implicit hydrogen count for an atom written without brackets.
// Aromatic atoms reserve one slot for the ring system and use the lowest
// valence; plain atoms take the smallest valence that fits.
int implicit_h_for(Element elem, bool aromatic, int bond_sum) {
  const std::vector<int>& valences = element_valences(elem);
  if (aromatic) {
    return std::max(0, valences.front() - bond_sum - 1);
  }
  for (int v : valences) {
    if (v >= bond_sum) return v - bond_sum;
  }
  return -1;  // caller raises ValenceError
}

int ring_digit(const std::string& text) {
  if (text[0] == '%') return (text[1] - '0') * 10 + (text[2] - '0');
  return text[0] - '0';
}

}  // namespace

MolGraph parse_smiles(const std::vector<SmilesToken>& tokens) {
  MolGraph g;
  std::vector<std::vector<int>> slots;  // written neighbor order, -1 = H slot
  std::vector<int> chiral;
  struct OpenRing {
    int atom;
    std::optional<BondOrder> order;
    std::size_t slot_index;
  };
  std::map<int, OpenRing> rings;
  std::vector<int> branch_stack;
  int prev = -1;
  std::optional<BondOrder> pending;

  auto add_bond = [&g](int a, int b, BondOrder order) {
    if (a == b) throw StructureError("ring bond closes on its own atom");
    for (const Bond& bond : g.bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) {
        throw StructureError("duplicate bond between atoms " +
                             std::to_string(a) + " and " + std::to_string(b));
      }
    }
    if (order == BondOrder::Aromatic &&
        (!g.atoms[a].aromatic || !g.atoms[b].aromatic)) {
      throw StructureError("aromatic bond requires aromatic atoms");
    }
    g.bonds.push_back(Bond{a, b, order});
  };
  auto default_order = [&g](int a, int b) {
    return g.atoms[a].aromatic && g.atoms[b].aromatic ? BondOrder::Aromatic
                                                      : BondOrder::Single;
  };

  for (const SmilesToken& tok : tokens) {
    switch (tok.kind) {
      case TokenKind::OrganicAtom:
      case TokenKind::BracketAtom: {
        if (tok.element == Element::H) {
          throw StructureError(
              "explicit hydrogen atoms are not supported: " + tok.text);
        }
        Atom atom;
        atom.element = tok.element;
        atom.aromatic = tok.aromatic;
        atom.bracket = tok.kind == TokenKind::BracketAtom;
        atom.charge = tok.charge;
        atom.isotope = tok.isotope;
        atom.explicit_h = tok.explicit_h;
        const int idx = g.num_atoms();
        g.atoms.push_back(atom);
        slots.emplace_back();
        chiral.push_back(atom.bracket ? bracket_chirality(tok.text) : 0);
        if (prev >= 0) {
          slots[idx].push_back(prev);
        }
        if (chiral[idx] != 0 && atom.explicit_h == 1) {
          slots[idx].push_back(-1);
        }
        if (prev >= 0) {
          add_bond(prev, idx, pending.value_or(default_order(prev, idx)));
          slots[prev].push_back(idx);
        }
        pending.reset();
        prev = idx;
        break;
      }
      case TokenKind::Bond: {
        if (prev < 0) throw StructureError("bond symbol before any atom");
        if (pending) throw StructureError("two consecutive bond symbols");
        switch (tok.text[0]) {
          case '-': case '/': case '\\':
            pending = BondOrder::Single;  // direction markers dropped
            break;
          case '=': pending = BondOrder::Double; break;
          case '#': pending = BondOrder::Triple; break;
          case ':': pending = BondOrder::Aromatic; break;
        }
        break;
      }
      case TokenKind::RingBond: {
        if (prev < 0) throw StructureError("ring bond digit before any atom");
        const int digit = ring_digit(tok.text);
        auto it = rings.find(digit);
        if (it == rings.end()) {
          OpenRing open;
          open.atom = prev;
          open.order = pending;
          open.slot_index = slots[prev].size();
          slots[prev].push_back(-2);  // placeholder until the ring closes
          rings.emplace(digit, open);
        } else {
          const OpenRing open = it->second;
          rings.erase(it);
          BondOrder order;
          if (open.order && pending && *open.order != *pending) {
            throw StructureError("ring bond " + std::to_string(digit) +
                                 " has conflicting orders");
          } else if (open.order) {
            order = *open.order;
          } else if (pending) {
            order = *pending;
          } else {
            order = default_order(open.atom, prev);
          }
          add_bond(open.atom, prev, order);
          slots[open.atom][open.slot_index] = prev;
          slots[prev].push_back(open.atom);
        }
        pending.reset();
        break;
      }
      case TokenKind::BranchOpen:
        if (prev < 0) throw StructureError("branch open before any atom");
        if (pending) throw StructureError("bond symbol before branch open");
        branch_stack.push_back(prev);
        break;
      case TokenKind::BranchClose:
        if (branch_stack.empty()) throw StructureError("unmatched ')'");
        if (pending) throw StructureError("dangling bond before ')'");
        prev = branch_stack.back();
        branch_stack.pop_back();
        break;
      case TokenKind::Dot:
        if (pending) throw StructureError("dangling bond before '.'");
        prev = -1;
        break;
    }
  }
  if (pending) throw StructureError("dangling bond at end of input");
  if (!branch_stack.empty()) throw StructureError("unclosed branch");
  if (!rings.empty()) {
    throw StructureError("unmatched ring bond digit " +
                         std::to_string(rings.begin()->first));
  }
  if (g.atoms.empty()) throw StructureError("SMILES contains no atoms");

  // Implicit hydrogens and valence validation.
  std::vector<int> bond_sum(g.atoms.size(), 0);
  for (const Bond& b : g.bonds) {
    bond_sum[b.a] += bond_int(b.order);
    bond_sum[b.b] += bond_int(b.order);
  }
  for (int i = 0; i < g.num_atoms(); ++i) {
    Atom& atom = g.atoms[i];
    if (atom.bracket) {
      atom.implicit_h = 0;
    } else {
      const int h = implicit_h_for(atom.element, atom.aromatic, bond_sum[i]);
      if (h < 0) {
        throw ValenceError("valence of atom " + std::to_string(i) + " (" +
                               element_symbol(atom.element) + ") exceeds " +
                               std::to_string(element_valences(atom.element).back()),
                           i);
      }
      atom.implicit_h = h;
    }
    const int used = bond_sum[i] + atom.implicit_h + atom.explicit_h;
    const int allowance = element_valences(atom.element).back() +
                          (atom.bracket ? std::abs(atom.charge) : 0);
    if (used > allowance) {
      throw ValenceError("valence of atom " + std::to_string(i) + " (" +
                             element_symbol(atom.element) + "): " +
                             std::to_string(used) + " exceeds " +
                             std::to_string(allowance),
                         i);
    }
  }

  g.stereo_slots = std::move(slots);
  g.chiral_tags = std::move(chiral);
  return g;
}

ElementCounts formula_of(const MolGraph& g) {
  ElementCounts counts;
  int hydrogens = 0;
  for (const Atom& atom : g.atoms) {
    counts.add(atom.element, 1);
    hydrogens += atom.total_h();
  }
  if (hydrogens > 0) counts.add(Element::H, hydrogens);
  return counts;
}

ElementCounts token_atom_cost(const SmilesToken& t) {
  ElementCounts cost;
  if (t.kind == TokenKind::OrganicAtom || t.kind == TokenKind::BracketAtom) {
    cost.add(t.element, 1);
    if (t.explicit_h > 0) cost.add(Element::H, t.explicit_h);
  }
  return cost;
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

namespace {

struct CanonContext {
  CanonContext(const MolGraph& graph, const CanonicalOptions& options)
      : g(graph), opts(options) {}

  const MolGraph& g;
  const CanonicalOptions& opts;
  // adjacency as (bond code, neighbor); code sorts aromatic after triple
  std::vector<std::vector<std::pair<int, int>>> nbrs;
  std::string best;
  std::vector<int> best_order;
  bool have_best = false;
  int leaves = 0;
  static constexpr int kLeafBudget = 4096;
};

std::vector<int> dense_ranks(
    const std::vector<std::pair<std::vector<long long>, int>>& keyed) {
  // keyed = (key, atom); returns rank per atom, equal keys share a rank.
  std::vector<int> ranks(keyed.size());
  int rank = 0;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (i > 0 && keyed[i].first != keyed[i - 1].first) ++rank;
    ranks[keyed[i].second] = rank;
  }
  return ranks;
}

std::vector<int> initial_ranks(const CanonContext& ctx) {
  std::vector<std::pair<std::vector<long long>, int>> keyed;
  keyed.reserve(ctx.g.atoms.size());
  for (int i = 0; i < ctx.g.num_atoms(); ++i) {
    const Atom& a = ctx.g.atoms[i];
    std::vector<long long> key = {
        static_cast<long long>(a.element),
        a.aromatic ? 1 : 0,
        a.charge,
        ctx.opts.keep_isotopes ? a.isotope : 0,
        a.total_h(),
        static_cast<long long>(ctx.nbrs[i].size()),
    };
    keyed.emplace_back(std::move(key), i);
  }
  std::sort(keyed.begin(), keyed.end());
  return dense_ranks(keyed);
}

std::vector<int> refine_ranks(const CanonContext& ctx, std::vector<int> ranks) {
  const int n = ctx.g.num_atoms();
  while (true) {
    std::vector<std::pair<std::vector<long long>, int>> keyed;
    keyed.reserve(n);
    for (int i = 0; i < n; ++i) {
      std::vector<long long> key;
      key.push_back(ranks[i]);
      std::vector<long long> env;
      for (const auto& [code, nbr] : ctx.nbrs[i]) {
        env.push_back(static_cast<long long>(code) * 1000003 + ranks[nbr]);
      }
      std::sort(env.begin(), env.end());
      key.insert(key.end(), env.begin(), env.end());
      keyed.emplace_back(std::move(key), i);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<int> next = dense_ranks(keyed);
    if (next == ranks) return ranks;
    ranks = std::move(next);
  }
}

// Bond symbol to write before an atom or ring digit.
std::string bond_symbol(const MolGraph& g, const Bond& b) {
  switch (b.order) {
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
    case BondOrder::Aromatic: return "";  // implied between aromatic atoms
    case BondOrder::Single:
      // A plain single bond between two aromatic atoms would re-parse as
      // aromatic, so it has to be spelled out.
      return g.atoms[b.a].aromatic && g.atoms[b.b].aromatic ? "-" : "";
  }
  return "";
}

std::string atom_token(const MolGraph& g, int idx, int bond_sum,
                       const CanonicalOptions& opts) {
  const Atom& a = g.atoms[idx];
  std::string sym = element_symbol(a.element);
  if (a.aromatic) {
    for (char& c : sym) c = static_cast<char>(std::tolower(c));
  }
  const bool organic_symbol =
      !a.aromatic ? organic_upper(sym).has_value()
                  : sym.size() == 1;  // b c n o p s write bare, se/as do not
  const int isotope = opts.keep_isotopes ? a.isotope : 0;
  bool need_bracket = !organic_symbol || a.charge != 0 || isotope != 0;
  if (!need_bracket) {
    // Bare atoms re-derive hydrogens on parse; bracket when that disagrees.
    need_bracket = implicit_h_for(a.element, a.aromatic, bond_sum) != a.total_h();
  }
  if (!need_bracket) return sym;
  std::string out = "[";
  if (isotope > 0) out += std::to_string(isotope);
  out += sym;
  if (a.total_h() == 1) {
    out += "H";
  } else if (a.total_h() > 1) {
    out += "H" + std::to_string(a.total_h());
  }
  if (a.charge != 0) {
    out += a.charge > 0 ? '+' : '-';
    if (std::abs(a.charge) > 1) out += std::to_string(std::abs(a.charge));
  }
  out += "]";
  return out;
}

struct Writer {
  const MolGraph& g;
  const CanonicalOptions& opts;
  const std::vector<int>& ranks;
  const std::vector<std::vector<std::pair<int, int>>>& nbrs;  // (bond idx, nbr)
  std::vector<int> bond_sum;
  std::vector<bool> visited;
  // ring-closure bookkeeping
  std::vector<int> bond_digit;      // per bond, -1 = tree bond
  std::vector<bool> ring_bond;      // per bond
  std::vector<bool> digit_in_use;
  std::vector<int> emit_order;      // atom -> output position
  int emitted = 0;
  std::string out;

  explicit Writer(const MolGraph& graph, const CanonicalOptions& options,
                  const std::vector<int>& atom_ranks,
                  const std::vector<std::vector<std::pair<int, int>>>& adj)
      : g(graph),
        opts(options),
        ranks(atom_ranks),
        nbrs(adj),
        bond_sum(graph.atoms.size(), 0),
        visited(graph.atoms.size(), false),
        bond_digit(graph.bonds.size(), -1),
        ring_bond(graph.bonds.size(), false),
        digit_in_use(100, false),
        emit_order(graph.atoms.size(), -1) {
    for (std::size_t i = 0; i < g.bonds.size(); ++i) {
      bond_sum[g.bonds[i].a] += bond_int(g.bonds[i].order);
      bond_sum[g.bonds[i].b] += bond_int(g.bonds[i].order);
    }
  }

  int take_digit() {
    for (std::size_t d = 1; d < digit_in_use.size(); ++d) {
      if (!digit_in_use[d]) {
        digit_in_use[d] = true;
        return static_cast<int>(d);
      }
    }
    throw SizeError("more than 99 simultaneously open ring bonds");
  }

  std::string digit_text(int d) {
    if (d < 10) return std::to_string(d);
    return "%" + std::to_string(d);
  }

  // Mark ring bonds of the component reachable from root. The DFS visits
  // neighbors in the same rank order as emit(), so the tree edges left
  // unmarked are exactly the ones emit() will walk.
  void classify_bonds(int root) {
    std::vector<bool> seen(g.atoms.size(), false);
    std::vector<bool> bond_used(g.bonds.size(), false);
    classify_visit(root, seen, bond_used);
  }

  void classify_visit(int at, std::vector<bool>& seen,
                      std::vector<bool>& bond_used) {
    seen[at] = true;
    std::vector<std::pair<int, int>> ordered = nbrs[at];
    std::sort(ordered.begin(), ordered.end(),
              [this](const auto& x, const auto& y) {
                return ranks[x.second] < ranks[y.second];
              });
    for (const auto& [bond_idx, nbr] : ordered) {
      if (bond_used[bond_idx]) continue;
      bond_used[bond_idx] = true;
      if (seen[nbr]) {
        ring_bond[bond_idx] = true;
      } else {
        classify_visit(nbr, seen, bond_used);
      }
    }
  }

  void emit(int atom, int from_bond) {
    visited[atom] = true;
    emit_order[atom] = emitted++;
    out += atom_token(g, atom, bond_sum[atom], opts);

    std::vector<std::pair<int, int>> ordered = nbrs[atom];
    std::sort(ordered.begin(), ordered.end(),
              [this](const auto& x, const auto& y) {
                return ranks[x.second] < ranks[y.second];
              });

    // Ring digits first (open or close), then tree children.
    for (const auto& [bond_idx, nbr] : ordered) {
      if (!ring_bond[bond_idx]) continue;
      if (bond_digit[bond_idx] < 0) {
        const int d = take_digit();
        bond_digit[bond_idx] = d;
        out += bond_symbol(g, g.bonds[bond_idx]);
        out += digit_text(d);
      } else {
        const int d = bond_digit[bond_idx];
        digit_in_use[d] = false;
        out += digit_text(d);
      }
    }

    std::vector<std::pair<int, int>> children;
    for (const auto& [bond_idx, nbr] : ordered) {
      if (ring_bond[bond_idx] || bond_idx == from_bond) continue;
      if (!visited[nbr]) children.push_back({bond_idx, nbr});
    }
    for (std::size_t c = 0; c < children.size(); ++c) {
      const auto& [bond_idx, nbr] = children[c];
      const bool last = c + 1 == children.size();
      if (!last) out += "(";
      out += bond_symbol(g, g.bonds[bond_idx]);
      emit(nbr, bond_idx);
      if (!last) out += ")";
    }
  }
};

void write_component_strings(CanonContext& ctx, const std::vector<int>& ranks) {
  // Total order assumed. Build per-component strings, sort, join with '.'.
  const int n = ctx.g.num_atoms();
  std::vector<std::vector<std::pair<int, int>>> adj(n);
  for (std::size_t i = 0; i < ctx.g.bonds.size(); ++i) {
    adj[ctx.g.bonds[i].a].push_back({static_cast<int>(i), ctx.g.bonds[i].b});
    adj[ctx.g.bonds[i].b].push_back({static_cast<int>(i), ctx.g.bonds[i].a});
  }
  Writer writer(ctx.g, ctx.opts, ranks, adj);
  std::vector<std::pair<std::string, std::vector<int>>> parts;
  std::vector<bool> done(n, false);
  while (true) {
    int root = -1;
    for (int i = 0; i < n; ++i) {
      if (!writer.visited[i] && (root < 0 || ranks[i] < ranks[root])) root = i;
    }
    if (root < 0) break;
    writer.out.clear();
    const int component_start = writer.emitted;
    writer.classify_bonds(root);
    writer.emit(root, -1);
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (writer.visited[i] && !done[i]) {
        members.push_back(i);
        done[i] = true;
      }
    }
    // Positions relative to the component; re-based after sorting below.
    for (int member : members) writer.emit_order[member] -= component_start;
    parts.emplace_back(writer.out, std::move(members));
  }
  std::sort(parts.begin(), parts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string joined;
  std::vector<int> order(n, -1);
  int offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (p > 0) joined += ".";
    for (int member : parts[p].second) {
      order[member] = writer.emit_order[member] + offset;
    }
    offset += static_cast<int>(parts[p].second.size());
    joined += parts[p].first;
  }
  ++ctx.leaves;
  if (!ctx.have_best || joined < ctx.best) {
    ctx.best = std::move(joined);
    ctx.best_order = std::move(order);
    ctx.have_best = true;
  }
}

void canonical_search(CanonContext& ctx, std::vector<int> ranks) {
  if (ctx.leaves >= CanonContext::kLeafBudget) return;
  ranks = refine_ranks(ctx, std::move(ranks));
  const int n = ctx.g.num_atoms();
  // First ambiguous class, smallest rank value.
  int tie_rank = -1;
  std::vector<int> counts(n, 0);
  for (int r : ranks) counts[r]++;
  for (int r = 0; r < n; ++r) {
    if (counts[r] > 1) {
      tie_rank = r;
      break;
    }
  }
  if (tie_rank < 0) {
    write_component_strings(ctx, ranks);
    return;
  }
  for (int a = 0; a < n; ++a) {
    if (ranks[a] != tie_rank) continue;
    std::vector<int> forced(n);
    for (int i = 0; i < n; ++i) {
      forced[i] = ranks[i] * 2 + (i == a ? 0 : 1);
    }
    canonical_search(ctx, std::move(forced));
    if (ctx.leaves >= CanonContext::kLeafBudget) return;
  }
}

}  // namespace

CanonicalResult canonicalize_full(const MolGraph& g,
                                  const CanonicalOptions& opts) {
  CanonicalResult result;
  if (g.atoms.empty()) return result;
  CanonContext ctx{g, opts};
  ctx.nbrs.resize(g.atoms.size());
  for (const Bond& b : g.bonds) {
    const int code = static_cast<int>(b.order);
    ctx.nbrs[b.a].push_back({code, b.b});
    ctx.nbrs[b.b].push_back({code, b.a});
  }
  canonical_search(ctx, initial_ranks(ctx));
  result.smiles = std::move(ctx.best);
  result.order = std::move(ctx.best_order);
  return result;
}

std::string canonicalize(const MolGraph& g, const CanonicalOptions& opts) {
  return canonicalize_full(g, opts).smiles;
}

std::string canonical_or_empty(const std::string& smiles) {
  try {
    return canonicalize(parse_smiles(tokenize_smiles(smiles)));
  } catch (const Error&) {
    return "";
  }
}

}  // namespace specnovo
