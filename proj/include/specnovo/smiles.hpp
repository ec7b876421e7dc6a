// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "specnovo/elements.hpp"

namespace specnovo {

enum class TokenKind {
  OrganicAtom,
  BracketAtom,
  Bond,
  RingBond,
  BranchOpen,
  BranchClose,
  Dot,
};

struct SmilesToken {
  std::string text;
  TokenKind kind = TokenKind::OrganicAtom;
  // Atom tokens only.
  Element element = Element::C;
  bool aromatic = false;
  int explicit_h = 0;   // bracket atoms
  int charge = 0;       // bracket atoms
  int isotope = 0;      // bracket atoms, 0 = unspecified
};

// Greedy left-to-right SMILES lexer. Two-letter halogens win over single
// letters; bracket atoms come out as one token. Throws TokenError.
std::vector<SmilesToken> tokenize_smiles(const std::string& s);

enum class BondOrder : int { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

// Weight used by MCES edge accounting (aromatic = 1.5).
double bond_weight(BondOrder order);

struct Atom {
  Element element = Element::C;
  bool aromatic = false;
  int charge = 0;
  int isotope = 0;
  int explicit_h = 0;  // from bracket notation
  int implicit_h = 0;  // assigned by the valence rules
  bool bracket = false;

  int total_h() const { return explicit_h + implicit_h; }
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
};

// Labeled multigraph of heavy atoms. At most one bond per atom pair,
// no self-loops; aromatic bonds only between aromatic atoms.
struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  // Parse metadata used only by the stereo-aware comparison key: written
  // neighbor order per atom (-1 marks the implicit-H slot) and the @/@@
  // tag (0 none, 1 @, 2 @@). Ignored by canonicalize and fingerprints.
  std::vector<std::vector<int>> stereo_slots;
  std::vector<int> chiral_tags;

  int num_atoms() const { return static_cast<int>(atoms.size()); }
  std::vector<std::vector<int>> adjacency() const;  // bond indices per atom
};

// Builds the graph: ring-closure resolution, implicit hydrogens from the
// valence table, aromaticity accepted as written. Throws StructureError /
// ValenceError.
MolGraph parse_smiles(const std::vector<SmilesToken>& tokens);

inline MolGraph parse_smiles(const std::string& s) {
  return parse_smiles(tokenize_smiles(s));
}

// Heavy atoms from the atom list, H as the implicit+explicit sum.
ElementCounts formula_of(const MolGraph& g);

struct CanonicalOptions {
  bool keep_isotopes = true;
};

struct CanonicalResult {
  std::string smiles;
  std::vector<int> order;  // order[i] = output position of atom i
};

// Deterministic canonical SMILES via iterative neighborhood refinement
// with exhaustive tie-breaking (smallest string wins). Stereo markers are
// never part of the graph, so the output is stereo-stripped by definition.
CanonicalResult canonicalize_full(const MolGraph& g,
                                  const CanonicalOptions& opts = {});

std::string canonicalize(const MolGraph& g,
                         const CanonicalOptions& opts = {});

// Convenience: tokenize/parse/canonicalize; empty result means invalid.
std::string canonical_or_empty(const std::string& smiles);

// Heavy-element demand of emitting one decoder token; bracket explicit H
// contributes to the H entry. Structural tokens cost nothing.
ElementCounts token_atom_cost(const SmilesToken& t);

}  // namespace specnovo
