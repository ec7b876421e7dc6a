// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "specnovo/smiles.hpp"

namespace specnovo {

inline constexpr int kMcesExactAtomLimit = 20;

// Maximum-common-edge-subgraph distance: w(E1) + w(E2) - 2*w(MCES), with
// edge weight equal to bond order (aromatic 1.5). An edge is common when
// both endpoint elements and the bond order match. Exact branch-and-bound
// over partial node maps; with `bound` set, the search may stop once it
// proves d >= bound and return bound (myopic mode). Graphs larger than
// `exact_atom_limit` heavy atoms require a bound.
double mces_distance(const MolGraph& g1, const MolGraph& g2,
                     std::optional<double> bound = std::nullopt,
                     int exact_atom_limit = kMcesExactAtomLimit);

}  // namespace specnovo
