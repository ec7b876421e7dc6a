// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. They restate
// the definitions from scratch (own path enumeration, own hash, own
// exhaustive subgraph search) so the production code is checked against a
// second route, not against itself.
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "specnovo/smiles.hpp"

namespace specnovo::oracle {

// --- Path-enumeration fingerprint -----------------------------------------

inline std::uint64_t fnv1a_bytes(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::uint8_t b : bytes) {
    h = (h ^ b) * 1099511628211ull;
  }
  return h;
}

// All simple paths with 0..max_len bonds, as vertex index sequences.
// Grown breadth-first from every start vertex, no shared state with the
// production DFS.
inline std::vector<std::vector<int>> all_simple_paths(const MolGraph& g,
                                                      int max_len) {
  std::vector<std::vector<std::pair<int, int>>> nbrs(g.atoms.size());
  for (const Bond& b : g.bonds) {
    nbrs[b.a].push_back({b.b, static_cast<int>(b.order)});
    nbrs[b.b].push_back({b.a, static_cast<int>(b.order)});
  }
  std::vector<std::vector<int>> result;
  std::vector<std::vector<int>> frontier;
  for (int v = 0; v < g.num_atoms(); ++v) frontier.push_back({v});
  for (int len = 0; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const std::vector<int>& path : frontier) {
      result.push_back(path);
      for (const auto& [nbr, order] : nbrs[path.back()]) {
        if (std::find(path.begin(), path.end(), nbr) == path.end()) {
          std::vector<int> grown = path;
          grown.push_back(nbr);
          next.push_back(std::move(grown));
        }
      }
    }
    frontier = std::move(next);
  }
  return result;
}

inline std::vector<std::uint8_t> encode_path_bytes(
    const MolGraph& g, const std::vector<int>& path) {
  auto order_of = [&g](int a, int b) -> int {
    for (const Bond& bond : g.bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) {
        return static_cast<int>(bond.order);
      }
    }
    return 0;
  };
  auto one_direction = [&](const std::vector<int>& seq) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Atom& a = g.atoms[seq[i]];
      bytes.push_back(static_cast<std::uint8_t>(
          static_cast<int>(a.element) | (a.aromatic ? 0x80 : 0)));
      if (i + 1 < seq.size()) {
        bytes.push_back(static_cast<std::uint8_t>(order_of(seq[i], seq[i + 1])));
      }
    }
    return bytes;
  };
  std::vector<int> reversed(path.rbegin(), path.rend());
  std::vector<std::uint8_t> fwd = one_direction(path);
  std::vector<std::uint8_t> rev = one_direction(reversed);
  return std::min(fwd, rev);
}

// Bit indices the hashed-path fingerprint must contain.
inline std::set<int> fingerprint_bits(const MolGraph& g, int width,
                                      int max_len = 7) {
  std::set<int> bits;
  for (const std::vector<int>& path : all_simple_paths(g, max_len)) {
    bits.insert(static_cast<int>(fnv1a_bytes(encode_path_bytes(g, path)) %
                                 static_cast<std::uint64_t>(width)));
  }
  return bits;
}

inline double tanimoto_of_sets(const std::set<int>& a, const std::set<int>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (int x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// --- Exhaustive maximum common edge subgraph -------------------------------

inline double mces_bond_weight(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return 1.0;
    case BondOrder::Double: return 2.0;
    case BondOrder::Triple: return 3.0;
    case BondOrder::Aromatic: return 1.5;
  }
  return 1.0;
}

// Enumerates every injective node map (including partial ones) without
// any pruning and records the best common edge weight.
inline double mces_distance_exhaustive(const MolGraph& g1, const MolGraph& g2) {
  const int n1 = g1.num_atoms();
  const int n2 = g2.num_atoms();
  std::vector<int> map12(n1, -1);
  std::vector<bool> used(n2, false);
  double best = 0.0;

  auto common_weight = [&]() {
    double w = 0.0;
    for (const Bond& b : g1.bonds) {
      const int ma = map12[b.a];
      const int mb = map12[b.b];
      if (ma < 0 || mb < 0) continue;
      for (const Bond& b2 : g2.bonds) {
        if (((b2.a == ma && b2.b == mb) || (b2.a == mb && b2.b == ma)) &&
            b2.order == b.order) {
          w += mces_bond_weight(b.order);
          break;
        }
      }
    }
    return w;
  };

  auto rec = [&](auto&& self, int u) -> void {
    if (u == n1) {
      best = std::max(best, common_weight());
      return;
    }
    self(self, u + 1);  // u unmapped
    for (int w = 0; w < n2; ++w) {
      if (used[w] || g2.atoms[w].element != g1.atoms[u].element) continue;
      map12[u] = w;
      used[w] = true;
      self(self, u + 1);
      used[w] = false;
      map12[u] = -1;
    }
  };
  rec(rec, 0);

  double w1 = 0.0, w2 = 0.0;
  for (const Bond& b : g1.bonds) w1 += mces_bond_weight(b.order);
  for (const Bond& b : g2.bonds) w2 += mces_bond_weight(b.order);
  return w1 + w2 - 2.0 * best;
}

// --- Backtracking graph isomorphism ----------------------------------------

inline bool isomorphic(const MolGraph& g1, const MolGraph& g2) {
  const int n = g1.num_atoms();
  if (n != g2.num_atoms() || g1.bonds.size() != g2.bonds.size()) return false;

  auto edge_order = [](const MolGraph& g, int a, int b) -> int {
    for (const Bond& bond : g.bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) {
        return static_cast<int>(bond.order);
      }
    }
    return 0;
  };
  auto atoms_compatible = [&](int a, int b) {
    const Atom& x = g1.atoms[a];
    const Atom& y = g2.atoms[b];
    return x.element == y.element && x.aromatic == y.aromatic &&
           x.charge == y.charge && x.total_h() == y.total_h();
  };

  std::vector<int> map12(n, -1);
  std::vector<bool> used(n, false);
  auto rec = [&](auto&& self, int u) -> bool {
    if (u == n) return true;
    for (int w = 0; w < n; ++w) {
      if (used[w] || !atoms_compatible(u, w)) continue;
      bool ok = true;
      for (int prev = 0; prev < u; ++prev) {
        if (edge_order(g1, u, prev) != edge_order(g2, w, map12[prev])) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      map12[u] = w;
      used[w] = true;
      if (self(self, u + 1)) return true;
      used[w] = false;
      map12[u] = -1;
    }
    return false;
  };
  return rec(rec, 0);
}

// Relabels atoms with a permutation; bonds and stereo metadata follow.
inline MolGraph permute_graph(const MolGraph& g, const std::vector<int>& perm) {
  MolGraph out;
  out.atoms.resize(g.atoms.size());
  for (int i = 0; i < g.num_atoms(); ++i) out.atoms[perm[i]] = g.atoms[i];
  for (const Bond& b : g.bonds) {
    out.bonds.push_back(Bond{perm[b.a], perm[b.b], b.order});
  }
  return out;
}

}  // namespace specnovo::oracle
