// SPDX-License-Identifier: Apache-2.0
#include "specnovo/fingerprint.hpp"

#include <bit>

#include "specnovo/errors.hpp"

namespace specnovo {

Fingerprint::Fingerprint(int width) : width_(width), popcount_(0) {
  if (width <= 0 || (width & (width - 1)) != 0) {
    throw DomainError("fingerprint width must be a positive power of two");
  }
  words_.resize(static_cast<std::size_t>(width + 63) / 64, 0);
}

bool Fingerprint::test(int bit) const {
  return (words_[bit >> 6] >> (bit & 63)) & 1u;
}

void Fingerprint::set(int bit) {
  std::uint64_t& word = words_[bit >> 6];
  const std::uint64_t mask = std::uint64_t{1} << (bit & 63);
  if (!(word & mask)) {
    word |= mask;
    ++popcount_;
  }
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 1099511628211ull;
  }
  return hash;
}

namespace {

// One byte per atom: element index in the low bits, aromatic flag on top.
std::uint8_t atom_code(const Atom& a) {
  return static_cast<std::uint8_t>(static_cast<int>(a.element) |
                                   (a.aromatic ? 0x80 : 0));
}

std::uint8_t bond_code(BondOrder order) {
  return static_cast<std::uint8_t>(order);
}

}  // namespace

std::vector<std::uint8_t> encode_path(const MolGraph& g,
                                      const std::vector<int>& atom_seq) {
  // Bond order lookup along consecutive atoms.
  auto order_between = [&g](int a, int b) {
    for (const Bond& bond : g.bonds) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) {
        return bond.order;
      }
    }
    throw DomainError("encode_path: atoms are not bonded");
  };
  auto encode_dir = [&](bool reversed) {
    std::vector<std::uint8_t> out;
    out.reserve(atom_seq.size() * 2);
    const int n = static_cast<int>(atom_seq.size());
    for (int i = 0; i < n; ++i) {
      const int idx = reversed ? n - 1 - i : i;
      out.push_back(atom_code(g.atoms[atom_seq[idx]]));
      if (i + 1 < n) {
        const int next = reversed ? n - 2 - i : i + 1;
        out.push_back(bond_code(order_between(atom_seq[idx], atom_seq[next])));
      }
    }
    return out;
  };
  std::vector<std::uint8_t> fwd = encode_dir(false);
  std::vector<std::uint8_t> rev = encode_dir(true);
  return fwd <= rev ? fwd : rev;
}

Fingerprint fingerprint(const MolGraph& g, int width, int max_path_len) {
  Fingerprint fp(width);
  const auto adj = g.adjacency();
  std::vector<int> path;
  std::vector<bool> on_path(g.atoms.size(), false);

  // DFS over simple paths starting at each atom; each undirected path is
  // visited twice and deduplicated by the direction-normalized encoding.
  auto extend = [&](auto&& self, int atom) -> void {
    path.push_back(atom);
    on_path[atom] = true;
    fp.set(static_cast<int>(fnv1a(encode_path(g, path)) %
                            static_cast<std::uint64_t>(width)));
    if (static_cast<int>(path.size()) <= max_path_len) {
      for (int bond_idx : adj[atom]) {
        const Bond& b = g.bonds[bond_idx];
        const int nbr = b.a == atom ? b.b : b.a;
        if (!on_path[nbr]) self(self, nbr);
      }
    }
    on_path[atom] = false;
    path.pop_back();
  };
  for (int i = 0; i < g.num_atoms(); ++i) extend(extend, i);
  return fp;
}

}  // namespace specnovo
