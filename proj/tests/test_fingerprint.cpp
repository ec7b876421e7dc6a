// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "specnovo/fingerprint.hpp"
#include "specnovo/rng.hpp"
#include "support/oracles.hpp"
#include "support/synth.hpp"

using namespace specnovo;

TEST_CASE("single atom sets exactly one bit") {
  const Fingerprint fp = fingerprint(parse_smiles("C"));
  CHECK(fp.popcount() == 1);
}

TEST_CASE("traversal order does not change the fingerprint") {
  CHECK(fingerprint(parse_smiles("CCO")) == fingerprint(parse_smiles("OCC")));
  CHECK(fingerprint(parse_smiles("C(C)O")) ==
        fingerprint(parse_smiles("CCO")));
}

TEST_CASE("atom relabeling does not change the fingerprint") {
  Rng rng(5);
  for (const std::string& smiles : synth::small_molecules()) {
    const MolGraph g = parse_smiles(smiles);
    std::vector<int> perm(g.num_atoms());
    for (int i = 0; i < g.num_atoms(); ++i) perm[i] = i;
    rng.shuffle(perm);
    CHECK(fingerprint(g) == fingerprint(oracle::permute_graph(g, perm)));
  }
}

TEST_CASE("CCO bits match the hand-enumerated path set") {
  // Paths: 3 of length 0, 2 of length 1, 1 of length 2; six encodings,
  // at most 6 bits before collisions.
  const MolGraph g = parse_smiles("CCO");
  const Fingerprint fp = fingerprint(g, 2048);
  const std::set<int> expected = oracle::fingerprint_bits(g, 2048);
  CHECK(expected.size() <= 6);
  CHECK(fp.popcount() == static_cast<int>(expected.size()));
  for (int bit : expected) CHECK(fp.test(bit));
}

TEST_CASE("fingerprints match the path-enumeration oracle exactly") {
  for (const std::string& smiles : synth::small_molecules()) {
    const MolGraph g = parse_smiles(smiles);
    if (g.num_atoms() > 10) continue;
    CAPTURE(smiles);
    const Fingerprint fp = fingerprint(g, 2048);
    const std::set<int> bits = oracle::fingerprint_bits(g, 2048);
    CHECK(fp.popcount() == static_cast<int>(bits.size()));
    for (int bit : bits) CHECK(fp.test(bit));
  }
}

TEST_CASE("fingerprint width must be a power of two") {
  CHECK_THROWS(fingerprint(parse_smiles("C"), 100));
  CHECK_NOTHROW(fingerprint(parse_smiles("C"), 128));
}
