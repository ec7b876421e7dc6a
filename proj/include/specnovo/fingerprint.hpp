// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "specnovo/smiles.hpp"

namespace specnovo {

// Hashed linear-path fingerprint. Bits are set for every simple path of
// 0..max_path_len bonds, encoded in its lexicographically smaller
// direction and hashed with 64-bit FNV-1a.
class Fingerprint {
 public:
  explicit Fingerprint(int width = 2048);

  int width() const { return width_; }
  int popcount() const { return popcount_; }

  bool test(int bit) const;
  void set(int bit);

  const std::vector<std::uint64_t>& words() const { return words_; }

  bool operator==(const Fingerprint& other) const {
    return width_ == other.width_ && words_ == other.words_;
  }

 private:
  int width_;
  int popcount_;
  std::vector<std::uint64_t> words_;
};

inline constexpr int kDefaultFingerprintWidth = 2048;
inline constexpr int kMaxPathLength = 7;

// FNV-1a over a byte sequence; exposed so tests can share the definition.
std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes);

// Byte encoding of one path given as alternating atoms and bond codes;
// chooses the smaller of the two read directions.
std::vector<std::uint8_t> encode_path(const MolGraph& g,
                                      const std::vector<int>& atom_seq);

Fingerprint fingerprint(const MolGraph& g,
                        int width = kDefaultFingerprintWidth,
                        int max_path_len = kMaxPathLength);

}  // namespace specnovo
