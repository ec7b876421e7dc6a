// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "specnovo/smiles.hpp"

namespace specnovo {

// Decoder vocabulary: specials plus every SMILES token text seen in the
// training corpus, sorted for determinism. Serialized into checkpoints.
class OutputVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  OutputVocab() = default;

  static OutputVocab from_corpus(const std::vector<std::string>& smiles_list);
  static OutputVocab from_tokens(const std::vector<std::string>& token_texts);

  int size() const { return static_cast<int>(texts_.size()); }
  const std::string& text(int id) const { return texts_[id]; }
  int id_of(const std::string& text) const;

  // Lexed token for non-special ids; nullopt for specials.
  const std::optional<SmilesToken>& info(int id) const { return infos_[id]; }

  // BOS ... EOS. Throws DomainError when a token is not in the vocabulary.
  std::vector<int> encode(const std::string& smiles) const;
  std::optional<std::vector<int>> try_encode(const std::string& smiles) const;

  // Concatenates token texts, skipping specials.
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& texts() const { return texts_; }

 private:
  void rebuild_index();

  std::vector<std::string> texts_;
  std::vector<std::optional<SmilesToken>> infos_;
  std::vector<std::pair<std::string, int>> index_;  // sorted text -> id
};

}  // namespace specnovo
