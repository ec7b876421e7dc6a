// SPDX-License-Identifier: Apache-2.0
#include "specnovo/vocab.hpp"

#include <algorithm>
#include <set>

#include "specnovo/errors.hpp"

namespace specnovo {

OutputVocab OutputVocab::from_corpus(
    const std::vector<std::string>& smiles_list) {
  std::set<std::string> seen;
  for (const std::string& s : smiles_list) {
    for (const SmilesToken& tok : tokenize_smiles(s)) {
      seen.insert(tok.text);
    }
  }
  return from_tokens(std::vector<std::string>(seen.begin(), seen.end()));
}

OutputVocab OutputVocab::from_tokens(
    const std::vector<std::string>& token_texts) {
  OutputVocab vocab;
  vocab.texts_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  vocab.infos_.assign(4, std::nullopt);
  std::vector<std::string> sorted = token_texts;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const std::string& text : sorted) {
    std::vector<SmilesToken> lexed = tokenize_smiles(text);
    if (lexed.size() != 1) {
      throw DomainError("vocabulary entry is not a single SMILES token: '" +
                        text + "'");
    }
    vocab.texts_.push_back(text);
    vocab.infos_.push_back(lexed[0]);
  }
  vocab.rebuild_index();
  return vocab;
}

void OutputVocab::rebuild_index() {
  index_.clear();
  for (int i = 0; i < size(); ++i) index_.emplace_back(texts_[i], i);
  std::sort(index_.begin(), index_.end());
}

int OutputVocab::id_of(const std::string& text) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), text,
      [](const std::pair<std::string, int>& p, const std::string& t) {
        return p.first < t;
      });
  if (it != index_.end() && it->first == text) return it->second;
  return -1;
}

std::vector<int> OutputVocab::encode(const std::string& smiles) const {
  auto ids = try_encode(smiles);
  if (!ids) {
    throw DomainError("SMILES contains tokens outside the vocabulary: " +
                      smiles);
  }
  return *ids;
}

std::optional<std::vector<int>> OutputVocab::try_encode(
    const std::string& smiles) const {
  std::vector<int> ids = {kBos};
  for (const SmilesToken& tok : tokenize_smiles(smiles)) {
    const int id = id_of(tok.text);
    if (id < 0) return std::nullopt;
    ids.push_back(id);
  }
  ids.push_back(kEos);
  return ids;
}

std::string OutputVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) {
      throw DomainError("token id out of vocabulary range: " +
                        std::to_string(id));
    }
    if (id <= kUnk) continue;
    out += texts_[id];
  }
  return out;
}

}  // namespace specnovo
