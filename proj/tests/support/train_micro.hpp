// SPDX-License-Identifier: Apache-2.0
//
// Tiny training harness shared by the decode/ttt/command tests: a micro
// model memorizing a handful of synthetic records in a few seconds.
#pragma once

#include <vector>

#include "specnovo/checkpoint.hpp"
#include "specnovo/spectra.hpp"
#include "specnovo/ttt.hpp"

namespace specnovo::testing {

struct MicroModel {
  TrainState state;
  OutputVocab vocab;
  InputVocab input_vocab;
  CandidatePool pool;
};

inline Batch pool_batch(const CandidatePool& pool,
                        const std::vector<std::size_t>& ids,
                        const ModelConfig& config) {
  int max_in = 1, max_tgt = 1;
  for (std::size_t id : ids) {
    max_in = std::max(max_in,
                      static_cast<int>(pool.entries[id].input.tokens.size()));
    max_tgt = std::max(max_tgt,
                       static_cast<int>(pool.entries[id].target_ids.size()));
  }
  Batch batch;
  batch.input_ids = IMat::Zero(static_cast<int>(ids.size()), max_in);
  batch.target_ids = IMat::Zero(static_cast<int>(ids.size()), max_tgt);
  batch.fingerprint_bits =
      Mat::Zero(static_cast<int>(ids.size()), config.fingerprint_width);
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const PoolEntry& e = pool.entries[ids[s]];
    for (std::size_t j = 0; j < e.input.tokens.size(); ++j) {
      batch.input_ids(static_cast<int>(s), static_cast<int>(j)) =
          e.input.tokens[j];
    }
    for (std::size_t j = 0; j < e.target_ids.size(); ++j) {
      batch.target_ids(static_cast<int>(s), static_cast<int>(j)) =
          e.target_ids[j];
    }
    batch.fingerprint_bits.row(static_cast<int>(s)) = e.fingerprint_bits;
  }
  return batch;
}

// Trains a dropout-free micro model on the records until the loss flattens
// or `steps` is reached. Vocabulary comes from the records plus `extra_smiles`
// (so held-out molecules stay decodable).
inline MicroModel train_micro(const std::vector<Record>& records, int steps,
                              std::uint64_t seed = 5,
                              const std::vector<std::string>& extra_smiles = {},
                              double lr = 3e-3) {
  MicroModel m;
  std::vector<std::string> corpus = extra_smiles;
  for (const Record& r : records) corpus.push_back(r.smiles);
  m.vocab = OutputVocab::from_corpus(corpus);
  ModelConfig config = ModelConfig::micro();
  config.d_model = 32;
  config.num_heads = 4;
  config.ffn_dim = 64;
  config.fingerprint_width = 64;
  config.max_len = 256;
  config.dropout = 0.0;
  config.input_vocab = m.input_vocab.size();
  config.output_vocab = m.vocab.size();
  m.state = init_train_state(config, seed);
  m.pool = build_pool(records, m.input_vocab, m.vocab, config, "train");

  std::vector<std::size_t> all(m.pool.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(seed);
  for (int step = 0; step < steps; ++step) {
    std::vector<std::size_t> ids = all;
    rng.shuffle(ids);
    if (ids.size() > 8) ids.resize(8);
    train_step(m.state, pool_batch(m.pool, ids, config), 1.0, lr);
  }
  return m;
}

}  // namespace specnovo::testing
