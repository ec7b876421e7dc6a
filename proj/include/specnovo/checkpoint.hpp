// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "specnovo/model.hpp"
#include "specnovo/vocab.hpp"

namespace specnovo {

// Versioned binary checkpoint: magic + JSON header (config, vocabularies,
// counters) + named little-endian float64 tensors with shape headers.
// Round-trips the full TrainState bit-exactly, optimizer moments included.

struct LoadedCheckpoint {
  TrainState state;
  OutputVocab vocab;
};

void save_checkpoint(const TrainState& state, const OutputVocab& vocab,
                     const std::string& path);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace specnovo
