// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "specnovo/model.hpp"
#include "specnovo/spectra.hpp"
#include "specnovo/vocab.hpp"

namespace specnovo {

struct PoolEntry {
  Record record;
  InputSequence input;          // preprocessed + formatted
  std::vector<int> target_ids;  // BOS ... EOS
  Eigen::RowVectorXd fingerprint_bits;
  std::string canonical_smiles;
  std::uint64_t spectrum_hash;
  std::string source;
};

struct PoolManifest {
  std::map<std::string, std::size_t> accepted_by_source;
  std::size_t duplicates_dropped = 0;
  std::size_t invalid_dropped = 0;  // unparseable SMILES or unknown tokens
};

// Labeled candidate pool with a fingerprint-logit cache. The cache is only
// recomputed at refresh boundaries; cache_step records the model step the
// rows were embedded at.
struct CandidatePool {
  std::vector<PoolEntry> entries;
  Mat logits_cache;      // [size, fingerprint_width]
  long cache_step = -1;
  PoolManifest manifest;

  std::size_t size() const { return entries.size(); }
};

// Builds entries from labeled records: preprocess, format, encode targets,
// compute fingerprint bits. Records with SMILES outside the vocabulary or
// that fail to parse are dropped and counted. Deduplicates on
// (canonical SMILES, spectrum hash).
CandidatePool build_pool(const std::vector<Record>& records,
                         const InputVocab& input_vocab,
                         const OutputVocab& vocab, const ModelConfig& config,
                         const std::string& source_tag = "pool");

// Pool extension with the same dedup rule; manifest tracks both sources.
void extend_pool(CandidatePool& pool, const std::vector<Record>& records,
                 const InputVocab& input_vocab, const OutputVocab& vocab,
                 const ModelConfig& config, const std::string& source_tag);

// Fingerprint logits of a pool subset under the current parameters,
// dropout off. Row i corresponds to subset[i].
Mat embed_pool(const ModelParams& params, const CandidatePool& pool,
               const std::vector<std::size_t>& subset);

// Exact top-n by cosine similarity, ties broken by lower row index.
std::vector<std::size_t> select_neighbors(const Eigen::RowVectorXd& query,
                                          const Mat& pool_logits, int n);

// Lloyd's k-means with k-means++ seeding; returns member indices of the
// cluster whose centroid is most cosine-similar to the mean test vector.
std::vector<std::size_t> kmeans_preselect(const Mat& pool_logits,
                                          const Mat& test_logits, int k,
                                          int iters, std::uint64_t seed);

struct TttConfig {
  int test_points_per_iter = 4;
  int neighbors_per_point = 64;
  int refresh_interval = 10;
  int kmeans_k = 32;
  int kmeans_iters = 50;
  int patience = 50;
  int max_updates = 200;
  double lambda = 1.0;
  std::size_t preselect_threshold = 10000;
  std::uint64_t seed = 1;
  std::optional<double> lr_override;
};

struct TttUpdate {
  long step = 0;
  long cache_step = 0;  // model step the pool cache was embedded at
  std::vector<std::size_t> test_ids;
  std::vector<std::size_t> selected_ids;
  std::vector<std::size_t> new_ids;
  std::size_t cum_selected = 0;
  std::size_t batch_size = 0;
  double ce = 0.0;
  double bce = 0.0;
  double lr = 0.0;
  int cluster = -1;  // -1 = exact mode (no pre-selection)
};

struct TttTrace {
  std::vector<TttUpdate> updates;
  std::string stop_reason;  // "saturated" or "max_updates"
  bool neighbors_clamped = false;
};

// One adaptation update: neighbors of each test point are selected from
// the working subset, their union forms the batch, and a single train
// step runs at the ttt schedule. Returns the selected absolute pool ids.
std::vector<std::size_t> ttt_step(TrainState& state, CandidatePool& pool,
                                  const std::vector<std::size_t>& working,
                                  const std::vector<Record>& test,
                                  const std::vector<std::size_t>& test_ids,
                                  const InputVocab& input_vocab,
                                  const TttConfig& cfg, Losses* losses_out);

// Full loop: pre-selection when the pool exceeds the threshold, cache
// refresh every refresh_interval updates, stop on selected-set saturation
// (patience) or max_updates.
TttTrace ttt_run(TrainState& state, CandidatePool& pool,
                 const std::vector<Record>& test,
                 const InputVocab& input_vocab, const TttConfig& cfg);

void save_trace(const TttTrace& trace, const std::string& path);
void save_manifest(const PoolManifest& manifest, const std::string& path);

}  // namespace specnovo
