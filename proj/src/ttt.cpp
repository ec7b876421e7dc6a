// SPDX-License-Identifier: Apache-2.0
#include "specnovo/ttt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "specnovo/errors.hpp"
#include "specnovo/fingerprint.hpp"

namespace specnovo {

using nlohmann::json;

namespace {

std::optional<PoolEntry> make_entry(const Record& record,
                                    const InputVocab& input_vocab,
                                    const OutputVocab& vocab,
                                    const ModelConfig& config,
                                    const std::string& source_tag) {
  PoolEntry entry;
  entry.record = record;
  entry.source = source_tag;
  try {
    const Spectrum prepared = preprocess_spectrum(record.spectrum);
    entry.input = format_input(prepared, record.formula, input_vocab);
    const MolGraph g = parse_smiles(tokenize_smiles(record.smiles));
    entry.canonical_smiles = canonicalize(g);
    const Fingerprint fp = fingerprint(g, config.fingerprint_width);
    entry.fingerprint_bits.resize(config.fingerprint_width);
    for (int j = 0; j < config.fingerprint_width; ++j) {
      entry.fingerprint_bits(j) = fp.test(j) ? 1.0 : 0.0;
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  auto target = vocab.try_encode(record.smiles);
  if (!target) return std::nullopt;
  entry.target_ids = std::move(*target);
  std::vector<std::uint8_t> bytes(entry.input.raw.begin(),
                                  entry.input.raw.end());
  entry.spectrum_hash = fnv1a(bytes);
  return entry;
}

void add_records(CandidatePool& pool, const std::vector<Record>& records,
                 const InputVocab& input_vocab, const OutputVocab& vocab,
                 const ModelConfig& config, const std::string& source_tag) {
  std::set<std::pair<std::string, std::uint64_t>> keys;
  for (const PoolEntry& e : pool.entries) {
    keys.insert({e.canonical_smiles, e.spectrum_hash});
  }
  for (const Record& r : records) {
    if (r.smiles.empty()) {
      ++pool.manifest.invalid_dropped;
      continue;
    }
    auto entry = make_entry(r, input_vocab, vocab, config, source_tag);
    if (!entry) {
      ++pool.manifest.invalid_dropped;
      continue;
    }
    const std::pair<std::string, std::uint64_t> key{entry->canonical_smiles,
                                                    entry->spectrum_hash};
    if (keys.count(key)) {
      ++pool.manifest.duplicates_dropped;
      continue;
    }
    keys.insert(key);
    pool.entries.push_back(std::move(*entry));
    ++pool.manifest.accepted_by_source[source_tag];
  }
  pool.cache_step = -1;  // entries changed, cache invalid
}

Batch batch_from_entries(const CandidatePool& pool,
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
  const int b = static_cast<int>(ids.size());
  batch.input_ids = IMat::Zero(b, max_in);
  batch.target_ids = IMat::Zero(b, max_tgt);
  batch.fingerprint_bits = Mat::Zero(b, config.fingerprint_width);
  for (int s = 0; s < b; ++s) {
    const PoolEntry& e = pool.entries[ids[s]];
    for (std::size_t j = 0; j < e.input.tokens.size(); ++j) {
      batch.input_ids(s, static_cast<int>(j)) = e.input.tokens[j];
    }
    for (std::size_t j = 0; j < e.target_ids.size(); ++j) {
      batch.target_ids(s, static_cast<int>(j)) = e.target_ids[j];
    }
    batch.fingerprint_bits.row(s) = e.fingerprint_bits;
  }
  return batch;
}

Eigen::RowVectorXd embed_record(const ModelParams& params,
                                const InputVocab& input_vocab,
                                const Record& record) {
  const Spectrum prepared = preprocess_spectrum(record.spectrum);
  const InputSequence input =
      format_input(prepared, record.formula, input_vocab);
  return encode_input(params, input.tokens).fp_logits;
}

}  // namespace

CandidatePool build_pool(const std::vector<Record>& records,
                         const InputVocab& input_vocab,
                         const OutputVocab& vocab, const ModelConfig& config,
                         const std::string& source_tag) {
  CandidatePool pool;
  add_records(pool, records, input_vocab, vocab, config, source_tag);
  return pool;
}

void extend_pool(CandidatePool& pool, const std::vector<Record>& records,
                 const InputVocab& input_vocab, const OutputVocab& vocab,
                 const ModelConfig& config, const std::string& source_tag) {
  add_records(pool, records, input_vocab, vocab, config, source_tag);
}

Mat embed_pool(const ModelParams& params, const CandidatePool& pool,
               const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw DomainError("embed_pool: empty subset");
  Mat out(static_cast<int>(subset.size()), params.config.fingerprint_width);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    out.row(static_cast<int>(i)) =
        encode_input(params, pool.entries[subset[i]].input.tokens).fp_logits;
  }
  return out;
}

std::vector<std::size_t> select_neighbors(const Eigen::RowVectorXd& query,
                                          const Mat& pool_logits, int n) {
  const int rows = static_cast<int>(pool_logits.rows());
  if (n < 1 || n > rows) {
    throw DomainError("select_neighbors: n out of range");
  }
  const double qnorm = query.norm();
  if (qnorm == 0.0) throw NumericsError("select_neighbors: zero-norm query");
  std::vector<std::pair<double, std::size_t>> scored(rows);
  for (int i = 0; i < rows; ++i) {
    const double rnorm = pool_logits.row(i).norm();
    if (rnorm == 0.0) {
      throw NumericsError("select_neighbors: zero-norm pool row " +
                          std::to_string(i));
    }
    scored[i] = {query.dot(pool_logits.row(i)) / (qnorm * rnorm), i};
  }
  std::partial_sort(scored.begin(), scored.begin() + n, scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  std::vector<std::size_t> out(n);
  for (int i = 0; i < n; ++i) out[i] = scored[i].second;
  return out;
}

std::vector<std::size_t> kmeans_preselect(const Mat& pool_logits,
                                          const Mat& test_logits, int k,
                                          int iters, std::uint64_t seed) {
  const int rows = static_cast<int>(pool_logits.rows());
  if (k < 1 || k > rows) throw DomainError("kmeans_preselect: k out of range");

  Rng rng(seed);
  // k-means++ seeding.
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng.index(rows)));
  std::vector<double> dist2(rows, 0.0);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int c : centers) {
        best = std::min(best,
                        (pool_logits.row(i) - pool_logits.row(c)).squaredNorm());
      }
      dist2[i] = best;
      total += best;
    }
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.index(rows));
    } else {
      double r = rng.uniform() * total;
      pick = rows - 1;
      for (int i = 0; i < rows; ++i) {
        r -= dist2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
  }

  Mat centroids(k, pool_logits.cols());
  for (int c = 0; c < k; ++c) centroids.row(c) = pool_logits.row(centers[c]);
  std::vector<int> assign(rows, 0);

  for (int iter = 0; iter < iters; ++iter) {
    for (int i = 0; i < rows; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double d = (pool_logits.row(i) - centroids.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    Mat next = Mat::Zero(k, pool_logits.cols());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < rows; ++i) {
      next.row(assign[i]) += pool_logits.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= static_cast<double>(counts[c]);
      } else {
        // Re-seed an empty cluster to the point farthest from its centroid.
        int farthest = 0;
        double best = -1.0;
        for (int i = 0; i < rows; ++i) {
          const double d =
              (pool_logits.row(i) - centroids.row(assign[i])).squaredNorm();
          if (d > best) {
            best = d;
            farthest = i;
          }
        }
        next.row(c) = pool_logits.row(farthest);
      }
    }
    const double movement = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    if (movement < 1e-6) break;
  }

  // Final assignment against the converged centroids.
  for (int i = 0; i < rows; ++i) {
    double best = std::numeric_limits<double>::max();
    for (int c = 0; c < k; ++c) {
      const double d = (pool_logits.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        assign[i] = c;
      }
    }
  }

  const Eigen::RowVectorXd test_mean = test_logits.colwise().mean();
  const double tnorm = test_mean.norm();
  int best_cluster = 0;
  double best_sim = -2.0;
  for (int c = 0; c < k; ++c) {
    const double cnorm = centroids.row(c).norm();
    double sim = 0.0;
    if (tnorm > 0.0 && cnorm > 0.0) {
      sim = centroids.row(c).dot(test_mean) / (cnorm * tnorm);
    }
    if (sim > best_sim) {
      best_sim = sim;
      best_cluster = c;
    }
  }
  std::vector<std::size_t> members;
  for (int i = 0; i < rows; ++i) {
    if (assign[i] == best_cluster) members.push_back(i);
  }
  if (members.empty()) {
    // Unreachable: empty clusters are re-seeded during Lloyd iterations.
    throw NumericsError("kmeans_preselect produced an empty selection");
  }
  return members;
}

std::vector<std::size_t> ttt_step(TrainState& state, CandidatePool& pool,
                                  const std::vector<std::size_t>& working,
                                  const std::vector<Record>& test,
                                  const std::vector<std::size_t>& test_ids,
                                  const InputVocab& input_vocab,
                                  const TttConfig& cfg, Losses* losses_out) {
  if (pool.cache_step < 0) {
    throw DomainError("ttt_step: pool cache not built");
  }
  const int n = std::min<int>(cfg.neighbors_per_point,
                              static_cast<int>(working.size()));
  // Working-subset rows of the cached logits.
  Mat working_logits(static_cast<int>(working.size()),
                     pool.logits_cache.cols());
  for (std::size_t i = 0; i < working.size(); ++i) {
    working_logits.row(static_cast<int>(i)) =
        pool.logits_cache.row(static_cast<int>(working[i]));
  }

  std::set<std::size_t> selected;
  for (std::size_t test_id : test_ids) {
    const Eigen::RowVectorXd query =
        embed_record(state.params, input_vocab, test[test_id]);
    for (std::size_t rel : select_neighbors(query, working_logits, n)) {
      selected.insert(working[rel]);
    }
  }
  const std::vector<std::size_t> ids(selected.begin(), selected.end());
  const Batch batch = batch_from_entries(pool, ids, state.params.config);
  const Losses losses =
      train_step(state, batch, cfg.lambda, cfg.lr_override);
  if (losses_out) *losses_out = losses;
  return ids;
}

TttTrace ttt_run(TrainState& state, CandidatePool& pool,
                 const std::vector<Record>& test,
                 const InputVocab& input_vocab, const TttConfig& cfg) {
  if (pool.entries.empty()) throw DomainError("ttt_run: empty pool");
  if (test.empty()) throw DomainError("ttt_run: empty test set");

  TttTrace trace;
  if (cfg.neighbors_per_point > static_cast<int>(pool.size())) {
    trace.neighbors_clamped = true;
  }

  std::vector<std::size_t> all_ids(pool.size());
  for (std::size_t i = 0; i < all_ids.size(); ++i) all_ids[i] = i;
  const bool preselect = pool.size() > cfg.preselect_threshold;

  Rng rng(cfg.seed);
  std::vector<std::size_t> working = all_ids;
  int cluster = -1;

  auto refresh = [&]() {
    pool.logits_cache = embed_pool(state.params, pool, all_ids);
    pool.cache_step = state.step;
    if (preselect) {
      Mat test_logits(static_cast<int>(test.size()),
                      state.params.config.fingerprint_width);
      for (std::size_t i = 0; i < test.size(); ++i) {
        test_logits.row(static_cast<int>(i)) =
            embed_record(state.params, input_vocab, test[i]);
      }
      working = kmeans_preselect(pool.logits_cache, test_logits, cfg.kmeans_k,
                                 cfg.kmeans_iters, cfg.seed);
      // Cluster ids are positions in the selection call; expose the size
      // as the identifying detail alongside a stable id.
      cluster = static_cast<int>(working.size());
    }
  };
  refresh();

  std::set<std::size_t> cumulative;
  int stagnant = 0;
  for (int update = 0; update < cfg.max_updates; ++update) {
    if (update > 0 && update % cfg.refresh_interval == 0) refresh();
    state.epoch = update;

    const std::size_t picks = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.test_points_per_iter), test.size());
    std::vector<std::size_t> test_ids =
        rng.sample_without_replacement(test.size(), picks);

    Losses losses;
    const std::vector<std::size_t> selected =
        ttt_step(state, pool, working, test, test_ids, input_vocab, cfg,
                 &losses);

    TttUpdate u;
    u.step = state.step;
    u.cache_step = pool.cache_step;
    u.test_ids = test_ids;
    u.selected_ids = selected;
    for (std::size_t id : selected) {
      if (!cumulative.count(id)) u.new_ids.push_back(id);
    }
    cumulative.insert(selected.begin(), selected.end());
    u.cum_selected = cumulative.size();
    u.batch_size = selected.size();
    u.ce = losses.ce;
    u.bce = losses.bce;
    u.lr = state.lr;
    u.cluster = preselect ? cluster : -1;
    trace.updates.push_back(std::move(u));

    if (trace.updates.back().new_ids.empty()) {
      ++stagnant;
    } else {
      stagnant = 0;
    }
    if (stagnant >= cfg.patience) {
      trace.stop_reason = "saturated";
      return trace;
    }
  }
  trace.stop_reason = "max_updates";
  return trace;
}

void save_trace(const TttTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace: " + path);
  for (const TttUpdate& u : trace.updates) {
    json j;
    j["step"] = u.step;
    j["cache_step"] = u.cache_step;
    j["test_ids"] = u.test_ids;
    j["selected_ids"] = u.selected_ids;
    j["new_ids"] = u.new_ids;
    j["cum_selected"] = u.cum_selected;
    j["batch_size"] = u.batch_size;
    j["ce"] = u.ce;
    j["bce"] = u.bce;
    j["lr"] = u.lr;
    j["cluster"] = u.cluster;
    out << j.dump() << '\n';
  }
  json final_record;
  final_record["stop_reason"] = trace.stop_reason;
  final_record["updates"] = trace.updates.size();
  final_record["neighbors_clamped"] = trace.neighbors_clamped;
  out << final_record.dump() << '\n';
}

void save_manifest(const PoolManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  json j;
  j["accepted_by_source"] = manifest.accepted_by_source;
  j["duplicates_dropped"] = manifest.duplicates_dropped;
  j["invalid_dropped"] = manifest.invalid_dropped;
  out << j.dump(2) << '\n';
}

}  // namespace specnovo
