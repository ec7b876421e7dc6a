// SPDX-License-Identifier: Apache-2.0
#include "specnovo/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "specnovo/checkpoint.hpp"
#include "specnovo/decode.hpp"
#include "specnovo/errors.hpp"
#include "specnovo/metrics.hpp"

namespace specnovo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ModelConfig preset_config(const RunConfig& config) {
  ModelConfig mc;
  if (config.preset == "toy") {
    mc = ModelConfig::toy();
  } else if (config.preset == "paper") {
    mc = ModelConfig::paper();
  } else if (config.preset == "micro") {
    mc = ModelConfig::micro();
  } else {
    throw DomainError("unknown preset '" + config.preset + "'");
  }
  if (config.fingerprint_width > 0) {
    mc.fingerprint_width = config.fingerprint_width;
  }
  return mc;
}

void ensure_out_dir(const RunConfig& config) {
  fs::create_directories(config.out_dir);
}

std::string out_path(const RunConfig& config, const std::string& name) {
  return (fs::path(config.out_dir) / name).string();
}

// Deterministic record-index batches of size batch_size.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n;
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Batch batch_of(const CandidatePool& pool, const std::vector<std::size_t>& ids,
               const ModelConfig& config) {
  // Same layout the TTT engine uses; kept here for training loops.
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

}  // namespace

std::string config_to_text(const RunConfig& c) {
  std::ostringstream out;
  out << "version = " << kVersionString << "\n";
  out << "command = " << c.command << "\n";
  out << "preset = " << c.preset << "\n";
  out << "seed = " << c.seed << "\n";
  out << "k = " << c.k << "\n";
  out << "beam = " << c.beam << "\n";
  out << "lambda = " << c.lambda << "\n";
  out << "workers = " << c.workers << "\n";
  out << "fingerprint_width = " << c.fingerprint_width << "\n";
  out << "data = " << c.data_path << "\n";
  out << "val = " << c.val_path << "\n";
  out << "checkpoint = " << c.checkpoint_in << "\n";
  out << "out_dir = " << c.out_dir << "\n";
  out << "pool = " << c.pool_path << "\n";
  for (const std::string& p : c.extend_pool) out << "extend_pool = " << p << "\n";
  out << "test = " << c.test_path << "\n";
  out << "predictions = " << c.predictions_path << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "max_steps = " << c.max_steps << "\n";
  out << "early_stop_patience = " << c.early_stop_patience << "\n";
  out << "phase = " << c.phase << "\n";
  out << "ttt.test_points_per_iter = " << c.ttt.test_points_per_iter << "\n";
  out << "ttt.neighbors_per_point = " << c.ttt.neighbors_per_point << "\n";
  out << "ttt.refresh_interval = " << c.ttt.refresh_interval << "\n";
  out << "ttt.kmeans_k = " << c.ttt.kmeans_k << "\n";
  out << "ttt.patience = " << c.ttt.patience << "\n";
  out << "ttt.max_updates = " << c.ttt.max_updates << "\n";
  out << "ttt.preselect_threshold = " << c.ttt.preselect_threshold << "\n";
  if (c.lr_override) out << "lr_override = " << *c.lr_override << "\n";
  out << "peak_threshold = " << c.peak_threshold << "\n";
  out << "peak_cap = " << c.peak_cap << "\n";
  out << "stereo_aware = " << (c.stereo_aware ? 1 : 0) << "\n";
  out << "mces_topk_mean = " << (c.mces_topk_mean ? 1 : 0) << "\n";
  out << "mces_bound = " << c.mces_bound << "\n";
  return out.str();
}

void write_frozen_config(const RunConfig& config) {
  ensure_out_dir(config);
  std::ofstream out(out_path(config, "run_config.txt"));
  if (!out) throw IoError("cannot write frozen config");
  out << config_to_text(config);
}

int run_train(const RunConfig& config) {
  write_frozen_config(config);
  const std::vector<Record> records = load_jsonl(config.data_path);
  if (records.empty()) throw ParseError("training set is empty: " + config.data_path);
  std::vector<Record> val;
  if (!config.val_path.empty()) val = load_jsonl(config.val_path);

  const InputVocab input_vocab;
  TrainState state;
  OutputVocab vocab;
  if (!config.checkpoint_in.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(config.checkpoint_in);
    state = std::move(loaded.state);
    vocab = std::move(loaded.vocab);
    state.phase = phase_from_string(config.phase);
  } else {
    std::vector<std::string> corpus;
    for (const Record& r : records) {
      if (!r.smiles.empty()) corpus.push_back(r.smiles);
    }
    vocab = OutputVocab::from_corpus(corpus);
    ModelConfig mc = preset_config(config);
    mc.input_vocab = input_vocab.size();
    mc.output_vocab = vocab.size();
    state = init_train_state(mc, config.seed, phase_from_string(config.phase));
  }

  CandidatePool train_pool =
      build_pool(records, input_vocab, vocab, state.params.config, "train");
  if (train_pool.entries.empty()) {
    throw ParseError("no trainable records in " + config.data_path);
  }
  CandidatePool val_pool;
  if (!val.empty()) {
    val_pool = build_pool(val, input_vocab, vocab, state.params.config, "val");
  }

  std::ofstream log(out_path(config, "train_log.jsonl"));
  Rng order_rng(config.seed ^ 0x5eedULL);
  double best_val_acc = -1.0;
  int epochs_since_best = 0;
  bool stop = false;
  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    state.epoch = epoch;
    for (const auto& ids :
         make_batches(train_pool.size(), config.batch_size, order_rng)) {
      const Batch batch = batch_of(train_pool, ids, state.params.config);
      const Losses losses = train_step(state, batch, config.lambda,
                                       config.lr_override);
      json j;
      j["step"] = state.step;
      j["lr"] = state.lr;
      j["ce"] = losses.ce;
      j["bce"] = losses.bce;
      j["total"] = losses.total;
      log << j.dump() << '\n';
      if (config.max_steps > 0 && state.step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    if (!val_pool.entries.empty()) {
      std::vector<std::size_t> all(val_pool.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const double acc = token_accuracy(
          state.params, batch_of(val_pool, all, state.params.config));
      json j;
      j["epoch"] = epoch;
      j["val_token_accuracy"] = acc;
      log << j.dump() << '\n';
      if (acc > best_val_acc) {
        best_val_acc = acc;
        epochs_since_best = 0;
      } else if (++epochs_since_best >= config.early_stop_patience) {
        stop = true;  // early stopping on validation token accuracy
      }
    }
  }

  save_checkpoint(state, vocab, out_path(config, "checkpoint.snvc"));
  save_manifest(train_pool.manifest, out_path(config, "pool_manifest.json"));
  return 0;
}

int run_ttt(const RunConfig& config) {
  write_frozen_config(config);
  if (config.checkpoint_in.empty()) {
    throw DomainError("ttt requires --checkpoint");
  }
  LoadedCheckpoint loaded = load_checkpoint(config.checkpoint_in);
  if (config.fingerprint_width > 0 &&
      config.fingerprint_width != loaded.state.params.config.fingerprint_width) {
    throw CheckpointError(
        "fingerprint width " + std::to_string(config.fingerprint_width) +
        " disagrees with checkpoint width " +
        std::to_string(loaded.state.params.config.fingerprint_width));
  }
  TrainState state = std::move(loaded.state);
  state.phase = Phase::Ttt;

  const InputVocab input_vocab;
  CandidatePool pool = build_pool(load_jsonl(config.pool_path), input_vocab,
                                  loaded.vocab, state.params.config, "pool");
  for (const std::string& extra : config.extend_pool) {
    extend_pool(pool, load_jsonl(extra), input_vocab, loaded.vocab,
                state.params.config, extra);
  }
  const std::vector<Record> test = load_jsonl(config.test_path);

  TttConfig ttt_cfg = config.ttt;
  ttt_cfg.lambda = config.lambda;
  ttt_cfg.seed = config.seed;
  ttt_cfg.lr_override = config.lr_override;
  const TttTrace trace = ttt_run(state, pool, test, input_vocab, ttt_cfg);

  save_checkpoint(state, loaded.vocab, out_path(config, "checkpoint.snvc"));
  save_trace(trace, out_path(config, "ttt_trace.jsonl"));
  save_manifest(pool.manifest, out_path(config, "pool_manifest.json"));
  return 0;
}

int run_predict(const RunConfig& config) {
  write_frozen_config(config);
  if (config.checkpoint_in.empty()) {
    throw DomainError("predict requires --checkpoint");
  }
  const LoadedCheckpoint loaded = load_checkpoint(config.checkpoint_in);
  const InputVocab input_vocab;

  // Lenient line-by-line ingestion: per-record failures are reported in
  // the output and the run continues.
  std::ifstream in(config.data_path);
  if (!in) throw IoError("cannot open input: " + config.data_path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }

  PredictOptions popts;
  popts.beam.beam = config.beam;
  popts.beam.k = config.k;
  popts.peak_threshold = config.peak_threshold;
  popts.peak_cap = static_cast<std::size_t>(config.peak_cap);

  std::vector<std::string> outputs(lines.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      json j;
      try {
        const Record record = parse_spectrum_record(lines[i]);
        j["formula"] = record.formula.to_string();
        if (!record.smiles.empty()) j["target"] = record.smiles;
        const Spectrum prepared = preprocess_spectrum(
            record.spectrum, popts.peak_threshold, popts.peak_cap);
        const InputSequence input =
            format_input(prepared, record.formula, input_vocab);
        json filtered = json::array();
        try {
          const BeamResult beam =
              beam_search(loaded.state.params, input, record.formula,
                          loaded.vocab, popts.beam);
          json cands = json::array(), scores = json::array();
          for (const ScoredCandidate& c : beam.candidates) {
            cands.push_back(c.text);
            scores.push_back(c.score);
          }
          for (const FilteredCandidate& f : beam.filtered) {
            filtered.push_back({{"text", f.text}, {"reason", f.reason}});
          }
          j["candidates"] = std::move(cands);
          j["scores"] = std::move(scores);
        } catch (const EmptyBeam&) {
          j["candidates"] = json::array();
          j["scores"] = json::array();
          j["empty_beam"] = true;
        }
        j["filtered"] = std::move(filtered);
      } catch (const Error& e) {
        j = json{{"error", e.what()}, {"line", i + 1},
                 {"candidates", json::array()}, {"scores", json::array()}};
      }
      outputs[i] = j.dump();
    }
  };
  const int workers = std::max(1, config.workers);
  if (workers == 1 || lines.size() < 2) {
    work(0, lines.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk =
        (lines.size() + static_cast<std::size_t>(workers) - 1) /
        static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = static_cast<std::size_t>(w) * chunk;
      const std::size_t end = std::min(lines.size(), begin + chunk);
      if (begin >= end) break;
      threads.emplace_back(work, begin, end);
    }
    for (std::thread& t : threads) t.join();
  }

  std::ofstream out(out_path(config, "predictions.jsonl"));
  if (!out) throw IoError("cannot write predictions");
  for (const std::string& o : outputs) out << o << '\n';
  return 0;
}

int run_evaluate(const RunConfig& config) {
  write_frozen_config(config);
  std::vector<PredictionSet> preds;
  {
    // Accept both the metrics schema and run_predict output (which may
    // contain per-record error entries; those become empty sets).
    std::ifstream in(config.predictions_path);
    if (!in) throw IoError("cannot open predictions: " + config.predictions_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(config.predictions_path + ":" +
                             std::to_string(line_no) + ": " + e.what(),
                         line_no);
      }
      if (!j.contains("target")) {
        if (j.contains("error") || j.contains("empty_beam")) continue;
        throw ParseError(config.predictions_path + ":" +
                             std::to_string(line_no) +
                             ": prediction record missing 'target'",
                         line_no);
      }
      PredictionSet set;
      set.target = j["target"].get<std::string>();
      if (j.contains("candidates")) {
        for (const auto& c : j["candidates"]) {
          set.candidates.push_back(c.get<std::string>());
        }
      }
      if (j.contains("scores")) {
        for (const auto& s : j["scores"]) set.scores.push_back(s.get<double>());
      }
      set.k = config.k;
      preds.push_back(std::move(set));
    }
  }
  if (preds.empty()) {
    throw ParseError("no evaluable predictions in " + config.predictions_path);
  }

  EvaluateOptions opts;
  opts.k = config.k;
  opts.mces_bound = config.mces_bound;
  opts.mces_topk_mean = config.mces_topk_mean;
  opts.stereo_aware = config.stereo_aware;
  const EvalReport report = evaluate_run(preds, opts);

  {
    std::ofstream out(out_path(config, "report.json"));
    out << report_to_json(report) << '\n';
  }
  {
    std::ofstream out(out_path(config, "report.txt"));
    out << report_to_table(report);
  }
  std::cout << report_to_table(report);
  return 0;
}

int run_ingest_mgf(const RunConfig& config) {
  write_frozen_config(config);
  const std::vector<Record> records = load_mgf(config.data_path);
  save_jsonl(records, out_path(config, "dataset.jsonl"));
  std::cout << "ingested " << records.size() << " spectra\n";
  return 0;
}

int run_command_mapped(int (*fn)(const RunConfig&), const RunConfig& config) {
  try {
    return fn(config);
  } catch (const NumericsError& e) {
    std::cerr << "numerics error: " << e.what() << "\n";
    return 4;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace specnovo
