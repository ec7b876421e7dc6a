// SPDX-License-Identifier: Apache-2.0
//
// specnovo: structure elucidation from MS/MS spectra.
//   train / finetune  -> checkpoint + training log
//   ttt               -> test-time tuned checkpoint + trace
//   predict           -> ranked SMILES candidates per spectrum
//   evaluate          -> accuracy / Tanimoto / MCES report
//   ingest-mgf        -> convert MGF blocks to the JSONL dataset schema

#include <iostream>

#include <CLI11.hpp>

#include "specnovo/commands.hpp"

using specnovo::RunConfig;

namespace {

void add_common(CLI::App* cmd, RunConfig& config) {
  cmd->add_option("--seed", config.seed, "random seed")
      ->envname("SPECNOVO_SEED");
  cmd->add_option("--preset", config.preset, "model preset: toy | paper")
      ->envname("SPECNOVO_PRESET");
  cmd->add_option("--out", config.out_dir, "output directory")
      ->envname("SPECNOVO_OUT");
  cmd->add_option("--lambda", config.lambda, "fingerprint loss weight")
      ->envname("SPECNOVO_LAMBDA");
  cmd->add_option("--fingerprint-width", config.fingerprint_width,
                  "fingerprint width override (power of two)");
  cmd->add_option("--workers", config.workers, "worker threads")
      ->envname("SPECNOVO_WORKERS");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structure elucidation from tandem mass spectra"};
  app.set_version_flag("--version", specnovo::kVersionString);
  app.set_config("--config", "", "key-value config file; flags win");
  app.require_subcommand(1);

  RunConfig config;

  CLI::App* train = app.add_subcommand("train", "train from scratch");
  add_common(train, config);
  train->add_option("--data", config.data_path, "training JSONL")->required();
  train->add_option("--val", config.val_path, "validation JSONL");
  train->add_option("--epochs", config.epochs, "max epochs");
  train->add_option("--batch-size", config.batch_size, "batch size");
  train->add_option("--max-steps", config.max_steps, "hard step cap");
  train->add_option("--early-stop-patience", config.early_stop_patience,
                    "epochs without val improvement before stopping");
  train->add_option("--phase", config.phase, "lr schedule: pretrain | finetune");
  train->add_option("--lr", config.lr_override, "fixed lr override");
  train->add_option("--checkpoint", config.checkpoint_in,
                    "resume from checkpoint");

  CLI::App* finetune =
      app.add_subcommand("finetune", "train starting from a checkpoint");
  add_common(finetune, config);
  finetune->add_option("--data", config.data_path, "training JSONL")->required();
  finetune->add_option("--val", config.val_path, "validation JSONL");
  finetune->add_option("--epochs", config.epochs, "max epochs");
  finetune->add_option("--batch-size", config.batch_size, "batch size");
  finetune->add_option("--max-steps", config.max_steps, "hard step cap");
  finetune->add_option("--early-stop-patience", config.early_stop_patience,
                       "epochs without val improvement before stopping");
  finetune->add_option("--lr", config.lr_override, "fixed lr override");
  finetune->add_option("--checkpoint", config.checkpoint_in, "base checkpoint")
      ->required();

  CLI::App* ttt = app.add_subcommand("ttt", "test-time tuning");
  add_common(ttt, config);
  ttt->add_option("--checkpoint", config.checkpoint_in, "base checkpoint")
      ->required();
  ttt->add_option("--pool", config.pool_path, "candidate pool JSONL")
      ->required()
      ->envname("SPECNOVO_POOL");
  ttt->add_option("--extend-pool", config.extend_pool,
                  "additional pool JSONL files");
  ttt->add_option("--test", config.test_path, "unlabeled test JSONL")
      ->required();
  ttt->add_option("--test-points", config.ttt.test_points_per_iter,
                  "test points per update");
  ttt->add_option("--neighbors", config.ttt.neighbors_per_point,
                  "neighbors per test point");
  ttt->add_option("--refresh-interval", config.ttt.refresh_interval,
                  "updates between cache refreshes");
  ttt->add_option("--kmeans-k", config.ttt.kmeans_k, "pre-selection clusters");
  ttt->add_option("--patience", config.ttt.patience,
                  "zero-growth updates before stopping")
      ->envname("SPECNOVO_PATIENCE");
  ttt->add_option("--max-updates", config.ttt.max_updates, "update cap");
  ttt->add_option("--preselect-threshold", config.ttt.preselect_threshold,
                  "pool size that activates k-means pre-selection");
  ttt->add_option("--lr", config.lr_override, "fixed lr override");

  CLI::App* predict = app.add_subcommand("predict", "decode candidates");
  add_common(predict, config);
  predict->add_option("--checkpoint", config.checkpoint_in, "checkpoint")
      ->required();
  predict->add_option("--data", config.data_path, "input JSONL")->required();
  predict->add_option("--k", config.k, "candidates per record")
      ->envname("SPECNOVO_K");
  predict->add_option("--beam", config.beam, "beam width")
      ->envname("SPECNOVO_BEAM");
  predict->add_option("--peak-threshold", config.peak_threshold,
                      "intensity filter threshold");
  predict->add_option("--peak-cap", config.peak_cap, "max peaks kept");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions");
  add_common(evaluate, config);
  evaluate->add_option("--predictions", config.predictions_path,
                       "predictions JSONL")
      ->required();
  evaluate->add_option("--k", config.k, "evaluation cutoff");
  evaluate->add_flag("--stereo-aware", config.stereo_aware,
                     "stereo-aware comparison key");
  evaluate->add_flag("--mces-topk-mean", config.mces_topk_mean,
                     "mean instead of min for top-k MCES");
  evaluate->add_option("--mces-bound", config.mces_bound,
                       "myopic MCES cutoff for large molecules");

  CLI::App* ingest = app.add_subcommand("ingest-mgf", "convert MGF to JSONL");
  add_common(ingest, config);
  ingest->add_option("--data", config.data_path, "MGF file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train->parsed()) {
    config.command = "train";
    return specnovo::run_command_mapped(specnovo::run_train, config);
  }
  if (finetune->parsed()) {
    config.command = "finetune";
    config.phase = "finetune";
    return specnovo::run_command_mapped(specnovo::run_train, config);
  }
  if (ttt->parsed()) {
    config.command = "ttt";
    return specnovo::run_command_mapped(specnovo::run_ttt, config);
  }
  if (predict->parsed()) {
    config.command = "predict";
    return specnovo::run_command_mapped(specnovo::run_predict, config);
  }
  if (evaluate->parsed()) {
    config.command = "evaluate";
    return specnovo::run_command_mapped(specnovo::run_evaluate, config);
  }
  if (ingest->parsed()) {
    config.command = "ingest-mgf";
    return specnovo::run_command_mapped(specnovo::run_ingest_mgf, config);
  }
  return 2;
}
