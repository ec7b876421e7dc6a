// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specnovo/ttt.hpp"

namespace specnovo {

inline constexpr const char* kVersionString = "specnovo 0.1.0";

// Resolved settings for one command invocation. A frozen copy is written
// next to every run's outputs.
struct RunConfig {
  std::string command;
  std::string preset = "toy";  // toy | paper
  std::uint64_t seed = 42;
  int k = 10;
  int beam = 16;
  double lambda = 1.0;
  int workers = 1;
  int fingerprint_width = 0;  // 0 = preset / checkpoint value

  std::string data_path;
  std::string val_path;
  std::string checkpoint_in;
  std::string out_dir = "run_out";
  std::string pool_path;
  std::vector<std::string> extend_pool;
  std::string test_path;
  std::string predictions_path;

  // train
  int epochs = 20;
  int batch_size = 16;
  long max_steps = 0;  // 0 = no cap
  int early_stop_patience = 3;
  std::string phase = "pretrain";

  // ttt
  TttConfig ttt;
  std::optional<double> lr_override;

  // predict / evaluate
  double peak_threshold = 1.0;
  int peak_cap = 512;
  bool stereo_aware = false;
  bool mces_topk_mean = false;
  double mces_bound = 50.0;
};

std::string config_to_text(const RunConfig& config);
void write_frozen_config(const RunConfig& config);

int run_train(const RunConfig& config);
int run_ttt(const RunConfig& config);
int run_predict(const RunConfig& config);
int run_evaluate(const RunConfig& config);
int run_ingest_mgf(const RunConfig& config);

// Exit-code mapping: 0 success, 2 usage, 3 data, 4 numerics.
int run_command_mapped(int (*fn)(const RunConfig&), const RunConfig& config);

}  // namespace specnovo
