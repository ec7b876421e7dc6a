// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specnovo/rng.hpp"

namespace specnovo {

using Mat = Eigen::MatrixXd;
using IMat = Eigen::MatrixXi;

struct ModelConfig {
  int d_model = 64;
  int num_heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ffn_dim = 128;
  int input_vocab = 0;
  int output_vocab = 0;
  int fingerprint_width = 256;
  double dropout = 0.1;
  int max_len = 1024;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  // Desk-scale defaults used by the test harnesses.
  static ModelConfig toy();
  // Published-scale preset; too large for desk training but selectable.
  static ModelConfig paper();
  // Tiny preset for finite-difference gradient checks.
  static ModelConfig micro();
};

using ParamMap = std::map<std::string, Mat>;

struct ModelParams {
  ModelConfig config;
  ParamMap tensors;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
};

// Xavier-uniform initialization, deterministic in the seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Rectangular token matrices padded with the pad ids; padding only at the
// tail of a row. Padded positions are excluded from attention, pooling and
// both loss terms.
struct Batch {
  IMat input_ids;        // [B, S_in]
  IMat target_ids;       // [B, S_tgt], BOS ... EOS per row
  Mat fingerprint_bits;  // [B, fingerprint_width]
  int input_pad_id = 0;
  int target_pad_id = 0;

  int size() const { return static_cast<int>(input_ids.rows()); }
  int input_len(int row) const;   // non-pad prefix length
  int target_len(int row) const;
};

struct ForwardOptions {
  bool dropout = false;
  Rng* rng = nullptr;  // required when dropout is on
  bool keep_tape = false;
};

struct Tape;  // internal activation record, defined in model.cpp

struct ForwardResult {
  // Teacher-forced logits per sample: [target_len-1, output_vocab], one
  // row per decoder input position.
  std::vector<Mat> token_logits;
  Mat fp_logits;  // [B, fingerprint_width]
  Mat pooled;     // [B, d_model]
  std::shared_ptr<Tape> tape;
};

ForwardResult forward(const ModelParams& params, const Batch& batch,
                      const ForwardOptions& opts = {});

struct Losses {
  double total = 0.0;
  double ce = 0.0;
  double bce = 0.0;
};

// total = ce + lambda * bce. ce averages over non-pad gold positions,
// bce over (non-empty samples x fingerprint bits).
Losses loss_joint(const ForwardResult& fwd, const Batch& batch, double lambda);

struct BackwardResult {
  ParamMap grads;
  Losses losses;
};

// Analytic gradients of loss_joint for every parameter tensor.
BackwardResult backward(const ModelParams& params, const Batch& batch,
                        double lambda, const ForwardOptions& opts = {});

enum class Phase { Pretrain, Finetune, Ttt };

// Exponential decay: 1e-4 * 0.95^epoch (pretrain), 5e-5 * 0.95^epoch
// (finetune), 5e-5 * 0.995^epoch (test-time tuning).
double lr_schedule(Phase phase, int epoch);

std::string phase_to_string(Phase phase);
Phase phase_from_string(const std::string& s);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainState {
  ModelParams params;
  ParamMap moment1;
  ParamMap moment2;
  long step = 0;
  double lr = 0.0;
  std::uint64_t rng_seed = 0;
  Phase phase = Phase::Pretrain;
  int epoch = 0;
  OptimizerConfig optimizer;

  // Dropout stream; reseeded deterministically from rng_seed + step.
  Rng dropout_rng() const { return Rng(rng_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(step + 1))); }
};

TrainState init_train_state(const ModelConfig& config, std::uint64_t seed,
                            Phase phase = Phase::Pretrain);

// One AdamW update at the scheduled learning rate (or `lr_override`).
// Returns the losses observed on the batch.
Losses train_step(TrainState& state, const Batch& batch, double lambda,
                  std::optional<double> lr_override = std::nullopt);

// Teacher-forced argmax accuracy over non-pad gold positions.
double token_accuracy(const ModelParams& params, const Batch& batch);

// Inference path: run the encoder and fingerprint head once per input,
// then score decoder prefixes against the cached encoder states.
struct EncodedInput {
  Mat enc_out;                   // [len, d_model]
  Eigen::RowVectorXd pooled;     // [d_model]
  Eigen::RowVectorXd fp_logits;  // [fingerprint_width]
};

EncodedInput encode_input(const ModelParams& params,
                          const std::vector<int>& input_ids);

// Teacher-forced logits [len(dec_in), output_vocab] for one prefix.
Mat decode_logits(const ModelParams& params, const Mat& enc_out,
                  const std::vector<int>& dec_in);

}  // namespace specnovo
