// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle over loss_joint, checked
// tensor by tensor against the analytic backward pass.
#pragma once

#include <string>

#include "specnovo/model.hpp"
#include "specnovo/rng.hpp"

namespace specnovo::testing {

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst_tensor;
};

inline double loss_at(const ModelParams& params, const Batch& batch,
                      double lambda) {
  return loss_joint(forward(params, batch), batch, lambda).total;
}

inline GradCheck finite_difference_check(const ModelParams& params,
                                         const Batch& batch, double lambda,
                                         double eps = 1e-5) {
  const BackwardResult back = backward(params, batch, lambda);
  ModelParams probe = params;
  GradCheck result;
  for (const auto& [name, grad] : back.grads) {
    Mat& tensor = probe.at(name);
    for (int i = 0; i < tensor.rows(); ++i) {
      for (int j = 0; j < tensor.cols(); ++j) {
        const double saved = tensor(i, j);
        tensor(i, j) = saved + eps;
        const double up = loss_at(probe, batch, lambda);
        tensor(i, j) = saved - eps;
        const double down = loss_at(probe, batch, lambda);
        tensor(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double analytic = grad(i, j);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1e-6, std::abs(analytic),
                                     std::abs(numeric)});
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_tensor = name;
        }
      }
    }
  }
  return result;
}

// Deterministic batch over a micro/toy config: random valid ids and
// random fingerprint bits.
inline Batch make_random_batch(const ModelConfig& config, std::uint64_t seed,
                               int batch, int in_len, int tgt_len) {
  Rng rng(seed);
  Batch b;
  b.input_ids = IMat::Zero(batch, in_len);
  b.target_ids = IMat::Zero(batch, tgt_len);
  b.fingerprint_bits = Mat::Zero(batch, config.fingerprint_width);
  for (int s = 0; s < batch; ++s) {
    for (int j = 0; j < in_len; ++j) {
      b.input_ids(s, j) = 1 + static_cast<int>(rng.index(config.input_vocab - 1));
    }
    b.target_ids(s, 0) = 1;  // BOS
    for (int j = 1; j + 1 < tgt_len; ++j) {
      b.target_ids(s, j) = 4 + static_cast<int>(rng.index(config.output_vocab - 4));
    }
    b.target_ids(s, tgt_len - 1) = 2;  // EOS
    for (int j = 0; j < config.fingerprint_width; ++j) {
      b.fingerprint_bits(s, j) = rng.uniform() < 0.25 ? 1.0 : 0.0;
    }
  }
  return b;
}

inline ModelConfig micro_with_vocab() {
  ModelConfig c = ModelConfig::micro();
  c.input_vocab = 21;
  c.output_vocab = 12;
  return c;
}

}  // namespace specnovo::testing
