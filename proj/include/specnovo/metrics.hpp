// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "specnovo/fingerprint.hpp"
#include "specnovo/mces.hpp"

namespace specnovo {

// Ranked candidates for one target; rank 1 first.
struct PredictionSet {
  std::string target;
  std::vector<std::string> candidates;
  std::vector<double> scores;
  int k = 10;
};

struct EvalReport {
  std::size_t num_sets = 0;
  std::size_t num_candidates = 0;
  // Sets with no valid candidate: counted in accuracy denominators,
  // excluded from similarity means.
  std::size_t all_invalid_sets = 0;
  double top1_accuracy = 0.0;
  double topk_accuracy = 0.0;
  double mean_tanimoto_top1 = 0.0;
  double mean_tanimoto_topk = 0.0;  // per-set max over valid candidates
  double mean_mces_top1 = 0.0;
  double mean_mces_topk = 0.0;      // per-set min over valid candidates
  double validity_rate = 0.0;
  bool empty_input_warning = false;
  double meaningful_top1 = 0.0;     // Tanimoto >= 0.4
  double close_top1 = 0.0;          // Tanimoto >= 0.675
  double meaningful_topk = 0.0;
  double close_topk = 0.0;
};

inline constexpr double kMeaningfulMatchThreshold = 0.4;
inline constexpr double kCloseMatchThreshold = 0.675;

enum class MatchClass { None, Meaningful, Close };

// |a AND b| / |a OR b|; 1.0 when both vectors are all-zero.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

MatchClass match_class(double t);

// Fraction of sets whose canonical target appears among the first k
// canonical candidates. Invalid candidates never match.
double topk_accuracy(const std::vector<PredictionSet>& preds, int k);

// Fraction of candidates that tokenize+parse cleanly.
double validity_rate(const std::vector<std::string>& candidates,
                     bool* empty_warning = nullptr);

struct EvaluateOptions {
  int k = 10;
  int fingerprint_width = kDefaultFingerprintWidth;
  // Myopic MCES cutoff for molecules above the exact-size limit.
  double mces_bound = 50.0;
  int mces_exact_atom_limit = kMcesExactAtomLimit;
  // Top-k MCES aggregation: min over candidates by default, mean optional.
  bool mces_topk_mean = false;
  // Comparison key: canonical graph equality, optionally extended with a
  // parity-normalized tetrahedral stereo digest.
  bool stereo_aware = false;
};

// Comparison key used by Top-k accuracy; empty when the SMILES is invalid.
std::string comparison_key(const std::string& smiles, bool stereo_aware);

EvalReport evaluate_run(const std::vector<PredictionSet>& preds,
                        const EvaluateOptions& opts = {});

// Predictions file: JSONL of {target, candidates: [text], scores: [real]}.
std::vector<PredictionSet> load_predictions(const std::string& path);
void save_predictions(const std::vector<PredictionSet>& preds,
                      const std::string& path);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace specnovo
