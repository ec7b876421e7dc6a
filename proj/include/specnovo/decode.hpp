// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "specnovo/metrics.hpp"
#include "specnovo/model.hpp"
#include "specnovo/spectra.hpp"
#include "specnovo/vocab.hpp"

namespace specnovo {

// Heavy-atom budget plus explicit-H bookkeeping. Implicit hydrogens depend
// on final valence assignments, so the H total is enforced by the
// completion filter rather than per token.
struct Budget {
  ElementCounts remaining;  // heavy atoms left to spend
  int h_target = 0;
  int emitted_h = 0;        // explicit H from bracket tokens
};

Budget budget_from_formula(const ElementCounts& formula);

struct Hypothesis {
  std::vector<int> tokens;  // emitted ids, BOS excluded
  double logp = 0.0;
  Budget budget;
  int open_branches = 0;
  std::set<int> open_rings;
  TokenKind last_kind = TokenKind::Dot;  // Dot doubles as "at start"
  bool at_start = true;
};

// Token ids the hypothesis may emit next. Enforces element budgets and the
// structural counters; end-of-sequence requires an exactly spent heavy-atom
// budget and no open rings or branches.
std::vector<int> allowed_tokens(const Hypothesis& h, const OutputVocab& vocab);

// Advances structural counters and budget for an accepted token.
void apply_token(Hypothesis& h, int token_id, const OutputVocab& vocab);

struct BeamOptions {
  int beam = 16;
  int k = 10;
  int max_len_slack = 16;  // generation cap: 2*heavy_atoms + slack
};

struct ScoredCandidate {
  std::string text;
  double score;
};

struct FilteredCandidate {
  std::string text;
  std::string reason;  // "parse_error" or "formula_mismatch"
};

struct BeamResult {
  std::vector<ScoredCandidate> candidates;  // descending score, deduplicated
  std::vector<FilteredCandidate> filtered;
};

// Length-normalized constrained beam search. Finished hypotheses must
// re-parse and reproduce the input formula exactly (hydrogens included);
// failures land in `filtered`. Throws EmptyBeam when nothing survives.
BeamResult beam_search(const ModelParams& params, const InputSequence& input,
                       const ElementCounts& formula, const OutputVocab& vocab,
                       const BeamOptions& opts = {});

struct PredictOptions {
  BeamOptions beam;
  double peak_threshold = 1.0;
  std::size_t peak_cap = 512;
};

// Preprocess -> format -> beam search. EmptyBeam becomes an empty
// candidate list.
PredictionSet predict_topk(const ModelParams& params, const OutputVocab& vocab,
                           const InputVocab& input_vocab, const Record& record,
                           const PredictOptions& opts = {});

}  // namespace specnovo
