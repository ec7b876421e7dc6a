// SPDX-License-Identifier: Apache-2.0
//
// Formula-constrained beam search. Heavy atoms are budgeted per token;
// hydrogens and full structural validity are checked once a hypothesis
// emits end-of-sequence, by re-parsing the candidate.

#include "specnovo/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "specnovo/errors.hpp"

namespace specnovo {

Budget budget_from_formula(const ElementCounts& formula) {
  Budget b;
  b.remaining = formula;
  b.h_target = formula.get(Element::H);
  b.remaining.set(Element::H, 0);
  return b;
}

namespace {

// GNMT length normalization: logp * lp(1) / lp(len), lp(n) = (5+n)^0.6.
double length_normalized(double logp, std::size_t len) {
  const double lp = std::pow(5.0 + static_cast<double>(len), 0.6);
  const double lp1 = std::pow(6.0, 0.6);
  return logp * lp1 / lp;
}

bool structural_token_ok(const Hypothesis& h, const SmilesToken& tok) {
  switch (tok.kind) {
    case TokenKind::OrganicAtom:
    case TokenKind::BracketAtom:
      // An atom may follow anything except a pending-atom context that
      // forbids it; after ')' or a ring digit an atom is fine too.
      return true;
    case TokenKind::Bond:
      return !h.at_start && h.last_kind != TokenKind::Bond &&
             h.last_kind != TokenKind::BranchOpen &&
             h.last_kind != TokenKind::Dot;
    case TokenKind::RingBond:
      // Digits bind to the preceding atom; also legal after a bond symbol
      // (ring closures may carry an order) or another digit.
      return h.last_kind == TokenKind::OrganicAtom ||
             h.last_kind == TokenKind::BracketAtom ||
             h.last_kind == TokenKind::RingBond ||
             h.last_kind == TokenKind::Bond;
    case TokenKind::BranchOpen:
      return h.last_kind == TokenKind::OrganicAtom ||
             h.last_kind == TokenKind::BracketAtom ||
             h.last_kind == TokenKind::RingBond ||
             h.last_kind == TokenKind::BranchClose;
    case TokenKind::BranchClose:
      return h.open_branches > 0 && h.last_kind != TokenKind::Bond &&
             h.last_kind != TokenKind::BranchOpen &&
             h.last_kind != TokenKind::Dot;
    case TokenKind::Dot:
      return !h.at_start && h.open_branches == 0 && h.open_rings.empty() &&
             h.last_kind != TokenKind::Bond &&
             h.last_kind != TokenKind::Dot;
  }
  return false;
}

int ring_digit_of(const SmilesToken& tok) {
  if (tok.text[0] == '%') {
    return (tok.text[1] - '0') * 10 + (tok.text[2] - '0');
  }
  return tok.text[0] - '0';
}

}  // namespace

std::vector<int> allowed_tokens(const Hypothesis& h, const OutputVocab& vocab) {
  std::vector<int> allowed;
  for (int id = 0; id < vocab.size(); ++id) {
    if (id == OutputVocab::kEos) {
      if (h.budget.remaining.total() == 0 && h.open_branches == 0 &&
          h.open_rings.empty() && !h.at_start &&
          h.last_kind != TokenKind::Bond && h.last_kind != TokenKind::Dot &&
          h.last_kind != TokenKind::BranchOpen) {
        allowed.push_back(id);
      }
      continue;
    }
    const std::optional<SmilesToken>& info = vocab.info(id);
    if (!info) continue;  // pad/bos/unk never emitted
    if (!structural_token_ok(h, *info)) continue;
    if (info->kind == TokenKind::OrganicAtom ||
        info->kind == TokenKind::BracketAtom) {
      const ElementCounts cost = token_atom_cost(*info);
      bool fits = true;
      for (const auto& [elem, count] : cost.entries()) {
        if (elem == Element::H) {
          if (h.budget.emitted_h + count > h.budget.h_target) fits = false;
        } else if (h.budget.remaining.get(elem) < count) {
          fits = false;
        }
      }
      if (!fits) continue;
    }
    allowed.push_back(id);
  }
  return allowed;
}

void apply_token(Hypothesis& h, int token_id, const OutputVocab& vocab) {
  const std::optional<SmilesToken>& info = vocab.info(token_id);
  if (!info) throw DomainError("apply_token: special token");
  h.tokens.push_back(token_id);
  switch (info->kind) {
    case TokenKind::OrganicAtom:
    case TokenKind::BracketAtom: {
      const ElementCounts cost = token_atom_cost(*info);
      for (const auto& [elem, count] : cost.entries()) {
        if (elem == Element::H) {
          h.budget.emitted_h += count;
        } else {
          h.budget.remaining.add(elem, -count);
        }
      }
      break;
    }
    case TokenKind::RingBond: {
      const int d = ring_digit_of(*info);
      if (h.open_rings.count(d)) {
        h.open_rings.erase(d);
      } else {
        h.open_rings.insert(d);
      }
      break;
    }
    case TokenKind::BranchOpen:
      ++h.open_branches;
      break;
    case TokenKind::BranchClose:
      --h.open_branches;
      break;
    case TokenKind::Bond:
    case TokenKind::Dot:
      break;
  }
  h.last_kind = info->kind;
  h.at_start = false;
}

BeamResult beam_search(const ModelParams& params, const InputSequence& input,
                       const ElementCounts& formula, const OutputVocab& vocab,
                       const BeamOptions& opts) {
  if (opts.beam < 1 || opts.k < 1 || opts.beam < opts.k) {
    throw DomainError("beam search requires beam >= k >= 1");
  }
  const EncodedInput encoded = encode_input(params, input.tokens);

  const int heavy_atoms = budget_from_formula(formula).remaining.total();
  const std::size_t max_len =
      static_cast<std::size_t>(2 * heavy_atoms + opts.max_len_slack);

  struct Finished {
    Hypothesis hyp;
    double score;
  };
  std::vector<Hypothesis> live;
  Hypothesis root;
  root.budget = budget_from_formula(formula);
  live.push_back(std::move(root));
  std::vector<Finished> finished;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    struct Expansion {
      std::size_t parent;
      int token;
      double logp;
    };
    std::vector<Expansion> expansions;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const Hypothesis& h = live[p];
      std::vector<int> dec_in = {OutputVocab::kBos};
      dec_in.insert(dec_in.end(), h.tokens.begin(), h.tokens.end());
      const Mat logits = decode_logits(params, encoded.enc_out, dec_in);
      const Eigen::RowVectorXd row = logits.row(logits.rows() - 1);

      const std::vector<int> allowed = allowed_tokens(h, vocab);
      if (allowed.empty()) continue;  // dead end, hypothesis dropped
      // log-softmax restricted to the allowed set.
      double max_logit = -1e300;
      for (int id : allowed) max_logit = std::max(max_logit, row(id));
      double z = 0.0;
      for (int id : allowed) z += std::exp(row(id) - max_logit);
      const double log_z = std::log(z) + max_logit;
      for (int id : allowed) {
        expansions.push_back({p, id, h.logp + row(id) - log_z});
      }
    }
    if (expansions.empty()) break;
    const std::size_t keep =
        std::min<std::size_t>(expansions.size(), static_cast<std::size_t>(opts.beam));
    std::partial_sort(expansions.begin(), expansions.begin() + keep,
                      expansions.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t e = 0; e < keep; ++e) {
      const Expansion& ex = expansions[e];
      if (ex.token == OutputVocab::kEos) {
        Hypothesis done = live[ex.parent];
        done.logp = ex.logp;
        // Length counts emitted tokens including end-of-sequence.
        const double score =
            length_normalized(ex.logp, done.tokens.size() + 1);
        finished.push_back({std::move(done), score});
      } else {
        Hypothesis h = live[ex.parent];
        h.logp = ex.logp;
        apply_token(h, ex.token, vocab);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  // Verify survivors: parse and exact formula equality, then deduplicate
  // canonical forms keeping the best score.
  BeamResult result;
  std::sort(finished.begin(), finished.end(),
            [](const Finished& a, const Finished& b) {
              return a.score > b.score;
            });
  std::map<std::string, std::size_t> canon_seen;
  for (const Finished& f : finished) {
    std::string text = vocab.decode(f.hyp.tokens);
    MolGraph g;
    try {
      g = parse_smiles(tokenize_smiles(text));
    } catch (const Error&) {
      result.filtered.push_back({std::move(text), "parse_error"});
      continue;
    }
    if (!(formula_of(g) == formula)) {
      result.filtered.push_back({std::move(text), "formula_mismatch"});
      continue;
    }
    const std::string canon = canonicalize(g);
    auto it = canon_seen.find(canon);
    if (it != canon_seen.end()) continue;  // duplicate molecule, worse score
    canon_seen.emplace(canon, result.candidates.size());
    result.candidates.push_back({std::move(text), f.score});
    if (static_cast<int>(result.candidates.size()) >= opts.k) break;
  }
  if (result.candidates.empty()) {
    throw EmptyBeam("no hypothesis satisfied the formula for input '" +
                    input.raw + "'");
  }
  return result;
}

PredictionSet predict_topk(const ModelParams& params, const OutputVocab& vocab,
                           const InputVocab& input_vocab, const Record& record,
                           const PredictOptions& opts) {
  const Spectrum prepared =
      preprocess_spectrum(record.spectrum, opts.peak_threshold, opts.peak_cap);
  const InputSequence input =
      format_input(prepared, record.formula, input_vocab);
  PredictionSet set;
  set.target = record.smiles;
  set.k = opts.beam.k;
  try {
    BeamResult beam = beam_search(params, input, record.formula, vocab,
                                  opts.beam);
    for (const ScoredCandidate& c : beam.candidates) {
      set.candidates.push_back(c.text);
      set.scores.push_back(c.score);
    }
  } catch (const EmptyBeam&) {
    // Recorded as an all-invalid prediction set.
  }
  return set;
}

}  // namespace specnovo
