// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "specnovo/decode.hpp"
#include "specnovo/errors.hpp"
#include "support/synth.hpp"
#include "support/train_micro.hpp"

using namespace specnovo;
using specnovo::testing::train_micro;

namespace {

// Shared across test cases in this file; trained once.
const specnovo::testing::MicroModel& memorized() {
  static const auto model = train_micro(
      {synth::synth_record("CCO"), synth::synth_record("CCC"),
       synth::synth_record("CCN"), synth::synth_record("C1CC1")},
      220);
  return model;
}

Hypothesis start_for(const std::string& formula) {
  Hypothesis h;
  h.budget = budget_from_formula(parse_formula(formula));
  return h;
}

bool allows_text(const Hypothesis& h, const OutputVocab& vocab,
                 const std::string& text) {
  for (int id : allowed_tokens(h, vocab)) {
    if (vocab.text(id) == text) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("budget excludes exhausted atoms and gates end-of-sequence") {
  const OutputVocab& vocab = memorized().vocab;
  Hypothesis h = start_for("CH4");
  CHECK(allows_text(h, vocab, "C"));
  CHECK_FALSE(allows_text(h, vocab, "<eos>"));
  apply_token(h, vocab.id_of("C"), vocab);
  CHECK_FALSE(allows_text(h, vocab, "C"));
  for (int id : allowed_tokens(h, vocab)) {
    if (id == OutputVocab::kEos) goto eos_found;
  }
  FAIL("end-of-sequence missing after budget exhaustion");
eos_found:;
}

TEST_CASE("elements outside the formula are masked from the start") {
  const OutputVocab& vocab = memorized().vocab;
  const Hypothesis h = start_for("C2H6O");  // no nitrogen
  CHECK_FALSE(allows_text(h, vocab, "N"));
  CHECK(allows_text(h, vocab, "C"));
  CHECK(allows_text(h, vocab, "O"));
}

TEST_CASE("open branches block end-of-sequence") {
  const OutputVocab& vocab = memorized().vocab;
  Hypothesis h = start_for("C2H6O");
  apply_token(h, vocab.id_of("C"), vocab);
  apply_token(h, vocab.id_of("("), vocab);
  for (int id : allowed_tokens(h, vocab)) CHECK(id != OutputVocab::kEos);
  // and so do open ring digits
  Hypothesis r = start_for("C3H6");
  apply_token(r, vocab.id_of("C"), vocab);
  apply_token(r, vocab.id_of("1"), vocab);
  apply_token(r, vocab.id_of("C"), vocab);
  apply_token(r, vocab.id_of("C"), vocab);
  for (int id : allowed_tokens(r, vocab)) CHECK(id != OutputVocab::kEos);
  apply_token(r, vocab.id_of("1"), vocab);
  CHECK(allows_text(r, vocab, "<eos>"));
}

TEST_CASE("masked random walks never overspend the budget") {
  const OutputVocab& vocab = memorized().vocab;
  Rng rng(31);
  for (int round = 0; round < 200; ++round) {
    Hypothesis h = start_for(round % 2 ? "C4H8O" : "C3H7N");
    for (int step = 0; step < 24; ++step) {
      const std::vector<int> allowed = allowed_tokens(h, vocab);
      if (allowed.empty()) break;
      const int id = allowed[rng.index(allowed.size())];
      if (id == OutputVocab::kEos) break;
      apply_token(h, id, vocab);
      for (const auto& [elem, count] : h.budget.remaining.entries()) {
        CHECK(count >= 0);
      }
      CHECK(h.budget.emitted_h <= h.budget.h_target);
      CHECK(h.open_branches >= 0);
    }
  }
}

TEST_CASE("memorized molecules decode at rank 1 with exact formulas") {
  const auto& m = memorized();
  for (const char* smiles : {"CCO", "CCC", "CCN", "C1CC1"}) {
    const Record r = synth::synth_record(smiles);
    const InputSequence input =
        format_input(preprocess_spectrum(r.spectrum), r.formula,
                     m.input_vocab);
    BeamOptions opts;
    opts.beam = 8;
    opts.k = 4;
    const BeamResult result =
        beam_search(m.state.params, input, r.formula, m.vocab, opts);
    REQUIRE_FALSE(result.candidates.empty());
    CAPTURE(smiles);
    CHECK(canonical_or_empty(result.candidates[0].text) ==
          canonical_or_empty(smiles));
    for (const ScoredCandidate& c : result.candidates) {
      CHECK(formula_of(parse_smiles(c.text)) == r.formula);
    }
    // distinct canonical forms after deduplication
    std::set<std::string> canon;
    for (const ScoredCandidate& c : result.candidates) {
      CHECK(canon.insert(canonical_or_empty(c.text)).second);
    }
  }
}

TEST_CASE("beam one reduces to greedy and wider beams never lose score") {
  const auto& m = memorized();
  const Record r = synth::synth_record("CCO");
  const InputSequence input = format_input(preprocess_spectrum(r.spectrum),
                                           r.formula, m.input_vocab);
  BeamOptions one;
  one.beam = 1;
  one.k = 1;
  const BeamResult greedy =
      beam_search(m.state.params, input, r.formula, m.vocab, one);
  CHECK(greedy.candidates.size() == 1);

  double prev = -1e300;
  for (int width : {1, 2, 4, 8, 16}) {
    BeamOptions opts;
    opts.beam = width;
    opts.k = 1;
    const BeamResult result =
        beam_search(m.state.params, input, r.formula, m.vocab, opts);
    REQUIRE_FALSE(result.candidates.empty());
    CHECK(result.candidates[0].score >= prev);
    prev = result.candidates[0].score;
  }
}

TEST_CASE("unreachable formulas produce an empty beam") {
  const auto& m = memorized();
  const Record r = synth::synth_record("CCO");
  InputSequence input = format_input(preprocess_spectrum(r.spectrum),
                                     parse_formula("C2H6Se"), m.input_vocab);
  // Se never appears in the vocabulary, so the budget cannot be spent.
  CHECK_THROWS_AS(
      beam_search(m.state.params, input, parse_formula("C2H6Se"), m.vocab,
                  BeamOptions{.beam = 4, .k = 2}),
      EmptyBeam);
}

TEST_CASE("predict_topk wraps records and swallows empty beams") {
  const auto& m = memorized();
  Record r = synth::synth_record("CCO");
  PredictOptions opts;
  opts.beam.beam = 8;
  opts.beam.k = 1;
  const PredictionSet set =
      predict_topk(m.state.params, m.vocab, m.input_vocab, r, opts);
  CHECK(set.candidates.size() == 1);
  CHECK(set.target == "CCO");

  Record offmap = r;
  offmap.formula = parse_formula("C2H6Se");
  const PredictionSet empty =
      predict_topk(m.state.params, m.vocab, m.input_vocab, offmap, opts);
  CHECK(empty.candidates.empty());
}

TEST_CASE("beam parameters are validated") {
  const auto& m = memorized();
  const Record r = synth::synth_record("CCO");
  const InputSequence input = format_input(preprocess_spectrum(r.spectrum),
                                           r.formula, m.input_vocab);
  CHECK_THROWS_AS(beam_search(m.state.params, input, r.formula, m.vocab,
                              BeamOptions{.beam = 2, .k = 4}),
                  DomainError);
}
