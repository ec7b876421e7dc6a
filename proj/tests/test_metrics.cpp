// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "specnovo/errors.hpp"
#include "specnovo/metrics.hpp"
#include "specnovo/rng.hpp"
#include "support/synth.hpp"

using namespace specnovo;

namespace {

Fingerprint fp_of(const std::string& smiles) {
  return fingerprint(parse_smiles(smiles));
}

Fingerprint bits_at(std::initializer_list<int> bits, int width = 64) {
  Fingerprint fp(width);
  for (int b : bits) fp.set(b);
  return fp;
}

}  // namespace

TEST_CASE("tanimoto basics") {
  const Fingerprint f = fp_of("CCO");
  CHECK(tanimoto(f, f) == 1.0);
  CHECK(tanimoto(bits_at({1, 2, 3}), bits_at({4, 5})) == 0.0);
  CHECK(tanimoto(bits_at({1, 2, 3}), bits_at({2, 3, 4})) == 0.5);
  CHECK(tanimoto(Fingerprint(64), Fingerprint(64)) == 1.0);  // both empty
  CHECK_THROWS_AS(tanimoto(Fingerprint(64), Fingerprint(128)), DimensionError);
}

TEST_CASE("tanimoto is symmetric, bounded, and 1 only on equality") {
  Rng rng(3);
  const auto& mols = synth::small_molecules();
  for (int round = 0; round < 60; ++round) {
    const Fingerprint a = fp_of(mols[rng.index(mols.size())]);
    const Fingerprint b = fp_of(mols[rng.index(mols.size())]);
    const double t = tanimoto(a, b);
    CHECK(t == tanimoto(b, a));
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
    CHECK((t == 1.0) == (a == b));
  }
}

TEST_CASE("match_class thresholds") {
  CHECK(match_class(0.5) == MatchClass::Meaningful);
  CHECK(match_class(0.7) == MatchClass::Close);
  CHECK(match_class(0.4) == MatchClass::Meaningful);   // inclusive boundary
  CHECK(match_class(0.675) == MatchClass::Close);      // inclusive boundary
  CHECK(match_class(0.39) == MatchClass::None);
  CHECK(match_class(0.0) == MatchClass::None);
  CHECK(match_class(1.0) == MatchClass::Close);
  CHECK_THROWS_AS(match_class(-0.1), DomainError);
  CHECK_THROWS_AS(match_class(1.1), DomainError);
}

TEST_CASE("topk accuracy counts canonical matches at rank <= k") {
  PredictionSet rank2;
  rank2.target = "CCO";
  rank2.candidates = {"CCC", "OCC"};
  CHECK(topk_accuracy({rank2}, 1) == 0.0);
  CHECK(topk_accuracy({rank2}, 10) == 1.0);

  PredictionSet empty;
  empty.target = "CCO";
  CHECK(topk_accuracy({empty}, 10) == 0.0);

  PredictionSet traversal;
  traversal.target = "CCO";
  traversal.candidates = {"C(O)C"};
  CHECK(topk_accuracy({traversal}, 1) == 1.0);

  CHECK_THROWS_AS(topk_accuracy({rank2}, 0), DomainError);
}

TEST_CASE("topk accuracy is monotone in k") {
  Rng rng(8);
  const auto& mols = synth::small_molecules();
  std::vector<PredictionSet> preds;
  for (int i = 0; i < 12; ++i) {
    PredictionSet set;
    set.target = mols[rng.index(mols.size())];
    for (int j = 0; j < 5; ++j) {
      set.candidates.push_back(mols[rng.index(mols.size())]);
    }
    preds.push_back(std::move(set));
  }
  double prev = 0.0;
  for (int k = 1; k <= 5; ++k) {
    const double acc = topk_accuracy(preds, k);
    CHECK(acc >= prev);
    prev = acc;
  }
}

TEST_CASE("validity_rate") {
  bool warn = false;
  CHECK(validity_rate({"CCO", "C(("}, &warn) == 0.5);
  CHECK_FALSE(warn);
  CHECK(validity_rate({"C1CC1", "CCO"}) == 1.0);
  CHECK(validity_rate({}, &warn) == 0.0);
  CHECK(warn);
}

// Hand-computed fixture. Derivations, with path sets written out (letters
// are (element, bond) encodings; no hash collisions, asserted below):
//   s1  CCO  vs [CCO]          exact at rank 1: tan 1, mces 0
//   s2  CCO  vs [OCC]          same molecule:   tan 1, mces 0
//   s3  CCO  vs ["C((", CCO]   rank-1 invalid, rank-2 exact
//   s4  CCO  vs []             all-invalid (empty)
//   s5  CCO  vs ["xx"]         all-invalid
//   s6  C    vs [O]            paths {C} vs {O}: tan 0; no edges: mces 0
//   s7  CC   vs [C]            bits {C,C-C} vs {C}: tan 1/2; mces 1+0-0 = 1
//   s8  CCO  vs [CCN]          bits {C,O,CC,CO,CCO} vs {C,N,CC,CN,CCN}:
//                              common {C,CC} -> tan 2/8; mces 2+2-2*1 = 2
//   s9  CCCCO vs [CCCCC]       bits 9 vs 5, common {C,CC,CCC,CCCC} ->
//                              tan 4/10 = 0.4 (meaningful boundary);
//                              mces 4+4-2*3 = 2
//   s10 CCCCCC vs [CCCCC]      bits 6 vs 5, common 5 -> tan 5/6 (close);
//                              mces 5+4-2*4 = 1
TEST_CASE("evaluate_run reproduces the hand-computed report") {
  // Popcount preconditions guarantee the derivations above are collision
  // free at width 2048.
  CHECK(fp_of("C").popcount() == 1);
  CHECK(fp_of("O").popcount() == 1);
  CHECK(fp_of("CC").popcount() == 2);
  CHECK(fp_of("CCO").popcount() == 5);
  CHECK(fp_of("CCN").popcount() == 5);
  CHECK(fp_of("CCCCO").popcount() == 9);
  CHECK(fp_of("CCCCC").popcount() == 5);
  CHECK(fp_of("CCCCCC").popcount() == 6);
  CHECK(tanimoto(fp_of("C"), fp_of("O")) == 0.0);
  CHECK(tanimoto(fp_of("CC"), fp_of("C")) == 0.5);
  CHECK(tanimoto(fp_of("CCO"), fp_of("CCN")) == 0.25);
  CHECK(tanimoto(fp_of("CCCCO"), fp_of("CCCCC")) == 0.4);
  CHECK(tanimoto(fp_of("CCCCCC"), fp_of("CCCCC")) == 5.0 / 6.0);

  auto set = [](const std::string& target,
                std::vector<std::string> candidates) {
    PredictionSet s;
    s.target = target;
    s.candidates = std::move(candidates);
    return s;
  };
  const std::vector<PredictionSet> preds = {
      set("CCO", {"CCO"}),
      set("CCO", {"OCC"}),
      set("CCO", {"C((", "CCO"}),
      set("CCO", {}),
      set("CCO", {"xx"}),
      set("C", {"O"}),
      set("CC", {"C"}),
      set("CCO", {"CCN"}),
      set("CCCCO", {"CCCCC"}),
      set("CCCCCC", {"CCCCC"}),
  };
  const EvalReport r = evaluate_run(preds);

  CHECK(r.num_sets == 10);
  CHECK(r.num_candidates == 10);
  CHECK(r.all_invalid_sets == 2);
  CHECK(r.top1_accuracy == 0.2);
  CHECK(r.topk_accuracy == 0.3);
  CHECK(r.validity_rate == 0.8);
  CHECK_FALSE(r.empty_input_warning);
  // means over the 8 scored sets, in set order
  const double expected_tan =
      (1.0 + 1.0 + 1.0 + 0.0 + 0.5 + 0.25 + 0.4 + 5.0 / 6.0) / 8.0;
  CHECK(r.mean_tanimoto_top1 == doctest::Approx(expected_tan).epsilon(1e-15));
  CHECK(r.mean_tanimoto_topk == doctest::Approx(expected_tan).epsilon(1e-15));
  const double expected_mces = (0.0 + 0.0 + 0.0 + 0.0 + 1.0 + 2.0 + 2.0 + 1.0) / 8.0;
  CHECK(r.mean_mces_top1 == doctest::Approx(expected_mces).epsilon(1e-15));
  CHECK(r.mean_mces_topk == doctest::Approx(expected_mces).epsilon(1e-15));
  // cutoffs: s1,s2,s3 (1.0), s7 (0.5), s9 (0.4), s10 (5/6) meaningful;
  // s1,s2,s3,s10 close
  CHECK(r.meaningful_top1 == 0.6);
  CHECK(r.close_top1 == 0.4);
  CHECK(r.meaningful_topk == 0.6);
  CHECK(r.close_topk == 0.4);
  CHECK(r.close_top1 <= r.meaningful_top1);

  // all-exact predictions
  const EvalReport perfect = evaluate_run({set("CCO", {"CCO"})});
  CHECK(perfect.top1_accuracy == 1.0);
  CHECK(perfect.topk_accuracy == 1.0);
  CHECK(perfect.mean_tanimoto_top1 == 1.0);
  CHECK(perfect.mean_mces_top1 == 0.0);
}

TEST_CASE("evaluate_run rejects empty input") {
  CHECK_THROWS_AS(evaluate_run({}), DomainError);
}

TEST_CASE("predictions file round-trip") {
  std::vector<PredictionSet> preds;
  PredictionSet s;
  s.target = "CCO";
  s.candidates = {"CCO", "CCC"};
  s.scores = {-0.1, -0.4};
  preds.push_back(s);
  const std::string path = "predictions_roundtrip.jsonl";
  save_predictions(preds, path);
  const std::vector<PredictionSet> loaded = load_predictions(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].target == "CCO");
  CHECK(loaded[0].candidates == preds[0].candidates);
  CHECK(loaded[0].scores == preds[0].scores);
  std::remove(path.c_str());
}

TEST_CASE("report renders JSON and a table") {
  const EvalReport r = evaluate_run({[&] {
    PredictionSet s;
    s.target = "CCO";
    s.candidates = {"CCO"};
    return s;
  }()});
  const std::string j = report_to_json(r);
  CHECK(j.find("top1_accuracy") != std::string::npos);
  const std::string t = report_to_table(r);
  CHECK(t.find("accuracy") != std::string::npos);
}

TEST_CASE("stereo-aware comparison keys distinguish written chirality") {
  // Same constitution, parity-normalized digests must differ.
  const std::string l = "N[C@H](C)C(=O)O";
  const std::string d = "N[C@@H](C)C(=O)O";
  CHECK(comparison_key(l, false) == comparison_key(d, false));
  CHECK(comparison_key(l, true) != comparison_key(d, true));
  // Equivalent writings of one enantiomer agree under the stereo key.
  const std::string l2 = "C[C@@H](N)C(=O)O";
  CHECK(comparison_key(l, true) == comparison_key(l2, true));
  CHECK(comparison_key("C((", true).empty());
}
