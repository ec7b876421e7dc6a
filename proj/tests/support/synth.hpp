// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic corpora for the harnesses: small molecules with
// pseudo-random spectra derived from the SMILES hash, plus a two-regime
// domain-shift task.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "specnovo/fingerprint.hpp"
#include "specnovo/rng.hpp"
#include "specnovo/smiles.hpp"
#include "specnovo/spectra.hpp"

namespace specnovo::synth {

inline const std::vector<std::string>& small_molecules() {
  static const std::vector<std::string> mols = {
      "C",          "CC",         "CCC",        "CCCC",      "CC(C)C",
      "CCCCC",      "CC(C)(C)C",  "CCO",        "CCCO",      "CC(C)O",
      "CCN",        "CCCN",       "CC(C)N",     "CO",        "CN",
      "COC",        "CCOC",       "CCOCC",      "OCCO",      "OCCCO",
      "C=C",        "CC=C",       "C=CC=C",     "C#C",       "CC#C",
      "C#N",        "CC#N",       "CCC#N",      "CC=O",      "CCC=O",
      "CC(C)=O",    "CC(=O)O",    "CC(=O)N",    "CC(=O)OC",  "NCC(=O)O",
      "C1CC1",      "C1CCC1",     "C1CCCC1",    "C1CCCCC1",  "CC1CC1",
      "C1CO1",      "C1CCO1",     "C1CCOC1",    "N1CCC1",    "C1CCNC1",
      "c1ccccc1",   "Cc1ccccc1",  "Oc1ccccc1",  "Nc1ccccc1", "c1ccncc1",
      "c1ccoc1",    "c1ccsc1",    "c1cc[nH]c1", "CCS",       "CSC",
      "CCCl",       "CCBr",       "CCI",        "CCF",       "FC(F)F",
      "ClCCl",      "CCP",        "CNC",        "CN(C)C",    "CCCCN",
      "NCCN",       "OC(=O)CCl",  "CC(Cl)C",    "C=O",       "OC=O",
  };
  return mols;
}

// Spectrum synthesized from the SMILES hash: peak count, positions and
// intensities are a pure function of (smiles, salt, mz window).
inline Record synth_record(const std::string& smiles, std::uint64_t salt = 0,
                           double mz_lo = 50.0, double mz_hi = 400.0) {
  Record r;
  r.smiles = smiles;
  const MolGraph g = parse_smiles(smiles);
  r.formula = formula_of(g);
  std::vector<std::uint8_t> bytes(smiles.begin(), smiles.end());
  Rng rng(fnv1a(bytes) ^ salt);
  const int peaks = 3 + static_cast<int>(rng.index(2));
  for (int i = 0; i < peaks; ++i) {
    Peak p;
    p.mz = rng.uniform(mz_lo, mz_hi);
    p.intensity = rng.uniform(5.0, 1000.0);
    r.spectrum.peaks.push_back(p);
  }
  std::sort(r.spectrum.peaks.begin(), r.spectrum.peaks.end(),
            [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
  return r;
}

inline std::vector<Record> overfit_corpus(std::size_t count = 32) {
  std::vector<Record> records;
  const auto& mols = small_molecules();
  for (std::size_t i = 0; i < count && i < mols.size(); ++i) {
    records.push_back(synth_record(mols[i]));
  }
  return records;
}

// Domain-shift task: regime A (amines, nitriles, plain skeletons) in a low
// m/z window, regime B (ethers, alcohols, carbonyls with shared formulas,
// so the formula constraint cannot disambiguate) in a high window. Tokens
// of B are a subset of A's token set, so one vocabulary covers both.
inline const std::vector<std::string>& regime_a_molecules() {
  static const std::vector<std::string> mols = {
      "CC",      "CCC",     "CCCC",    "CCCCC",  "CC(C)C",  "CC(C)(C)C",
      "CCN",     "CCCN",    "CC(C)N",  "CNC",    "CCNCC",   "CC#N",
      "CCC#N",   "NCCN",    "CCCCN",   "C1CC1",  "C1CCC1",  "C1CCCC1",
      "CC1CC1",  "OCCO",    "CC(=O)O", "CC(=O)C", "OCCCO",  "CCCCCO",
  };
  return mols;
}

inline const std::vector<std::string>& regime_b_molecules() {
  static const std::vector<std::string> mols = {
      "CCCO",  "CC(C)O",  "CCOC",    "CCCCO", "CC(C)CO", "CCC(C)O",
      "CCOCC", "CC(=O)CC", "CCCC=O", "C1CCO1", "CCO",     "COC",
  };
  return mols;
}

struct DomainShiftTask {
  std::vector<Record> base_train;  // regime A, source domain
  std::vector<Record> pool;        // A + B, labeled candidate pool
  std::vector<Record> test;        // regime B spectra, treated as unlabeled
};

inline DomainShiftTask domain_shift_task() {
  DomainShiftTask task;
  for (const std::string& m : regime_a_molecules()) {
    task.base_train.push_back(synth_record(m, 0xA, 50.0, 250.0));
  }
  task.pool = task.base_train;
  for (const std::string& m : regime_b_molecules()) {
    task.pool.push_back(synth_record(m, 0xB, 300.0, 600.0));
  }
  for (const std::string& m : regime_b_molecules()) {
    Record r = synth_record(m, 0xB, 300.0, 600.0);
    task.test.push_back(r);  // same spectra as the pool twins, labels kept
  }                          // only for scoring
  return task;
}

}  // namespace specnovo::synth
