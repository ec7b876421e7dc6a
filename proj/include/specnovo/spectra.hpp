// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "specnovo/elements.hpp"

namespace specnovo {

struct Peak {
  double mz = 0.0;        // > 0
  double intensity = 0.0; // >= 0
};

enum class Adduct { H, Na };

Adduct adduct_from_string(const std::string& s);
std::string adduct_to_string(Adduct a);

// Peaks sorted ascending by m/z (stable for duplicate m/z values).
struct Spectrum {
  std::vector<Peak> peaks;
  Adduct adduct = Adduct::H;
  std::optional<double> collision_energy;
  std::string source;

  bool empty() const { return peaks.empty(); }
};

// Scales intensities so the maximum equals 100. m/z and order untouched.
// Throws EmptySpectrumError on empty input, DomainError when max is 0.
Spectrum normalize_spectrum(const Spectrum& s);

// Drops peaks with intensity < threshold (strict). May return empty.
Spectrum filter_peaks(const Spectrum& s, double threshold = 1.0);

// Keeps the `cap` most intense peaks (ties to lower m/z), m/z order restored.
Spectrum cap_peaks(const Spectrum& s, std::size_t cap = 512);

// normalize + filter + cap in the documented order.
Spectrum preprocess_spectrum(const Spectrum& s, double threshold = 1.0,
                             std::size_t cap = 512);

// Character-level input vocabulary: digits, '.', ':', ' ', '|', one token
// per element symbol, plus padding. Fixed and corpus-independent.
class InputVocab {
 public:
  InputVocab();

  int pad_id() const { return 0; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_[id]; }

  // Tokenizes a format_input string. Throws TokenError on anything the
  // vocabulary cannot represent.
  std::vector<int> tokenize(const std::string& raw) const;
  std::string detokenize(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
};

struct InputSequence {
  std::vector<int> tokens;
  std::string raw;
};

// Renders "<formula>|<mz>:<intensity> ..." with m/z at 4 decimals and
// intensity at 2, then tokenizes. Spectrum must be preprocessed, non-empty.
InputSequence format_input(const Spectrum& s, const ElementCounts& formula,
                           const InputVocab& vocab);

// One dataset record. `smiles` is empty for unlabeled test points.
struct Record {
  Spectrum spectrum;
  ElementCounts formula;
  std::string smiles;
};

// Parses one JSONL object with fields `spectrum` (list of [mz, intensity]),
// `formula`, and optional `smiles`, `adduct`, `collision_energy`, `source`.
Record parse_spectrum_record(const std::string& line);

std::string record_to_json(const Record& r);

// Whole-file helpers. Line numbers in errors are 1-based.
std::vector<Record> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Record>& records, const std::string& path);

// Minimal MGF import: BEGIN IONS/END IONS blocks with PEPMASS, CHARGE,
// FORMULA=/SMILES= headers when present, and "mz intensity" peak lines.
// Blocks without a formula derive one from SMILES; blocks with neither
// are rejected.
std::vector<Record> load_mgf(const std::string& path);

}  // namespace specnovo
