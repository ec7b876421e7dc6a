// SPDX-License-Identifier: Apache-2.0
#include "specnovo/spectra.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "specnovo/errors.hpp"
#include "specnovo/smiles.hpp"

namespace specnovo {

using nlohmann::json;

Adduct adduct_from_string(const std::string& s) {
  if (s == "[M+H]+" || s == "H+" || s == "M+H") return Adduct::H;
  if (s == "[M+Na]+" || s == "Na+" || s == "M+Na") return Adduct::Na;
  throw DomainError("unknown adduct '" + s + "'");
}

std::string adduct_to_string(Adduct a) {
  return a == Adduct::H ? "[M+H]+" : "[M+Na]+";
}

Spectrum normalize_spectrum(const Spectrum& s) {
  if (s.empty()) throw EmptySpectrumError("cannot normalize an empty spectrum");
  double max_intensity = 0.0;
  for (const Peak& p : s.peaks) max_intensity = std::max(max_intensity, p.intensity);
  if (max_intensity <= 0.0) {
    throw DomainError("cannot normalize a spectrum with zero maximum intensity");
  }
  if (max_intensity == 100.0) return s;  // keeps idempotence bit-exact
  Spectrum out = s;
  const double scale = 100.0 / max_intensity;
  for (Peak& p : out.peaks) p.intensity *= scale;
  return out;
}

Spectrum filter_peaks(const Spectrum& s, double threshold) {
  Spectrum out = s;
  out.peaks.clear();
  for (const Peak& p : s.peaks) {
    if (p.intensity >= threshold) out.peaks.push_back(p);
  }
  return out;
}

Spectrum cap_peaks(const Spectrum& s, std::size_t cap) {
  if (s.peaks.size() <= cap) return s;
  std::vector<std::size_t> order(s.peaks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&s](std::size_t a, std::size_t b) {
    return s.peaks[a].intensity > s.peaks[b].intensity;
  });
  order.resize(cap);
  std::sort(order.begin(), order.end());  // restore m/z order
  Spectrum out = s;
  out.peaks.clear();
  out.peaks.reserve(cap);
  for (std::size_t i : order) out.peaks.push_back(s.peaks[i]);
  return out;
}

Spectrum preprocess_spectrum(const Spectrum& s, double threshold,
                             std::size_t cap) {
  return cap_peaks(filter_peaks(normalize_spectrum(s), threshold), cap);
}

InputVocab::InputVocab() {
  tokens_.push_back("<pad>");
  for (char c = '0'; c <= '9'; ++c) tokens_.emplace_back(1, c);
  tokens_.emplace_back(".");
  tokens_.emplace_back(":");
  tokens_.emplace_back(" ");
  tokens_.emplace_back("|");
  for (int i = 0; i < kNumElements; ++i) {
    tokens_.push_back(element_symbol(static_cast<Element>(i)));
  }
}

std::vector<int> InputVocab::tokenize(const std::string& raw) const {
  std::vector<int> ids;
  ids.reserve(raw.size());
  auto id_of = [this](const std::string& tok) -> int {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i] == tok) return static_cast<int>(i);
    }
    return -1;
  };
  std::size_t i = 0;
  while (i < raw.size()) {
    int id = -1;
    std::size_t len = 1;
    if (std::isupper(static_cast<unsigned char>(raw[i]))) {
      // Element symbol; two-letter match first.
      if (i + 1 < raw.size() &&
          std::islower(static_cast<unsigned char>(raw[i + 1]))) {
        id = id_of(raw.substr(i, 2));
        if (id >= 0) len = 2;
      }
      if (id < 0) id = id_of(raw.substr(i, 1));
    } else {
      id = id_of(raw.substr(i, 1));
    }
    if (id < 0) {
      throw TokenError("input tokenizer: unrecognized character '" +
                           raw.substr(i, 1) + "' at position " +
                           std::to_string(i),
                       i);
    }
    ids.push_back(id);
    i += len;
  }
  return ids;
}

std::string InputVocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) {
      throw TokenError("input detokenizer: id out of range: " +
                       std::to_string(id));
    }
    if (id == pad_id()) continue;
    out += tokens_[id];
  }
  return out;
}

InputSequence format_input(const Spectrum& s, const ElementCounts& formula,
                           const InputVocab& vocab) {
  if (s.empty()) throw EmptySpectrumError("cannot format an empty spectrum");
  std::string raw = formula.to_string();
  raw += '|';
  char buf[64];
  for (std::size_t i = 0; i < s.peaks.size(); ++i) {
    if (i > 0) raw += ' ';
    std::snprintf(buf, sizeof(buf), "%.4f:%.2f", s.peaks[i].mz,
                  s.peaks[i].intensity);
    raw += buf;
  }
  InputSequence seq;
  seq.tokens = vocab.tokenize(raw);
  seq.raw = std::move(raw);
  return seq;
}

namespace {

Record record_from_json(const json& j) {
  Record r;
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  if (!j.contains("spectrum") || !j["spectrum"].is_array()) {
    throw ParseError("record missing 'spectrum' array");
  }
  for (const auto& pair : j["spectrum"]) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() ||
        !pair[1].is_number()) {
      throw ParseError("spectrum entries must be [mz, intensity] numbers");
    }
    Peak p{pair[0].get<double>(), pair[1].get<double>()};
    if (p.mz <= 0.0) throw DomainError("peak m/z must be positive");
    if (p.intensity < 0.0) throw DomainError("peak intensity must be non-negative");
    r.spectrum.peaks.push_back(p);
  }
  std::stable_sort(r.spectrum.peaks.begin(), r.spectrum.peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
  if (!j.contains("formula") || !j["formula"].is_string()) {
    throw ParseError("record missing 'formula' string");
  }
  r.formula = parse_formula(j["formula"].get<std::string>());
  if (j.contains("smiles") && !j["smiles"].is_null()) {
    r.smiles = j["smiles"].get<std::string>();
  }
  if (j.contains("adduct") && !j["adduct"].is_null()) {
    r.spectrum.adduct = adduct_from_string(j["adduct"].get<std::string>());
  }
  if (j.contains("collision_energy") && j["collision_energy"].is_number()) {
    r.spectrum.collision_energy = j["collision_energy"].get<double>();
  }
  if (j.contains("source") && j["source"].is_string()) {
    r.spectrum.source = j["source"].get<std::string>();
  }
  return r;
}

}  // namespace

Record parse_spectrum_record(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON: " + std::string(e.what()), e.byte);
  }
  return record_from_json(j);
}

std::string record_to_json(const Record& r) {
  json j;
  json peaks = json::array();
  for (const Peak& p : r.spectrum.peaks) {
    peaks.push_back(json::array({p.mz, p.intensity}));
  }
  j["spectrum"] = std::move(peaks);
  j["formula"] = r.formula.to_string();
  if (!r.smiles.empty()) j["smiles"] = r.smiles;
  j["adduct"] = adduct_to_string(r.spectrum.adduct);
  if (r.spectrum.collision_energy) {
    j["collision_energy"] = *r.spectrum.collision_energy;
  }
  if (!r.spectrum.source.empty()) j["source"] = r.spectrum.source;
  return j.dump();
}

std::vector<Record> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(parse_spectrum_record(line));
    } catch (const Error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what(),
                       line_no);
    }
  }
  return records;
}

void save_jsonl(const std::vector<Record>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const Record& r : records) out << record_to_json(r) << '\n';
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<Record> load_mgf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open MGF file: " + path);
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  bool in_block = false;
  Record current;
  std::string formula_text;
  std::size_t block_start = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "BEGIN IONS") {
      if (in_block) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                             ": nested BEGIN IONS",
                         line_no);
      }
      in_block = true;
      current = Record{};
      formula_text.clear();
      block_start = line_no;
      continue;
    }
    if (t == "END IONS") {
      if (!in_block) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                             ": END IONS without BEGIN IONS",
                         line_no);
      }
      in_block = false;
      if (!formula_text.empty()) {
        current.formula = parse_formula(formula_text);
      } else if (!current.smiles.empty()) {
        current.formula = formula_of(parse_smiles(tokenize_smiles(current.smiles)));
      } else {
        throw ParseError(path + ":" + std::to_string(block_start) +
                             ": block has neither FORMULA nor SMILES",
                         block_start);
      }
      std::stable_sort(
          current.spectrum.peaks.begin(), current.spectrum.peaks.end(),
          [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
      records.push_back(std::move(current));
      continue;
    }
    if (!in_block) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                           ": content outside BEGIN IONS block",
                       line_no);
    }
    auto eq = t.find('=');
    if (eq != std::string::npos &&
        !std::isdigit(static_cast<unsigned char>(t[0]))) {
      std::string key = t.substr(0, eq);
      std::string value = trim(t.substr(eq + 1));
      if (key == "FORMULA") {
        formula_text = value;
      } else if (key == "SMILES") {
        current.smiles = value;
      } else if (key == "ADDUCT") {
        current.spectrum.adduct = adduct_from_string(value);
      } else if (key == "COLLISION_ENERGY") {
        current.spectrum.collision_energy = std::stod(value);
      } else if (key == "TITLE") {
        current.spectrum.source = value;
      }
      // PEPMASS, CHARGE and anything else are read and ignored.
      continue;
    }
    std::istringstream peak_line(t);
    double mz = 0.0, intensity = 0.0;
    if (!(peak_line >> mz >> intensity)) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                           ": malformed peak line '" + t + "'",
                       line_no);
    }
    if (mz <= 0.0 || intensity < 0.0) {
      throw DomainError(path + ":" + std::to_string(line_no) +
                        ": peak values out of range");
    }
    current.spectrum.peaks.push_back(Peak{mz, intensity});
  }
  if (in_block) {
    throw ParseError(path + ": unterminated BEGIN IONS block", block_start);
  }
  return records;
}

}  // namespace specnovo
