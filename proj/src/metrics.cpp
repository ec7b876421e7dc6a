// SPDX-License-Identifier: Apache-2.0
#include "specnovo/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "specnovo/errors.hpp"
#include "specnovo/mces.hpp"

namespace specnovo {

using nlohmann::json;

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.width() != b.width()) {
    throw DimensionError("tanimoto: fingerprint widths differ (" +
                         std::to_string(a.width()) + " vs " +
                         std::to_string(b.width()) + ")");
  }
  std::uint64_t both = 0, any = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) {
    both += std::popcount(a.words()[i] & b.words()[i]);
    any += std::popcount(a.words()[i] | b.words()[i]);
  }
  if (any == 0) return 1.0;
  return static_cast<double>(both) / static_cast<double>(any);
}

MatchClass match_class(double t) {
  if (t < 0.0 || t > 1.0) {
    throw DomainError("match_class expects a similarity in [0,1], got " +
                      std::to_string(t));
  }
  if (t >= kCloseMatchThreshold) return MatchClass::Close;
  if (t >= kMeaningfulMatchThreshold) return MatchClass::Meaningful;
  return MatchClass::None;
}

namespace {

// Parity-normalized tetrahedral digest; see smiles.hpp stereo_slots.
std::string stereo_digest(const MolGraph& g, const std::vector<int>& order) {
  std::vector<std::pair<int, int>> entries;
  for (int i = 0; i < g.num_atoms(); ++i) {
    const int tag = i < static_cast<int>(g.chiral_tags.size())
                        ? g.chiral_tags[i]
                        : 0;
    if (tag == 0) continue;
    const std::vector<int>& slots = g.stereo_slots[i];
    if (slots.size() != 4) continue;  // cannot normalize, skip
    // Positions in canonical output; the H slot sorts first.
    std::vector<int> mapped;
    for (int s : slots) mapped.push_back(s < 0 ? -1 : order[s]);
    // Parity of the permutation sorting `mapped`.
    std::vector<int> perm = mapped;
    int swaps = 0;
    for (std::size_t x = 0; x < perm.size(); ++x) {
      for (std::size_t y = x + 1; y < perm.size(); ++y) {
        if (perm[y] < perm[x]) {
          std::swap(perm[x], perm[y]);
          ++swaps;
        }
      }
    }
    const int norm = (swaps % 2 == 0) ? tag : (tag == 1 ? 2 : 1);
    entries.push_back({order[i], norm});
  }
  std::sort(entries.begin(), entries.end());
  std::string out;
  for (const auto& [pos, tag] : entries) {
    out += std::to_string(pos) + (tag == 1 ? "@" : "@@");
  }
  return out;
}

}  // namespace

std::string comparison_key(const std::string& smiles, bool stereo_aware) {
  try {
    const MolGraph g = parse_smiles(tokenize_smiles(smiles));
    CanonicalResult canon = canonicalize_full(g);
    if (!stereo_aware) return canon.smiles;
    const std::string digest = stereo_digest(g, canon.order);
    return digest.empty() ? canon.smiles : canon.smiles + ";" + digest;
  } catch (const Error&) {
    return "";
  }
}

double topk_accuracy(const std::vector<PredictionSet>& preds, int k) {
  if (k < 1) throw DomainError("topk_accuracy requires k >= 1");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PredictionSet& set : preds) {
    const std::string target_key = comparison_key(set.target, false);
    if (target_key.empty()) continue;
    const int limit = std::min<int>(k, static_cast<int>(set.candidates.size()));
    for (int i = 0; i < limit; ++i) {
      const std::string key = comparison_key(set.candidates[i], false);
      if (!key.empty() && key == target_key) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double validity_rate(const std::vector<std::string>& candidates,
                     bool* empty_warning) {
  if (empty_warning) *empty_warning = candidates.empty();
  if (candidates.empty()) return 0.0;
  std::size_t valid = 0;
  for (const std::string& c : candidates) {
    try {
      parse_smiles(tokenize_smiles(c));
      ++valid;
    } catch (const Error&) {
    }
  }
  return static_cast<double>(valid) / static_cast<double>(candidates.size());
}

EvalReport evaluate_run(const std::vector<PredictionSet>& preds,
                        const EvaluateOptions& opts) {
  if (preds.empty()) throw DomainError("evaluate_run requires predictions");
  EvalReport report;
  report.num_sets = preds.size();

  std::size_t top1_hits = 0, topk_hits = 0;
  std::size_t valid_candidates = 0;
  double sum_tan1 = 0.0, sum_tank = 0.0, sum_mces1 = 0.0, sum_mcesk = 0.0;
  std::size_t meaningful1 = 0, close1 = 0, meaningfulk = 0, closek = 0;
  std::size_t scored_sets = 0;

  for (const PredictionSet& set : preds) {
    const std::string target_key = comparison_key(set.target, opts.stereo_aware);
    if (target_key.empty()) {
      throw DomainError("evaluate_run: invalid target SMILES '" + set.target +
                        "'");
    }
    const MolGraph target_graph = parse_smiles(tokenize_smiles(set.target));
    const Fingerprint target_fp =
        fingerprint(target_graph, opts.fingerprint_width);

    const int limit =
        std::min<int>(opts.k, static_cast<int>(set.candidates.size()));
    report.num_candidates += static_cast<std::size_t>(limit);

    bool top1_hit = false, topk_hit = false;
    bool have_valid = false;
    double tan1 = 0.0, mces1 = 0.0;      // best-ranked valid candidate
    double tank_best = 0.0;              // max similarity over valid
    double mcesk_best = 0.0;             // min distance over valid
    double mcesk_sum = 0.0;
    std::size_t mcesk_count = 0;

    for (int i = 0; i < limit; ++i) {
      MolGraph g;
      try {
        g = parse_smiles(tokenize_smiles(set.candidates[i]));
      } catch (const Error&) {
        continue;
      }
      ++valid_candidates;
      const std::string key = comparison_key(set.candidates[i], opts.stereo_aware);
      if (key == target_key) {
        topk_hit = true;
        if (i == 0) top1_hit = true;
      }
      const double tan = tanimoto(target_fp, fingerprint(g, opts.fingerprint_width));
      const bool oversized =
          std::max(g.num_atoms(), target_graph.num_atoms()) >
          opts.mces_exact_atom_limit;
      const double dist =
          mces_distance(target_graph, g,
                        oversized ? std::optional<double>(opts.mces_bound)
                                  : std::nullopt,
                        opts.mces_exact_atom_limit);
      if (!have_valid) {
        tan1 = tan;
        mces1 = dist;
        tank_best = tan;
        mcesk_best = dist;
        have_valid = true;
      } else {
        tank_best = std::max(tank_best, tan);
        mcesk_best = std::min(mcesk_best, dist);
      }
      mcesk_sum += dist;
      ++mcesk_count;
    }

    if (top1_hit) ++top1_hits;
    if (topk_hit) ++topk_hits;
    if (have_valid) {
      ++scored_sets;
      sum_tan1 += tan1;
      sum_tank += tank_best;
      sum_mces1 += mces1;
      sum_mcesk += opts.mces_topk_mean
                       ? mcesk_sum / static_cast<double>(mcesk_count)
                       : mcesk_best;
      if (tan1 >= kMeaningfulMatchThreshold) ++meaningful1;
      if (tan1 >= kCloseMatchThreshold) ++close1;
      if (tank_best >= kMeaningfulMatchThreshold) ++meaningfulk;
      if (tank_best >= kCloseMatchThreshold) ++closek;
    } else {
      ++report.all_invalid_sets;
    }
  }

  const double n = static_cast<double>(preds.size());
  report.top1_accuracy = static_cast<double>(top1_hits) / n;
  report.topk_accuracy = static_cast<double>(topk_hits) / n;
  report.meaningful_top1 = static_cast<double>(meaningful1) / n;
  report.close_top1 = static_cast<double>(close1) / n;
  report.meaningful_topk = static_cast<double>(meaningfulk) / n;
  report.close_topk = static_cast<double>(closek) / n;
  if (scored_sets > 0) {
    const double m = static_cast<double>(scored_sets);
    report.mean_tanimoto_top1 = sum_tan1 / m;
    report.mean_tanimoto_topk = sum_tank / m;
    report.mean_mces_top1 = sum_mces1 / m;
    report.mean_mces_topk = sum_mcesk / m;
  }
  if (report.num_candidates > 0) {
    report.validity_rate = static_cast<double>(valid_candidates) /
                           static_cast<double>(report.num_candidates);
  } else {
    report.empty_input_warning = true;
  }
  return report;
}

std::vector<PredictionSet> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path);
  std::vector<PredictionSet> preds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                           ": malformed JSON: " + e.what(),
                       line_no);
    }
    PredictionSet set;
    if (!j.contains("target") || !j["target"].is_string()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                           ": prediction record missing 'target'",
                       line_no);
    }
    set.target = j["target"].get<std::string>();
    if (j.contains("candidates")) {
      for (const auto& c : j["candidates"]) {
        set.candidates.push_back(c.get<std::string>());
      }
    }
    if (j.contains("scores")) {
      for (const auto& s : j["scores"]) set.scores.push_back(s.get<double>());
    }
    if (j.contains("k")) set.k = j["k"].get<int>();
    preds.push_back(std::move(set));
  }
  if (preds.empty()) {
    throw ParseError("predictions file is empty: " + path);
  }
  return preds;
}

void save_predictions(const std::vector<PredictionSet>& preds,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions file: " + path);
  for (const PredictionSet& set : preds) {
    json j;
    j["target"] = set.target;
    j["candidates"] = set.candidates;
    j["scores"] = set.scores;
    j["k"] = set.k;
    out << j.dump() << '\n';
  }
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["num_sets"] = r.num_sets;
  j["num_candidates"] = r.num_candidates;
  j["all_invalid_sets"] = r.all_invalid_sets;
  j["top1_accuracy"] = r.top1_accuracy;
  j["topk_accuracy"] = r.topk_accuracy;
  j["mean_tanimoto_top1"] = r.mean_tanimoto_top1;
  j["mean_tanimoto_topk"] = r.mean_tanimoto_topk;
  j["mean_mces_top1"] = r.mean_mces_top1;
  j["mean_mces_topk"] = r.mean_mces_topk;
  j["validity_rate"] = r.validity_rate;
  j["empty_input_warning"] = r.empty_input_warning;
  j["meaningful_top1"] = r.meaningful_top1;
  j["close_top1"] = r.close_top1;
  j["meaningful_topk"] = r.meaningful_topk;
  j["close_topk"] = r.close_topk;
  return j.dump(2);
}

std::string report_to_table(const EvalReport& r) {
  char line[160];
  std::ostringstream out;
  out << "metric                     top-1      top-k\n";
  out << "-------------------------------------------\n";
  std::snprintf(line, sizeof(line), "%-24s %8.4f   %8.4f\n", "accuracy",
                r.top1_accuracy, r.topk_accuracy);
  out << line;
  std::snprintf(line, sizeof(line), "%-24s %8.4f   %8.4f\n", "tanimoto (mean)",
                r.mean_tanimoto_top1, r.mean_tanimoto_topk);
  out << line;
  std::snprintf(line, sizeof(line), "%-24s %8.4f   %8.4f\n", "mces (mean)",
                r.mean_mces_top1, r.mean_mces_topk);
  out << line;
  std::snprintf(line, sizeof(line), "%-24s %8.4f   %8.4f\n",
                "meaningful match >=0.4", r.meaningful_top1, r.meaningful_topk);
  out << line;
  std::snprintf(line, sizeof(line), "%-24s %8.4f   %8.4f\n",
                "close match >=0.675", r.close_top1, r.close_topk);
  out << line;
  out << "-------------------------------------------\n";
  std::snprintf(line, sizeof(line), "valid SMILES rate  %.4f over %zu candidates\n",
                r.validity_rate, r.num_candidates);
  out << line;
  std::snprintf(line, sizeof(line),
                "sets %zu, all-invalid sets excluded from means: %zu\n",
                r.num_sets, r.all_invalid_sets);
  out << line;
  return out.str();
}

}  // namespace specnovo
