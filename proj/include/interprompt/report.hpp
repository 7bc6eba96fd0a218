#pragma once

// Evaluation of parsed predictions against gold posts and rendering of the
// dataset-statistics, classification, significance and explanation tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "interprompt/completion_parser.hpp"
#include "interprompt/corpus.hpp"
#include "interprompt/manifest.hpp"
#include "interprompt/metrics.hpp"
#include "interprompt/significance.hpp"

namespace interprompt {

/// One line of a predictions file.
struct PredictionRecord {
  std::string run_id;
  std::string id;
  std::string prompt_hash;
  std::optional<std::string> completion;
  std::optional<std::string> error;
};

inline nlohmann::ordered_json prediction_to_json(const PredictionRecord& p, const PromptTemplate& tpl) {
  nlohmann::ordered_json j;
  j["run_id"] = p.run_id;
  j["id"] = p.id;
  j["prompt_hash"] = p.prompt_hash;
  j["completion"] = p.completion ? nlohmann::ordered_json(*p.completion) : nlohmann::ordered_json(nullptr);
  j["error"] = p.error ? nlohmann::ordered_json(*p.error) : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json parse = nullptr;
  auto diagnostics = nlohmann::ordered_json::array();
  if (p.completion) {
    try {
      const auto parsed = parse_completion(*p.completion, tpl);
      parse = nlohmann::ordered_json::object();
      parse["status"] = parsed.exact ? "exact" : "repaired";
      parse["tbe_label"] = parsed.tbe_label ? 1 : 0;
      parse["pbu_label"] = parsed.pbu_label ? 1 : 0;
      parse["tbe_cue"] = parsed.tbe_cue ? nlohmann::ordered_json(*parsed.tbe_cue) : nlohmann::ordered_json(nullptr);
      parse["pbu_cue"] = parsed.pbu_cue ? nlohmann::ordered_json(*parsed.pbu_cue) : nlohmann::ordered_json(nullptr);
      for (const auto& d : parsed.diagnostics)
        diagnostics.push_back({{"kind", std::string(to_string(d.kind))}, {"detail", d.detail}});
    } catch (const UnparseableCompletion& e) {
      parse = {{"status", "unparseable"}, {"reason", e.reason()}};
    }
  }
  j["parse"] = parse;
  j["diagnostics"] = diagnostics;
  return j;
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("predictions file not found: " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim_view(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord p;
      p.run_id = j.value("run_id", "");
      p.id = j.at("id").get<std::string>();
      p.prompt_hash = j.value("prompt_hash", "");
      if (j.contains("completion") && j["completion"].is_string()) p.completion = j["completion"].get<std::string>();
      if (j.contains("error") && j["error"].is_string()) p.error = j["error"].get<std::string>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct FactorReport {
  metrics::BinaryConfusion confusion;
  metrics::ClassificationMetrics classification;
  std::optional<metrics::GenerationScores> generation;  // absent when no gold cue exists
  std::size_t generation_scored = 0;
  std::size_t generation_skipped = 0;
};

struct EvaluationReport {
  std::string run_id;
  RunCounts counts;
  FactorReport tbe;
  FactorReport pbu;
  std::optional<significance::PairwiseMatrix> significance;
};

/// Scores predictions against gold posts. Unparseable or failed predictions
/// are scored as (0, 0) with no cues and counted separately.
inline EvaluationReport evaluate(const std::vector<PredictionRecord>& predictions, const std::vector<Post>& gold,
                                 const PromptTemplate& tpl) {
  if (predictions.empty()) throw IngestionError("evaluate: no predictions");
  std::map<std::string, const Post*> by_id;
  for (const auto& p : gold) by_id[p.id] = &p;
  std::vector<PostIssue> missing;
  std::set<std::string> seen;
  for (const auto& p : predictions) {
    if (!by_id.count(p.id)) missing.push_back({0, p.id, "prediction id not in gold dataset"});
    if (!seen.insert(p.id).second) missing.push_back({0, p.id, "duplicate prediction id"});
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& m : missing) ids += (ids.empty() ? "" : ", ") + m.id;
    throw IngestionError("evaluate: prediction ids not matched in gold: " + ids, std::move(missing));
  }

  EvaluationReport rep;
  std::set<std::string> run_ids;
  std::vector<bool> pred_tbe, pred_pbu, gold_tbe, gold_pbu;
  std::vector<metrics::CuePair> tbe_pairs, pbu_pairs;
  for (const auto& p : predictions) {
    run_ids.insert(p.run_id);
    const Post& g = *by_id.at(p.id);
    ParsedCompletion parsed;  // (0, 0), no cues
    ++rep.counts.total;
    if (!p.completion) {
      ++rep.counts.failed;
      ++rep.counts.unparseable;
    } else {
      try {
        parsed = parse_completion(*p.completion, tpl);
        ++(parsed.exact ? rep.counts.parsed : rep.counts.repaired);
      } catch (const UnparseableCompletion&) {
        ++rep.counts.unparseable;
      }
    }
    pred_tbe.push_back(parsed.tbe_label);
    pred_pbu.push_back(parsed.pbu_label);
    gold_tbe.push_back(g.tbe_label);
    gold_pbu.push_back(g.pbu_label);
    auto ref = [](bool label, const std::string& cue) {
      return label && !cue.empty() ? std::optional<std::string>(cue) : std::nullopt;
    };
    tbe_pairs.push_back({parsed.tbe_cue, ref(g.tbe_label, g.tbe_cue)});
    pbu_pairs.push_back({parsed.pbu_cue, ref(g.pbu_label, g.pbu_cue)});
  }
  if (run_ids.size() == 1) rep.run_id = *run_ids.begin();
  else rep.run_id = "mixed";

  auto fill = [](FactorReport& f, const std::vector<bool>& pred, const std::vector<bool>& gold_labels,
                 const std::vector<metrics::CuePair>& pairs) {
    f.confusion = metrics::confusion(pred, gold_labels);
    f.classification = metrics::classification_metrics(f.confusion);
    try {
      const auto g = metrics::corpus_generation_scores(pairs);
      f.generation = g.scores;
      f.generation_scored = g.scored;
      f.generation_skipped = g.skipped;
    } catch (const metrics::UndefinedScoreError&) {
      f.generation_skipped = pairs.size();
    }
  };
  fill(rep.tbe, pred_tbe, gold_tbe, tbe_pairs);
  fill(rep.pbu, pred_pbu, gold_pbu, pbu_pairs);
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt_t(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Dataset statistics: counts by TBe (rows) x PBu (columns) and the relative-increase row.
inline std::string render_contingency(const ContingencyTable& t) {
  std::ostringstream os;
  os << "| | PBu: 0 | PBu: 1 |\n|---|---|---|\n";
  os << "| TBe: 0 | " << t.n00 << " | " << t.n01 << " |\n";
  os << "| TBe: 1 | " << t.n10 << " | " << t.n11 << " |\n";
  try {
    const auto d = delta_ratios(t);
    os << "| %Delta | " << (static_cast<long long>(t.n10) - static_cast<long long>(t.n00)) << "/" << t.n00 << " = "
       << fmt4(d.pbu0) << " | " << (static_cast<long long>(t.n11) - static_cast<long long>(t.n01)) << "/" << t.n01
       << " = " << fmt4(d.pbu1) << " |\n";
  } catch (const UndefinedRatioError&) {
    os << "| %Delta | undefined | undefined |\n";
  }
  return os.str();
}

inline std::string render_markdown(const EvaluationReport& r) {
  std::ostringstream os;
  os << "# Evaluation report\n\n";
  os << "run: " << r.run_id << "\n\n";
  os << "## Classification\n\n| Factor | Precision | Recall | F1 | Accuracy |\n|---|---|---|---|---|\n";
  for (const auto& [name, f] : {std::pair<const char*, const FactorReport*>{"TBe", &r.tbe}, {"PBu", &r.pbu}}) {
    const auto& c = f->classification;
    os << "| " << name << " | " << fmt4(c.precision) << (c.degenerate_precision ? "*" : "") << " | "
       << fmt4(c.recall) << (c.degenerate_recall ? "*" : "") << " | " << fmt4(c.f1) << (c.degenerate_f1 ? "*" : "")
       << " | " << fmt4(c.accuracy) << " |\n";
  }
  const auto degenerate = [](const metrics::ClassificationMetrics& c) {
    return c.degenerate_precision || c.degenerate_recall || c.degenerate_f1;
  };
  if (degenerate(r.tbe.classification) || degenerate(r.pbu.classification))
    os << "\n(* zero denominator, reported as 0)\n";
  os << "\n";
  os << "## Explanations\n\n| Factor | ROUGE-1 | ROUGE-L | BLEU-1 | EM | scored | skipped |\n|---|---|---|---|---|---|---|\n";
  for (const auto& [name, f] : {std::pair<const char*, const FactorReport*>{"TBe", &r.tbe}, {"PBu", &r.pbu}}) {
    os << "| " << name << " | ";
    if (f->generation)
      os << fmt4(f->generation->rouge1) << " | " << fmt4(f->generation->rougeL) << " | " << fmt4(f->generation->bleu1)
         << " | " << fmt4(f->generation->exact_match);
    else
      os << "n/a | n/a | n/a | n/a";
    os << " | " << f->generation_scored << " | " << f->generation_skipped << " |\n";
  }
  os << "\ntokenizer: " << text::kMetricTokenizerVersion << "\n\n";
  os << "## Parse accounting\n\n| total | exact | repaired | unparseable | of which failed requests |\n"
        "|---|---|---|---|---|\n";
  os << "| " << r.counts.total << " | " << r.counts.parsed << " | " << r.counts.repaired << " | "
     << r.counts.unparseable << " | " << r.counts.failed << " |\n\n";
  os << "Unparseable completions are scored as label (0, 0) with no cues.\n";
  return os.str();
}

/// Machine-readable form: section,factor,metric,value.
inline std::string render_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "section,factor,metric,value\n";
  os << "run,all,run_id," << r.run_id << "\n";
  for (const auto& [name, f] : {std::pair<const char*, const FactorReport*>{"TBe", &r.tbe}, {"PBu", &r.pbu}}) {
    const auto& c = f->classification;
    os << "classification," << name << ",precision," << fmt6(c.precision) << "\n";
    os << "classification," << name << ",recall," << fmt6(c.recall) << "\n";
    os << "classification," << name << ",f1," << fmt6(c.f1) << "\n";
    os << "classification," << name << ",accuracy," << fmt6(c.accuracy) << "\n";
    os << "confusion," << name << ",tp," << f->confusion.tp << "\n";
    os << "confusion," << name << ",fp," << f->confusion.fp << "\n";
    os << "confusion," << name << ",fn," << f->confusion.fn << "\n";
    os << "confusion," << name << ",tn," << f->confusion.tn << "\n";
    if (f->generation) {
      os << "generation," << name << ",rouge1," << fmt6(f->generation->rouge1) << "\n";
      os << "generation," << name << ",rougeL," << fmt6(f->generation->rougeL) << "\n";
      os << "generation," << name << ",bleu1," << fmt6(f->generation->bleu1) << "\n";
      os << "generation," << name << ",exact_match," << fmt6(f->generation->exact_match) << "\n";
    }
    os << "generation," << name << ",scored," << f->generation_scored << "\n";
    os << "generation," << name << ",skipped," << f->generation_skipped << "\n";
  }
  os << "parse,all,total," << r.counts.total << "\n";
  os << "parse,all,exact," << r.counts.parsed << "\n";
  os << "parse,all,repaired," << r.counts.repaired << "\n";
  os << "parse,all,unparseable," << r.counts.unparseable << "\n";
  os << "parse,all,failed," << r.counts.failed << "\n";
  return os.str();
}

/// Upper-triangular t/p table: rows are all but the last vector, columns all but the first.
inline std::string render_significance(const significance::PairwiseMatrix& m) {
  std::ostringstream os;
  const auto& labels = m.labels();
  const std::size_t n = labels.size();
  os << "| Models |";
  for (std::size_t j = 1; j < n; ++j) os << " " << labels[j] << " t | " << labels[j] << " p |";
  os << "\n|---|";
  for (std::size_t j = 1; j < n; ++j) os << "---|---|";
  os << "\n";
  for (std::size_t i = 0; i + 1 < n; ++i) {
    os << "| " << labels[i] << " |";
    for (std::size_t j = 1; j < n; ++j) {
      if (j <= i) {
        os << " - | - |";
      } else {
        const auto& c = m.at(i, j);
        os << " " << fmt_t(c.t_statistic) << " | " << fmt_t(c.p_value) << " |";
      }
    }
    os << "\n";
  }
  os << "\nflavor: " << significance::to_string(m.flavor()) << ", two-sided\n";
  return os.str();
}

/// Reads a report CSV back as metric -> value for cross-run comparison tables.
inline std::map<std::string, std::string> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("report file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::map<std::string, std::string> out;
  const auto records = csv::parse(ss.str());
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i].fields;
    if (f.size() == 4) out[f[0] + "." + f[1] + "." + f[2]] = f[3];
  }
  return out;
}

/// Classification and explanation tables side by side for several runs.
inline std::string render_comparison(const std::vector<std::pair<std::string, std::map<std::string, std::string>>>& runs) {
  auto cell = [](const std::map<std::string, std::string>& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) return std::string("n/a");
    try {
      return fmt4(std::stod(it->second));
    } catch (const std::exception&) {
      return it->second;
    }
  };
  std::ostringstream os;
  os << "## Classification\n\n| Model | TBe P | TBe R | TBe F1 | TBe Acc | PBu P | PBu R | PBu F1 | PBu Acc |\n"
        "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, m] : runs) {
    os << "| " << name << " |";
    for (const char* f : {"TBe", "PBu"})
      for (const char* k : {"precision", "recall", "f1", "accuracy"})
        os << " " << cell(m, std::string("classification.") + f + "." + k) << " |";
    os << "\n";
  }
  os << "\n## Explanations\n\n| Model | TBe R-1 | TBe R-L | TBe BLEU-1 | TBe EM | PBu R-1 | PBu R-L | PBu BLEU-1 | PBu EM |\n"
        "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, m] : runs) {
    os << "| " << name << " |";
    for (const char* f : {"TBe", "PBu"})
      for (const char* k : {"rouge1", "rougeL", "bleu1", "exact_match"})
        os << " " << cell(m, std::string("generation.") + f + "." + k) << " |";
    os << "\n";
  }
  return os.str();
}

}  // namespace interprompt
