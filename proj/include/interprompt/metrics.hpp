#pragma once

// Classification metrics and sentence-level generation similarity
// (ROUGE-1, ROUGE-L, BLEU-1, exact match).
//
// All generation metrics use text::metric_tokens. ROUGE scores are F1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "interprompt/text.hpp"

namespace interprompt::metrics {

struct BinaryConfusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const BinaryConfusion&) const = default;
};

inline BinaryConfusion confusion(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("confusion: size mismatch");
  BinaryConfusion c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i])
      ++(gold[i] ? c.tp : c.fp);
    else
      ++(gold[i] ? c.fn : c.tn);
  }
  return c;
}

struct ClassificationMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  // Set when a zero denominator forced the value to 0.
  bool degenerate_precision = false;
  bool degenerate_recall = false;
  bool degenerate_f1 = false;
};

inline ClassificationMetrics classification_metrics(const BinaryConfusion& c) {
  if (c.total() == 0) throw std::invalid_argument("classification_metrics: empty confusion matrix");
  ClassificationMetrics m;
  const auto d = [](std::size_t x) { return static_cast<double>(x); };
  if (c.tp + c.fp == 0)
    m.degenerate_precision = true;
  else
    m.precision = d(c.tp) / d(c.tp + c.fp);
  if (c.tp + c.fn == 0)
    m.degenerate_recall = true;
  else
    m.recall = d(c.tp) / d(c.tp + c.fn);
  if (m.precision + m.recall == 0.0)
    m.degenerate_f1 = true;
  else
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  m.accuracy = d(c.tp + c.tn) / d(c.total());
  return m;
}

namespace detail {

inline std::vector<std::string> reference_tokens(std::string_view reference, const char* who) {
  auto ref = text::metric_tokens(reference);
  if (ref.empty()) throw std::invalid_argument(std::string(who) + ": reference has no tokens");
  return ref;
}

inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

// Sum over types of min(count_cand, count_ref).
inline std::size_t clipped_overlap(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  std::map<std::string_view, std::size_t> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  std::size_t hits = 0;
  for (const auto& t : cand) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  return hits;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

inline double rouge1(std::string_view candidate, std::string_view reference) {
  const auto ref = detail::reference_tokens(reference, "rouge1");
  const auto cand = text::metric_tokens(candidate);
  if (cand.empty()) return 0.0;
  const double hits = static_cast<double>(detail::clipped_overlap(cand, ref));
  return detail::f1(hits / static_cast<double>(cand.size()), hits / static_cast<double>(ref.size()));
}

inline double rougeL(std::string_view candidate, std::string_view reference) {
  const auto ref = detail::reference_tokens(reference, "rougeL");
  const auto cand = text::metric_tokens(candidate);
  if (cand.empty()) return 0.0;
  const double lcs = static_cast<double>(detail::lcs_length(cand, ref));
  return detail::f1(lcs / static_cast<double>(cand.size()), lcs / static_cast<double>(ref.size()));
}

/// Sentence-level BLEU with unigrams only: clipped precision times brevity penalty.
inline double bleu1(std::string_view candidate, std::string_view reference) {
  const auto ref = detail::reference_tokens(reference, "bleu1");
  const auto cand = text::metric_tokens(candidate);
  if (cand.empty()) return 0.0;
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double precision = static_cast<double>(detail::clipped_overlap(cand, ref)) / c;
  const double bp = cand.size() < ref.size() ? std::exp(1.0 - r / c) : 1.0;
  return precision * bp;
}

inline double exact_match(std::string_view candidate, std::string_view reference) {
  return text::canonical(candidate) == text::canonical(reference) ? 1.0 : 0.0;
}

struct GenerationScores {
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double bleu1 = 0.0;
  double exact_match = 0.0;
};

struct CuePair {
  std::optional<std::string> candidate;  // absent prediction scores as ""
  std::optional<std::string> reference;  // absent gold cue: pair is skipped
};

struct CorpusGenerationScores {
  GenerationScores scores;
  std::size_t scored = 0;
  std::size_t skipped = 0;
};

class UndefinedScoreError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Macro average of per-pair scores over pairs that have a usable gold cue.
inline CorpusGenerationScores corpus_generation_scores(const std::vector<CuePair>& pairs) {
  if (pairs.empty()) throw UndefinedScoreError("corpus_generation_scores: no pairs");
  CorpusGenerationScores out;
  for (const auto& p : pairs) {
    if (!p.reference || text::metric_tokens(*p.reference).empty()) {
      ++out.skipped;
      continue;
    }
    const std::string cand = p.candidate.value_or("");
    out.scores.rouge1 += rouge1(cand, *p.reference);
    out.scores.rougeL += rougeL(cand, *p.reference);
    out.scores.bleu1 += bleu1(cand, *p.reference);
    out.scores.exact_match += exact_match(cand, *p.reference);
    ++out.scored;
  }
  if (out.scored == 0) throw UndefinedScoreError("corpus_generation_scores: every pair lacks a gold cue");
  const double n = static_cast<double>(out.scored);
  out.scores.rouge1 /= n;
  out.scores.rougeL /= n;
  out.scores.bleu1 /= n;
  out.scores.exact_match /= n;
  return out;
}

}  // namespace interprompt::metrics
