#pragma once

// Decodes a generated story completion back into binary labels and cues.
//
// The parser is total over arbitrary input: it either returns a
// ParsedCompletion (possibly with repair diagnostics) or throws
// UnparseableCompletion carrying the raw text.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "interprompt/prompt_builder.hpp"
#include "interprompt/text.hpp"

namespace interprompt {

enum class RepairKind {
  stop_sequence_variant,    // stop sequence matched only case/whitespace-tolerantly
  leading_text,             // non-whitespace text before the rho1 section
  section_prefix_variant,   // a section prefix matched only tolerantly
  label_case_or_whitespace, // label phrase differs from the lexicon in case/spacing
  label_trailing_text,      // label section has extra text after the phrase
  label_embedded,           // label phrase found inside other text
  missing_tbe_section,
  missing_pbu_section,
  cue_for_negative_factor,  // cue text dropped because its factor is 0
  multiple_cue_segments,    // first-segment rule applied
};

inline std::string_view to_string(RepairKind k) {
  switch (k) {
    case RepairKind::stop_sequence_variant: return "stop_sequence_variant";
    case RepairKind::leading_text: return "leading_text";
    case RepairKind::section_prefix_variant: return "section_prefix_variant";
    case RepairKind::label_case_or_whitespace: return "label_case_or_whitespace";
    case RepairKind::label_trailing_text: return "label_trailing_text";
    case RepairKind::label_embedded: return "label_embedded";
    case RepairKind::missing_tbe_section: return "missing_tbe_section";
    case RepairKind::missing_pbu_section: return "missing_pbu_section";
    case RepairKind::cue_for_negative_factor: return "cue_for_negative_factor";
    case RepairKind::multiple_cue_segments: return "multiple_cue_segments";
  }
  return "unknown";
}

struct ParseDiagnostic {
  RepairKind kind;
  std::string detail;
};

struct ParsedCompletion {
  bool tbe_label = false;
  bool pbu_label = false;
  std::optional<std::string> tbe_cue;
  std::optional<std::string> pbu_cue;
  std::vector<ParseDiagnostic> diagnostics;
  bool exact = true;

  LabelPair labels() const { return {tbe_label, pbu_label}; }
};

class UnparseableCompletion : public std::runtime_error {
 public:
  UnparseableCompletion(const std::string& reason, std::string raw)
      : std::runtime_error("unparseable completion: " + reason), reason_(reason), raw_(std::move(raw)) {}
  const std::string& reason() const { return reason_; }
  const std::string& raw() const { return raw_; }

 private:
  std::string reason_;
  std::string raw_;
};

/// First non-empty segment of a delimited cue list (";", " / " or newline), trimmed.
inline std::string extract_primary_cue(std::string_view cue_text) {
  static constexpr std::array<std::string_view, 3> kDelims = {";", " / ", "\n"};
  std::string_view rest = text::trim_view(cue_text);
  while (!rest.empty()) {
    std::size_t cut = rest.size(), width = 0;
    for (auto d : kDelims) {
      const auto p = rest.find(d);
      if (p != std::string_view::npos && p < cut) {
        cut = p;
        width = d.size();
      }
    }
    const auto seg = text::trim_view(rest.substr(0, cut));
    if (!seg.empty()) return std::string(seg);
    if (cut == rest.size()) break;
    rest = rest.substr(cut + width);
  }
  return {};
}

namespace detail {

inline bool has_cue_delimiter(std::string_view s) {
  return s.find(';') != std::string_view::npos || s.find(" / ") != std::string_view::npos ||
         s.find('\n') != std::string_view::npos;
}

inline bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

// Exact search first, then the case/whitespace tolerant one.
inline text::Match locate(std::string_view body, std::string_view needle, std::size_t from, bool& tolerant) {
  tolerant = false;
  if (const auto p = body.find(needle, from); p != std::string_view::npos) return {p, p + needle.size()};
  auto m = text::find_tolerant(body, needle, from);
  tolerant = static_cast<bool>(m);
  return m;
}

}  // namespace detail

inline ParsedCompletion parse_completion(std::string_view raw, const PromptTemplate& tpl) {
  ParsedCompletion out;
  auto repair = [&](RepairKind k, std::string detail = {}) {
    out.diagnostics.push_back({k, std::move(detail)});
  };

  std::string_view body = raw;
  if (const auto stop = body.find(tpl.stop_sequence); stop != std::string_view::npos) {
    body = body.substr(0, stop);
  } else if (const auto m = text::find_tolerant(body, tpl.stop_sequence); m) {
    body = body.substr(0, m.begin);
    repair(RepairKind::stop_sequence_variant);
  }

  bool tolerant = false;
  const auto r1 = detail::locate(body, tpl.rho1_prefix, 0, tolerant);
  if (!r1) throw UnparseableCompletion("no label section", std::string(raw));
  if (tolerant) repair(RepairKind::section_prefix_variant, "rho1");
  if (!text::trim_view(body.substr(0, r1.begin)).empty()) repair(RepairKind::leading_text);

  const auto r2 = detail::locate(body, tpl.rho2_prefix, r1.end, tolerant);
  if (r2 && tolerant) repair(RepairKind::section_prefix_variant, "rho2");
  const auto r3 = detail::locate(body, tpl.rho3_prefix, r2 ? r2.end : r1.end, tolerant);
  if (r3 && tolerant) repair(RepairKind::section_prefix_variant, "rho3");

  const std::size_t label_end = r2 ? r2.begin : (r3 ? r3.begin : body.size());
  const std::string_view label_raw = body.substr(r1.end, label_end - r1.end);

  // Label phrase: exact, then normalized, then longest-first prefix, then embedded.
  std::optional<LabelPair> labels;
  const auto label_trimmed = text::trim_view(label_raw);
  for (std::size_t i = 0; i < tpl.label_phrases.size() && !labels; ++i)
    if (label_trimmed == tpl.label_phrases[i]) labels = PromptTemplate::pair_at(i);
  if (!labels) {
    if ((labels = tpl.label_for(label_raw))) repair(RepairKind::label_case_or_whitespace);
  }
  if (!labels) {
    std::array<std::size_t, 4> order = {0, 1, 2, 3};
    std::vector<std::string> canon;
    for (const auto& p : tpl.label_phrases) canon.push_back(text::canonical(p));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return canon[a].size() > canon[b].size(); });
    const std::string label_canon = text::canonical(label_raw);
    auto bounded = [&](std::size_t pos, std::size_t len) {
      const bool left = pos == 0 || !detail::is_word_char(label_canon[pos - 1]);
      const bool right = pos + len == label_canon.size() || !detail::is_word_char(label_canon[pos + len]);
      return left && right;
    };
    for (auto i : order) {
      if (label_canon.rfind(canon[i], 0) == 0 && bounded(0, canon[i].size())) {
        labels = PromptTemplate::pair_at(i);
        repair(RepairKind::label_trailing_text, std::string(label_trimmed));
        break;
      }
    }
    for (auto i : order) {
      if (labels) break;
      for (auto p = label_canon.find(canon[i]); p != std::string::npos; p = label_canon.find(canon[i], p + 1)) {
        if (bounded(p, canon[i].size())) {
          labels = PromptTemplate::pair_at(i);
          repair(RepairKind::label_embedded, std::string(label_trimmed));
          break;
        }
      }
    }
  }
  if (!labels) throw UnparseableCompletion("no label phrase", std::string(raw));
  out.tbe_label = labels->tbe;
  out.pbu_label = labels->pbu;

  auto read_cue = [&](bool positive, std::string_view section, const char* name) -> std::optional<std::string> {
    const auto cue = text::trim_view(section);
    if (cue.empty() || text::canonical(cue) == text::canonical(tpl.empty_cue_token)) return std::nullopt;
    if (!positive) {
      repair(RepairKind::cue_for_negative_factor, std::string(name) + ": " + std::string(cue));
      return std::nullopt;
    }
    if (detail::has_cue_delimiter(cue)) {
      repair(RepairKind::multiple_cue_segments, std::string(name) + ": " + std::string(cue));
      auto first = extract_primary_cue(cue);
      if (first.empty()) return std::nullopt;
      return first;
    }
    return std::string(cue);
  };

  if (r2) {
    const std::size_t end = r3 ? r3.begin : body.size();
    out.tbe_cue = read_cue(out.tbe_label, body.substr(r2.end, end - r2.end), "tbe");
  } else {
    repair(RepairKind::missing_tbe_section);
  }
  if (r3) {
    out.pbu_cue = read_cue(out.pbu_label, body.substr(r3.end), "pbu");
  } else {
    repair(RepairKind::missing_pbu_section);
  }

  out.exact = out.diagnostics.empty();
  return out;
}

}  // namespace interprompt
