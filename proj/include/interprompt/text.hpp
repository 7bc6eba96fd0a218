#pragma once

// String helpers shared by the corpus, prompt, parser and metric modules.
// Case folding is ASCII-only: bytes >= 0x80 (UTF-8 continuation data) pass
// through untouched, so multi-byte characters are never split.

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace interprompt::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char fold(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 ? static_cast<char>(std::tolower(u)) : c;
}

inline bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

inline std::string_view trim_view(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = fold(c);
  return out;
}

/// Collapses every whitespace run to one space and trims both ends.
inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

/// Canonical form used for cue validation, label matching and exact match:
/// lowercase, collapsed whitespace, trimmed.
inline std::string canonical(std::string_view s) { return to_lower(collapse_whitespace(s)); }

inline bool contains(std::string_view haystack, std::string_view needle) {
  return haystack.find(needle) != std::string_view::npos;
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (fold(a[i]) != fold(b[i])) return false;
  return true;
}

/// Result of a tolerant search: [begin, end) in the haystack.
struct Match {
  std::size_t begin = std::string_view::npos;
  std::size_t end = std::string_view::npos;
  explicit operator bool() const { return begin != std::string_view::npos; }
};

/// Finds `needle` in `haystack` starting at `from`, ignoring ASCII case and
/// letting each interior whitespace run of the needle match any non-empty
/// whitespace run. Leading/trailing whitespace of the needle is ignored.
inline Match find_tolerant(std::string_view haystack, std::string_view needle, std::size_t from = 0) {
  const std::string_view core = trim_view(needle);
  if (core.empty()) return {};
  for (std::size_t start = from; start < haystack.size(); ++start) {
    std::size_t h = start, n = 0;
    bool ok = true;
    while (n < core.size()) {
      if (is_space(core[n])) {
        while (n < core.size() && is_space(core[n])) ++n;
        if (h >= haystack.size() || !is_space(haystack[h])) {
          ok = false;
          break;
        }
        while (h < haystack.size() && is_space(haystack[h])) ++h;
        continue;
      }
      if (h >= haystack.size() || fold(haystack[h]) != fold(core[n])) {
        ok = false;
        break;
      }
      ++h;
      ++n;
    }
    if (ok) return {start, h};
  }
  return {};
}

/// Metric tokenizer (version 1): case-fold, drop ASCII punctuation, split on whitespace.
inline std::vector<std::string> metric_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!is_ascii_punct(c)) {
      cur.push_back(fold(c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline constexpr std::string_view kMetricTokenizerVersion = "v1:casefold+strip-ascii-punct+whitespace";

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// C-style escaping for config values: backslash, quote, \n, \t, \r.
inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case '"': out.push_back('"'); break;
      case '\\': out.push_back('\\'); break;
      default:
        out.push_back('\\');
        out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace interprompt::text
