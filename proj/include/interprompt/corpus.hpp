#pragma once

// Dual-factor annotated posts: data model, CSV/JSONL ingestion, splits and
// contingency statistics.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "interprompt/text.hpp"

namespace interprompt {

/// (TBe, PBu) binary label pair.
struct LabelPair {
  bool tbe = false;
  bool pbu = false;
  auto operator<=>(const LabelPair&) const = default;
};

struct Post {
  std::string id;
  std::string text;
  bool tbe_label = false;
  bool pbu_label = false;
  std::string tbe_cue;  // empty == absent
  std::string pbu_cue;

  LabelPair labels() const { return {tbe_label, pbu_label}; }
  bool operator==(const Post&) const = default;
};

/// How strictly the "gold cue is a substring of the text" invariant is enforced.
enum class CueCheck { warn, strict };

struct PostIssue {
  std::size_t row = 0;  // physical line where the record starts (CSV header is line 1)
  std::string id;
  std::string message;
};

/// Thrown when a post or a whole file fails validation.
class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::vector<PostIssue> issues = {})
      : std::runtime_error(what), issues_(std::move(issues)) {}
  const std::vector<PostIssue>& issues() const { return issues_; }

 private:
  std::vector<PostIssue> issues_;
};

/// Invariant violations of a single post. Hard errors go to `errors`; the
/// substring check goes to `warnings` unless `mode` is strict.
inline void check_post(const Post& p, CueCheck mode, std::vector<std::string>& errors,
                       std::vector<std::string>& warnings) {
  if (text::trim_view(p.text).empty()) errors.emplace_back("text is empty");
  if (!p.tbe_label && !text::trim_view(p.tbe_cue).empty())
    errors.emplace_back("tbe_cue present but tbe_label is 0");
  if (!p.pbu_label && !text::trim_view(p.pbu_cue).empty())
    errors.emplace_back("pbu_cue present but pbu_label is 0");
  const std::string haystack = text::canonical(p.text);
  auto check_cue = [&](const std::string& cue, const char* name) {
    if (text::trim_view(cue).empty()) return;
    if (!text::contains(haystack, text::canonical(cue))) {
      std::string msg = std::string(name) + " is not a substring of text: \"" + cue + "\"";
      (mode == CueCheck::strict ? errors : warnings).push_back(std::move(msg));
    }
  };
  check_cue(p.tbe_cue, "tbe_cue");
  check_cue(p.pbu_cue, "pbu_cue");
}

/// Throws IngestionError if `p` violates a hard invariant.
inline void validate_post(const Post& p, CueCheck mode = CueCheck::warn) {
  std::vector<std::string> errors, warnings;
  check_post(p, mode, errors, warnings);
  if (!errors.empty()) {
    std::vector<PostIssue> issues;
    for (auto& e : errors) issues.push_back({0, p.id, std::move(e)});
    std::string what = "invalid post '" + p.id + "': " + issues.front().message;
    throw IngestionError(std::move(what), std::move(issues));
  }
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180: quoted fields may contain separators, quotes and newlines)

namespace csv {

struct Record {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

inline std::vector<Record> parse(std::string_view data) {
  std::vector<Record> out;
  Record cur;
  std::string field;
  std::size_t line = 1;
  cur.line = 1;
  bool in_quotes = false, field_started = false, any = false;
  auto end_field = [&] {
    cur.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(cur.fields.size() == 1 && cur.fields[0].empty())) out.push_back(std::move(cur));
    cur = Record{};
    cur.line = line;
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const char c = data[i];
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      ++line;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw IngestionError("csv: unterminated quoted field starting on line " + std::to_string(cur.line));
  if (any && (!field.empty() || !cur.fields.empty())) end_record();
  return out;
}

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Loading

enum class DataFormat { csv, jsonl };

inline DataFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = text::to_lower(path.extension().string());
  if (ext == ".csv") return DataFormat::csv;
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return DataFormat::jsonl;
  throw IngestionError("cannot infer dataset format from extension: " + path.string());
}

struct LoadReport {
  std::vector<Post> posts;
  std::vector<PostIssue> errors;    // rows rejected
  std::vector<PostIssue> warnings;  // rows accepted with a note
  bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::optional<bool> parse_binary(std::string_view raw) {
  const auto s = text::trim_view(raw);
  if (s == "0") return false;
  if (s == "1") return true;
  return std::nullopt;
}

inline std::optional<bool> json_binary(const nlohmann::json& v) {
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n == 0 || n == 1) return n == 1;
    return std::nullopt;
  }
  if (v.is_string()) return parse_binary(v.get<std::string>());
  return std::nullopt;
}

struct RawRow {
  std::size_t row = 0;
  std::optional<std::string> id;
  std::optional<std::string> text;
  std::optional<std::string> tbe, pbu;  // raw label text for diagnostics
  std::optional<bool> tbe_ok, pbu_ok;
  std::string tbe_cue, pbu_cue;
};

inline void accept_row(const RawRow& r, CueCheck mode, std::set<std::string>& seen, LoadReport& rep) {
  Post p;
  p.id = r.id.value_or("row-" + std::to_string(r.row));
  std::vector<std::string> errors, warnings;
  if (!r.text) errors.emplace_back("missing text");
  if (!r.tbe_ok) errors.push_back("tbe_label is not binary: '" + r.tbe.value_or("<missing>") + "'");
  if (!r.pbu_ok) errors.push_back("pbu_label is not binary: '" + r.pbu.value_or("<missing>") + "'");
  if (errors.empty()) {
    p.text = *r.text;
    p.tbe_label = *r.tbe_ok;
    p.pbu_label = *r.pbu_ok;
    p.tbe_cue = text::trim(r.tbe_cue);
    p.pbu_cue = text::trim(r.pbu_cue);
    check_post(p, mode, errors, warnings);
  }
  if (errors.empty() && !seen.insert(p.id).second) errors.push_back("duplicate id '" + p.id + "'");
  for (auto& w : warnings) rep.warnings.push_back({r.row, p.id, std::move(w)});
  if (!errors.empty()) {
    std::string msg = errors.front();
    for (std::size_t i = 1; i < errors.size(); ++i) msg += "; " + errors[i];
    rep.errors.push_back({r.row, p.id, std::move(msg)});
    return;
  }
  rep.posts.push_back(std::move(p));
}

}  // namespace detail

inline LoadReport parse_csv_dataset(std::string_view data, CueCheck mode = CueCheck::warn) {
  const auto records = csv::parse(data);
  if (records.empty()) throw IngestionError("csv: missing header");
  const auto& header = records.front().fields;
  auto col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (text::trim_view(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto c_text = col("text"), c_tbe = col("tbe_label"), c_pbu = col("pbu_label");
  if (!c_text || !c_tbe || !c_pbu)
    throw IngestionError("csv: header must contain text, tbe_label and pbu_label");
  const auto c_id = col("id"), c_tcue = col("tbe_cue"), c_pcue = col("pbu_cue");

  LoadReport rep;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    auto get = [&](std::optional<std::size_t> c) -> std::optional<std::string> {
      if (!c || *c >= rec.fields.size()) return std::nullopt;
      return rec.fields[*c];
    };
    detail::RawRow r;
    r.row = rec.line;
    r.id = get(c_id);
    if (r.id && text::trim_view(*r.id).empty()) r.id.reset();
    r.text = get(c_text);
    r.tbe = get(c_tbe);
    r.pbu = get(c_pbu);
    if (r.tbe) r.tbe_ok = detail::parse_binary(*r.tbe);
    if (r.pbu) r.pbu_ok = detail::parse_binary(*r.pbu);
    r.tbe_cue = get(c_tcue).value_or("");
    r.pbu_cue = get(c_pcue).value_or("");
    detail::accept_row(r, mode, seen, rep);
  }
  return rep;
}

inline LoadReport parse_jsonl_dataset(std::string_view data, CueCheck mode = CueCheck::warn) {
  LoadReport rep;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= data.size()) {
    auto nl = data.find('\n', pos);
    if (nl == std::string_view::npos) nl = data.size();
    const auto line = text::trim_view(data.substr(pos, nl - pos));
    ++line_no;
    pos = nl + 1;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      rep.errors.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!obj.is_object()) {
      rep.errors.push_back({line_no, "", "line is not a JSON object"});
      continue;
    }
    auto str = [&](const char* key) -> std::optional<std::string> {
      if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
      if (obj[key].is_string()) return obj[key].get<std::string>();
      return obj[key].dump();
    };
    detail::RawRow r;
    r.row = line_no;
    r.id = str("id");
    r.text = obj.contains("text") && obj["text"].is_string() ? std::optional(obj["text"].get<std::string>())
                                                              : std::nullopt;
    r.tbe = str("tbe_label");
    r.pbu = str("pbu_label");
    if (obj.contains("tbe_label")) r.tbe_ok = detail::json_binary(obj["tbe_label"]);
    if (obj.contains("pbu_label")) r.pbu_ok = detail::json_binary(obj["pbu_label"]);
    r.tbe_cue = str("tbe_cue").value_or("");
    r.pbu_cue = str("pbu_cue").value_or("");
    detail::accept_row(r, mode, seen, rep);
  }
  return rep;
}

/// Reads a dataset file. Invalid rows are collected in the report, not thrown;
/// a missing file or unusable header throws IngestionError.
inline LoadReport load_dataset(const std::filesystem::path& path, std::optional<DataFormat> format = std::nullopt,
                               CueCheck mode = CueCheck::warn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("dataset file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto fmt = format.value_or(format_from_path(path));
  return fmt == DataFormat::csv ? parse_csv_dataset(ss.str(), mode) : parse_jsonl_dataset(ss.str(), mode);
}

inline std::string describe(const std::vector<PostIssue>& issues) {
  std::string out;
  for (const auto& i : issues) {
    out += "  row " + std::to_string(i.row);
    if (!i.id.empty()) out += " (" + i.id + ")";
    out += ": " + i.message + "\n";
  }
  return out;
}

/// load_dataset, throwing IngestionError listing every offending row.
inline std::vector<Post> load_posts(const std::filesystem::path& path, std::optional<DataFormat> format = std::nullopt,
                                    CueCheck mode = CueCheck::warn) {
  auto rep = load_dataset(path, format, mode);
  if (!rep.ok())
    throw IngestionError(path.string() + ": " + std::to_string(rep.errors.size()) + " invalid row(s)\n" +
                             describe(rep.errors),
                         rep.errors);
  return std::move(rep.posts);
}

inline std::string to_csv(const std::vector<Post>& posts) {
  std::string out = "id,text,tbe_label,pbu_label,tbe_cue,pbu_cue\n";
  for (const auto& p : posts) {
    out += csv::quote(p.id) + ',' + csv::quote(p.text) + ',' + (p.tbe_label ? '1' : '0') + ',' +
           (p.pbu_label ? '1' : '0') + ',' + csv::quote(p.tbe_cue) + ',' + csv::quote(p.pbu_cue) + '\n';
  }
  return out;
}

inline std::string to_jsonl(const std::vector<Post>& posts) {
  std::string out;
  for (const auto& p : posts) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["text"] = p.text;
    j["tbe_label"] = p.tbe_label ? 1 : 0;
    j["pbu_label"] = p.pbu_label ? 1 : 0;
    if (!p.tbe_cue.empty()) j["tbe_cue"] = p.tbe_cue;
    if (!p.pbu_cue.empty()) j["pbu_cue"] = p.pbu_cue;
    out += j.dump() + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<Post> train;
  std::vector<Post> validation;
  std::vector<Post> test;
};

/// Builds a split from pre-split lists; throws if any id occurs in two splits.
inline DatasetSplit make_split(std::vector<Post> train, std::vector<Post> validation, std::vector<Post> test) {
  std::set<std::string> ids;
  std::vector<PostIssue> dups;
  for (const auto* part : {&train, &validation, &test})
    for (const auto& p : *part)
      if (!ids.insert(p.id).second) dups.push_back({0, p.id, "id occurs in more than one split"});
  if (!dups.empty()) throw IngestionError("dataset splits are not disjoint", std::move(dups));
  return {std::move(train), std::move(validation), std::move(test)};
}

// ---------------------------------------------------------------------------
// Statistics

/// Counts indexed TBe x PBu: n_ab = #posts with tbe_label=a, pbu_label=b.
struct ContingencyTable {
  std::size_t n00 = 0, n01 = 0, n10 = 0, n11 = 0;
  std::size_t total() const { return n00 + n01 + n10 + n11; }
  bool operator==(const ContingencyTable&) const = default;
};

inline ContingencyTable contingency(const std::vector<Post>& posts) {
  ContingencyTable t;
  for (const auto& p : posts) {
    if (p.tbe_label)
      ++(p.pbu_label ? t.n11 : t.n10);
    else
      ++(p.pbu_label ? t.n01 : t.n00);
  }
  return t;
}

class UndefinedRatioError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct DeltaRatios {
  double pbu0 = 0.0;  // (n10 - n00) / n00
  double pbu1 = 0.0;  // (n11 - n01) / n01
};

/// Column-wise relative increase from TBe=0 to TBe=1.
inline DeltaRatios delta_ratios(const ContingencyTable& t) {
  if (t.n00 == 0 || t.n01 == 0)
    throw UndefinedRatioError("delta ratio undefined: n00 and n01 must both be positive");
  auto rel = [](std::size_t base, std::size_t up) {
    return (static_cast<double>(up) - static_cast<double>(base)) / static_cast<double>(base);
  };
  return {rel(t.n00, t.n10), rel(t.n01, t.n11)};
}

}  // namespace interprompt
