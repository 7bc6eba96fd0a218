#pragma once

// Story-completion fine-tuning records and N-shot inference prompts.
//
// A completion serializes three sections, each a fixed prompt prefix followed
// by its content:
//
//   <rho1>label phrase<rho2>TBe cue<rho3>PBu cue
//
// A fine-tune record pairs `text + separator` with
// `completion_lead + completion + stop_sequence`.

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "interprompt/config.hpp"
#include "interprompt/corpus.hpp"
#include "interprompt/hashing.hpp"
#include "interprompt/text.hpp"

namespace interprompt {

class TemplateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a post cannot be turned into a record or prompt.
class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PromptTemplate {
  std::string rho1_prefix = "This given sentence represents ";
  std::string rho2_prefix = "\nWords those indicate belong expression in the sentence: ";
  std::string rho3_prefix = "\nWords those indicate burden expression in the sentence: ";
  std::string separator = "\n\nIntent:\n\n";
  std::string stop_sequence = "\n###\n";
  std::string completion_lead = " ";
  std::string empty_cue_token = "none";
  // Indexed by 2*tbe + pbu.
  std::array<std::string, 4> label_phrases = {"neither belong nor burden", "burden", "belong",
                                              "both belong and burden"};
  // Empty means "derive from the prefixes and lexicon"; see instruction().
  std::string zero_shot_instruction;

  static constexpr std::size_t index(LabelPair l) { return (l.tbe ? 2u : 0u) + (l.pbu ? 1u : 0u); }
  static constexpr LabelPair pair_at(std::size_t i) { return {(i & 2u) != 0, (i & 1u) != 0}; }

  const std::string& label_phrase(LabelPair l) const { return label_phrases[index(l)]; }

  /// Inverse lexicon lookup under canonical normalization.
  std::optional<LabelPair> label_for(std::string_view phrase) const {
    const auto key = text::canonical(phrase);
    for (std::size_t i = 0; i < label_phrases.size(); ++i)
      if (text::canonical(label_phrases[i]) == key) return pair_at(i);
    return std::nullopt;
  }

  /// Task instruction prepended to zero-shot prompts.
  std::string instruction() const {
    if (!zero_shot_instruction.empty()) return zero_shot_instruction;
    const auto quoted = [](std::string_view s) { return "\"" + text::trim(s) + "\""; };
    std::string out = "Read the post and complete the analysis in three lines. Line 1: " + quoted(rho1_prefix) +
                      " followed by exactly one of: ";
    for (std::size_t i = 0; i < label_phrases.size(); ++i)
      out += (i ? ", " : "") + quoted(label_phrases[i]);
    out += ". Line 2: " + quoted(rho2_prefix) + " followed by the words from the post, or " +
           quoted(empty_cue_token) + ". Line 3: " + quoted(rho3_prefix) +
           " followed by the words from the post, or " + quoted(empty_cue_token) + ".\n\n";
    return out;
  }

  /// Throws TemplateError if the template cannot produce parseable completions.
  void validate() const {
    auto require = [](bool ok, const std::string& msg) {
      if (!ok) throw TemplateError("prompt template: " + msg);
    };
    require(!text::trim_view(rho1_prefix).empty(), "rho1_prefix is empty");
    require(!text::trim_view(rho2_prefix).empty(), "rho2_prefix is empty");
    require(!text::trim_view(rho3_prefix).empty(), "rho3_prefix is empty");
    require(!stop_sequence.empty(), "stop_sequence is empty");
    require(!separator.empty(), "separator is empty");
    require(!text::trim_view(empty_cue_token).empty(), "empty_cue_token is empty");
    require(text::canonical(rho1_prefix) != text::canonical(rho2_prefix) &&
                text::canonical(rho2_prefix) != text::canonical(rho3_prefix) &&
                text::canonical(rho1_prefix) != text::canonical(rho3_prefix),
            "section prefixes must be distinct");
    for (const auto* s : {&rho1_prefix, &rho2_prefix, &rho3_prefix})
      require(!text::contains(*s, stop_sequence), "stop_sequence occurs inside a section prefix");
    for (std::size_t i = 0; i < label_phrases.size(); ++i) {
      const auto& p = label_phrases[i];
      require(!text::trim_view(p).empty(), "empty label phrase");
      require(!text::contains(p, stop_sequence), "stop_sequence occurs inside label phrase '" + p + "'");
      for (const auto* s : {&rho2_prefix, &rho3_prefix})
        require(!text::contains(text::canonical(p), text::canonical(*s)),
                "label phrase '" + p + "' contains a section prefix");
      for (std::size_t j = 0; j < i; ++j)
        require(text::canonical(p) != text::canonical(label_phrases[j]), "label phrases are not distinct");
    }
  }

  Config to_config() const {
    Config c;
    c.set("template", "rho1_prefix", rho1_prefix);
    c.set("template", "rho2_prefix", rho2_prefix);
    c.set("template", "rho3_prefix", rho3_prefix);
    c.set("template", "separator", separator);
    c.set("template", "stop_sequence", stop_sequence);
    c.set("template", "completion_lead", completion_lead);
    c.set("template", "empty_cue_token", empty_cue_token);
    c.set("template", "label_neither", label_phrases[0]);
    c.set("template", "label_burden", label_phrases[1]);
    c.set("template", "label_belong", label_phrases[2]);
    c.set("template", "label_both", label_phrases[3]);
    c.set("template", "zero_shot_instruction", instruction());
    return c;
  }

  /// Serialized [template] section; also the input of hash().
  std::string to_config_text() const { return to_config().section_text("template"); }

  std::string hash() const { return sha256_hex(to_config_text()); }

  /// Reads the [template] section; missing keys keep their defaults.
  static PromptTemplate from_config(const Config& c) {
    PromptTemplate t;
    auto read = [&](const char* key, std::string& field) {
      if (auto v = c.get("template", key)) field = *v;
    };
    read("rho1_prefix", t.rho1_prefix);
    read("rho2_prefix", t.rho2_prefix);
    read("rho3_prefix", t.rho3_prefix);
    read("separator", t.separator);
    read("stop_sequence", t.stop_sequence);
    read("completion_lead", t.completion_lead);
    read("empty_cue_token", t.empty_cue_token);
    read("label_neither", t.label_phrases[0]);
    read("label_burden", t.label_phrases[1]);
    read("label_belong", t.label_phrases[2]);
    read("label_both", t.label_phrases[3]);
    read("zero_shot_instruction", t.zero_shot_instruction);
    t.validate();
    return t;
  }
};

struct StoryCompletion {
  std::string label_phrase;
  std::string tbe_cue;  // gold cue or the empty-cue token
  std::string pbu_cue;
  std::string serialized;
};

struct FineTuneRecord {
  std::string prompt;
  std::string completion;
  bool operator==(const FineTuneRecord&) const = default;
};

inline StoryCompletion build_completion(const Post& post, const PromptTemplate& tpl) {
  StoryCompletion c;
  c.label_phrase = tpl.label_phrase(post.labels());
  c.tbe_cue = post.tbe_label && !post.tbe_cue.empty() ? post.tbe_cue : tpl.empty_cue_token;
  c.pbu_cue = post.pbu_label && !post.pbu_cue.empty() ? post.pbu_cue : tpl.empty_cue_token;
  c.serialized.reserve(tpl.rho1_prefix.size() + c.label_phrase.size() + tpl.rho2_prefix.size() + c.tbe_cue.size() +
                       tpl.rho3_prefix.size() + c.pbu_cue.size());
  c.serialized.append(tpl.rho1_prefix)
      .append(c.label_phrase)
      .append(tpl.rho2_prefix)
      .append(c.tbe_cue)
      .append(tpl.rho3_prefix)
      .append(c.pbu_cue);
  return c;
}

inline FineTuneRecord build_finetune_record(const Post& post, const PromptTemplate& tpl) {
  if (text::contains(post.text, tpl.stop_sequence))
    throw PromptError("post '" + post.id + "' contains the stop sequence");
  for (const auto* cue : {&post.tbe_cue, &post.pbu_cue})
    if (text::contains(*cue, tpl.stop_sequence))
      throw PromptError("a cue of post '" + post.id + "' contains the stop sequence");
  return {post.text + tpl.separator, tpl.completion_lead + build_completion(post, tpl).serialized + tpl.stop_sequence};
}

inline std::vector<FineTuneRecord> build_finetune_records(const std::vector<Post>& posts, const PromptTemplate& tpl) {
  std::vector<FineTuneRecord> out;
  out.reserve(posts.size());
  for (const auto& p : posts) out.push_back(build_finetune_record(p, tpl));
  return out;
}

/// One JSON object per line with keys `prompt` and `completion`.
inline std::string to_jsonl(const std::vector<FineTuneRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
    out += j.dump() + '\n';
  }
  return out;
}

/// Exemplar counts of the zero-, one- and few-shot protocols.
inline constexpr std::array<std::size_t, 3> kCanonicalShots = {0, 1, 8};

struct NShotPrompt {
  std::string text;
  std::size_t shots = 0;
  bool canonical = true;  // false when shots is not 0, 1 or 8
};

/// Worked exemplar blocks (prompt + completion) followed by the target prompt.
inline NShotPrompt build_nshot_prompt(const Post& target, const std::vector<Post>& exemplars,
                                      const PromptTemplate& tpl) {
  for (const auto& e : exemplars)
    if (e.id == target.id) throw PromptError("target post '" + target.id + "' appears among its exemplars");
  if (text::contains(target.text, tpl.stop_sequence))
    throw PromptError("post '" + target.id + "' contains the stop sequence");
  NShotPrompt out;
  out.shots = exemplars.size();
  out.canonical = std::find(kCanonicalShots.begin(), kCanonicalShots.end(), out.shots) != kCanonicalShots.end();
  if (exemplars.empty()) out.text += tpl.instruction();
  for (const auto& e : exemplars) {
    const auto rec = build_finetune_record(e, tpl);
    out.text += rec.prompt;
    out.text += rec.completion;
  }
  out.text += target.text;
  out.text += tpl.separator;
  return out;
}

}  // namespace interprompt
