#pragma once

// Desk-scale check of the multi-task fine-tuning objective
//
//   L = l1 * L_label + l2 * L_tbe_cue + l3 * L_pbu_cue
//
// where each term is the negative log-likelihood of one completion span. A
// small conditional model (bigram transition logits plus a bag-of-words
// context term over the prompt) stands in for the language model so that
// gradients can be verified against finite differences and training
// trajectories inspected.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "interprompt/corpus.hpp"
#include "interprompt/prompt_builder.hpp"
#include "interprompt/text.hpp"

namespace interprompt::losslab {

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;

  std::array<double, 3> weights() const { return {lambda1, lambda2, lambda3}; }

  void validate() const {
    for (double l : weights())
      if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("loss weights must be finite and >= 0");
    if (lambda1 == 0.0 && lambda2 == 0.0 && lambda3 == 0.0)
      throw std::invalid_argument("at least one loss weight must be positive");
  }
};

/// Per-position model outputs over the vocabulary; each row is a probability vector.
class TokenDistributionSequence {
 public:
  static constexpr double kSumTolerance = 1e-9;

  TokenDistributionSequence(std::size_t vocab_size, std::vector<std::vector<double>> steps)
      : vocab_size_(vocab_size), steps_(std::move(steps)) {
    if (vocab_size_ == 0) throw std::invalid_argument("TokenDistributionSequence: vocab_size must be positive");
    for (const auto& row : steps_) {
      if (row.size() != vocab_size_) throw std::invalid_argument("TokenDistributionSequence: row length mismatch");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("TokenDistributionSequence: entry outside [0,1]");
        sum += p;
      }
      if (std::fabs(sum - 1.0) > kSumTolerance)
        throw std::invalid_argument("TokenDistributionSequence: row does not sum to 1");
    }
  }

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t length() const { return steps_.size(); }
  const std::vector<double>& step(std::size_t t) const { return steps_.at(t); }

 private:
  std::size_t vocab_size_;
  std::vector<std::vector<double>> steps_;
};

/// A loss value; `value` is +infinity when a target had zero probability.
struct LossValue {
  double value = 0.0;
  bool zero_probability = false;
};

namespace detail {

inline LossValue target_nll(const TokenDistributionSequence& predicted, std::span<const std::size_t> target) {
  if (target.size() != predicted.length())
    throw std::invalid_argument("loss: target length differs from number of steps");
  LossValue out;
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (target[t] >= predicted.vocab_size()) throw std::invalid_argument("loss: target id outside vocabulary");
    const double p = predicted.step(t)[target[t]];
    if (p <= 0.0) {
      out.zero_probability = true;
      out.value = std::numeric_limits<double>::infinity();
      return out;
    }
    out.value -= std::log(p);
  }
  if (out.value < 0.0) out.value = 0.0;  // -0.0 and rounding of log(1)
  return out;
}

}  // namespace detail

/// Token-level cross-entropy of the label span.
inline LossValue loss_entity(const TokenDistributionSequence& predicted, std::span<const std::size_t> target) {
  return detail::target_nll(predicted, target);
}

/// Negative log-likelihood of a cue span given its section prompt.
inline LossValue loss_generation(const TokenDistributionSequence& predicted, std::span<const std::size_t> target) {
  return detail::target_nll(predicted, target);
}

/// Weighted sum; an infinite component with a positive weight makes the sum infinite,
/// a zero weight disables its component entirely.
inline double combined_loss(double l1, double l2, double l3, const LossConfig& config) {
  const std::array<double, 3> l = {l1, l2, l3};
  const auto w = config.weights();
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    if (w[i] == 0.0) continue;
    if (std::isinf(l[i])) return std::numeric_limits<double>::infinity();
    total += w[i] * l[i];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenized records

class Vocabulary {
 public:
  std::size_t add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }
  std::size_t id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw std::out_of_range("unknown token: " + token);
    return it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
};

/// A completion split into its three spans, each predicted token by token.
struct TokenizedRecord {
  std::vector<std::size_t> context;  // prompt tokens (bag-of-words conditioning)
  std::size_t start = 0;             // token preceding the first completion token
  std::array<std::vector<std::size_t>, 3> spans;

  std::vector<std::size_t> completion() const {
    std::vector<std::size_t> out;
    for (const auto& s : spans) out.insert(out.end(), s.begin(), s.end());
    return out;
  }
};

/// Template with single-token section markers, used for word-level toy tokenization.
inline PromptTemplate toy_template() {
  PromptTemplate t;
  t.rho1_prefix = "<label> ";
  t.rho2_prefix = " <tbe> ";
  t.rho3_prefix = " <pbu> ";
  t.separator = " <sep>";
  t.stop_sequence = " </s>";
  t.completion_lead = " ";
  return t;
}

/// Whitespace tokenization of a fine-tune record. Tokens of the two cue spans
/// are tagged with their span ("2:", "3:") so that e.g. the empty-cue token is
/// a different symbol in each span. The stop sequence closes span 3.
inline TokenizedRecord tokenize_record(const FineTuneRecord& rec, const PromptTemplate& tpl, Vocabulary& vocab) {
  TokenizedRecord out;
  const auto prompt = text::split_whitespace(rec.prompt);
  if (prompt.size() < 2) throw std::invalid_argument("tokenize_record: prompt needs text and a separator token");
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) out.context.push_back(vocab.add(prompt[i]));
  out.start = vocab.add(prompt.back());

  std::string_view body = rec.completion;
  if (body.rfind(tpl.completion_lead, 0) == 0) body.remove_prefix(tpl.completion_lead.size());
  const bool stopped = body.size() >= tpl.stop_sequence.size() &&
                       body.substr(body.size() - tpl.stop_sequence.size()) == tpl.stop_sequence;
  if (!stopped) throw std::invalid_argument("tokenize_record: completion does not end with the stop sequence");
  body.remove_suffix(tpl.stop_sequence.size());
  const auto p2 = body.find(tpl.rho2_prefix);
  const auto p3 = p2 == std::string_view::npos ? p2 : body.find(tpl.rho3_prefix, p2 + tpl.rho2_prefix.size());
  if (p3 == std::string_view::npos) throw std::invalid_argument("tokenize_record: completion lacks cue sections");

  const std::array<std::string_view, 3> parts = {body.substr(0, p2), body.substr(p2, p3 - p2), body.substr(p3)};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string tag = s == 0 ? "" : std::to_string(s + 1) + ":";
    for (const auto& w : text::split_whitespace(parts[s])) out.spans[s].push_back(vocab.add(tag + w));
  }
  for (const auto& w : text::split_whitespace(tpl.stop_sequence)) out.spans[2].push_back(vocab.add("3:" + w));
  return out;
}

// ---------------------------------------------------------------------------
// Model

/// P(next | prev, prompt) = softmax(T[prev] + sum_{w in prompt} C[w]).
class ToyModel {
 public:
  ToyModel(Vocabulary vocab, double learning_rate, std::uint64_t seed = 0, double init_scale = 0.01)
      : vocab_(std::move(vocab)), learning_rate_(learning_rate), params_(2 * vocab_.size() * vocab_.size(), 0.0) {
    if (vocab_.size() == 0) throw std::invalid_argument("ToyModel: empty vocabulary");
    if (!(learning_rate_ > 0.0)) throw std::invalid_argument("ToyModel: learning rate must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_scale);
    if (init_scale > 0.0)
      for (double& p : params_) p = normal(rng);
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  double learning_rate() const { return learning_rate_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  std::size_t transition_index(std::size_t prev, std::size_t next) const { return prev * vocab_size() + next; }
  std::size_t context_index(std::size_t word, std::size_t next) const {
    return vocab_size() * vocab_size() + word * vocab_size() + next;
  }

  /// Next-token distribution.
  std::vector<double> distribution(std::size_t prev, std::span<const std::size_t> context) const {
    const std::size_t v = vocab_size();
    std::vector<double> logits(params_.begin() + static_cast<std::ptrdiff_t>(prev * v),
                               params_.begin() + static_cast<std::ptrdiff_t>((prev + 1) * v));
    for (auto w : context)
      for (std::size_t j = 0; j < v; ++j) logits[j] += params_[context_index(w, j)];
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (double& l : logits) l /= z;
    return logits;
  }

  /// Model outputs for span `s` of `rec`, conditioned on the preceding tokens.
  TokenDistributionSequence predict_span(const TokenizedRecord& rec, std::size_t s) const {
    std::size_t prev = rec.start;
    for (std::size_t k = 0; k < s; ++k)
      if (!rec.spans[k].empty()) prev = rec.spans[k].back();
    std::vector<std::vector<double>> steps;
    for (auto tok : rec.spans[s]) {
      steps.push_back(distribution(prev, rec.context));
      prev = tok;
    }
    return {vocab_size(), std::move(steps)};
  }

 private:
  Vocabulary vocab_;
  double learning_rate_;
  std::vector<double> params_;  // [transition V x V | context V x V]
};

struct SpanLosses {
  LossValue label, tbe, pbu;
};

inline SpanLosses span_losses(const ToyModel& model, const TokenizedRecord& rec) {
  return {loss_entity(model.predict_span(rec, 0), rec.spans[0]),
          loss_generation(model.predict_span(rec, 1), rec.spans[1]),
          loss_generation(model.predict_span(rec, 2), rec.spans[2])};
}

/// Mean over records of the combined loss.
inline double batch_loss(const ToyModel& model, const std::vector<TokenizedRecord>& batch, const LossConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  for (const auto& rec : batch) {
    const auto l = span_losses(model, rec);
    total += combined_loss(l.label.value, l.tbe.value, l.pbu.value, config);
  }
  return total / static_cast<double>(batch.size());
}

/// Negative log-likelihood of the whole completion as one sequence.
inline double sequence_nll(const ToyModel& model, const TokenizedRecord& rec) {
  double nll = 0.0;
  std::size_t prev = rec.start;
  for (auto tok : rec.completion()) {
    nll -= std::log(model.distribution(prev, rec.context)[tok]);
    prev = tok;
  }
  return nll;
}

/// Analytic gradient of batch_loss: each predicted position contributes
/// lambda_span * (p - onehot(target)) to its transition row and to the
/// context row of every prompt token.
inline std::vector<double> gradient(const ToyModel& model, const std::vector<TokenizedRecord>& batch,
                                    const LossConfig& config) {
  if (batch.empty()) throw std::invalid_argument("gradient: empty batch");
  const std::size_t v = model.vocab_size();
  std::vector<double> grad(model.parameters().size(), 0.0);
  const auto w = config.weights();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::vector<double> delta(v);
  for (const auto& rec : batch) {
    std::size_t prev = rec.start;
    for (std::size_t s = 0; s < 3; ++s) {
      for (auto tok : rec.spans[s]) {
        if (w[s] != 0.0) {
          const auto p = model.distribution(prev, rec.context);
          const double scale = w[s] * inv_batch;
          for (std::size_t j = 0; j < v; ++j) delta[j] = scale * (p[j] - (j == tok ? 1.0 : 0.0));
          for (std::size_t j = 0; j < v; ++j) grad[model.transition_index(prev, j)] += delta[j];
          for (auto c : rec.context)
            for (std::size_t j = 0; j < v; ++j) grad[model.context_index(c, j)] += delta[j];
        }
        prev = tok;
      }
    }
  }
  return grad;
}

class GradientCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t parameters_checked = 0;
  double max_abs_analytic = 0.0;
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kRelativeErrorFloor = 1e-5;

/// Compares the analytic gradient with central differences for every parameter.
inline GradientCheckResult gradient_check(const ToyModel& model, const std::vector<TokenizedRecord>& batch,
                                          const LossConfig& config, double h = 1e-5) {
  if (model.vocab_size() > 64 || batch.size() > 5 || batch.empty())
    throw std::invalid_argument("gradient_check: needs vocab <= 64 and 1..5 records");
  const double base = batch_loss(model, batch, config);
  if (!std::isfinite(base)) throw GradientCheckError("gradient_check: loss is not finite at the base point");
  const auto analytic = gradient(model, batch, config);
  ToyModel probe = model;
  auto& params = probe.parameters();
  GradientCheckResult out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = batch_loss(probe, batch, config);
    params[i] = saved - h;
    const double down = batch_loss(probe, batch, config);
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw GradientCheckError("gradient_check: loss became non-finite at parameter " + std::to_string(i));
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), kRelativeErrorFloor});
    out.max_abs_analytic = std::max(out.max_abs_analytic, std::fabs(a));
    if (rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst_parameter = i;
    }
    ++out.parameters_checked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

inline constexpr double kDivergenceThreshold = 1e6;

struct TrainingResult {
  std::vector<double> trajectory;  // combined loss at the start of each epoch
  bool diverged = false;
  std::string diagnostic;
};

/// Full-batch gradient descent.
inline TrainingResult train_toy(ToyModel& model, const std::vector<TokenizedRecord>& records, std::size_t epochs,
                                const LossConfig& config) {
  config.validate();
  if (records.empty()) throw std::invalid_argument("train_toy: no records");
  TrainingResult out;
  out.trajectory.reserve(epochs);
  for (std::size_t e = 0; e < epochs; ++e) {
    const double loss = batch_loss(model, records, config);
    if (!std::isfinite(loss) || loss > kDivergenceThreshold) {
      out.diverged = true;
      out.diagnostic = "diverged at epoch " + std::to_string(e) + ": loss " + std::to_string(loss);
      break;
    }
    out.trajectory.push_back(loss);
    const auto g = gradient(model, records, config);
    auto& p = model.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= model.learning_rate() * g[i];
  }
  return out;
}

/// Greedy decoding of the label span; true when it reproduces the gold span.
inline bool label_span_correct(const ToyModel& model, const TokenizedRecord& rec) {
  const auto& gold = rec.spans[0];
  const std::size_t stop = rec.spans[1].empty() ? rec.spans[2].front() : rec.spans[1].front();
  std::vector<std::size_t> decoded;
  std::size_t prev = rec.start;
  while (decoded.size() <= gold.size()) {
    const auto p = model.distribution(prev, rec.context);
    const auto next = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (next == stop) break;
    decoded.push_back(next);
    prev = next;
  }
  return decoded == gold;
}

inline double label_accuracy(const ToyModel& model, const std::vector<TokenizedRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : records) ok += label_span_correct(model, r) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Fixtures

/// Synthetic posts over a closed vocabulary; each positive factor contributes one cue word.
inline std::vector<Post> synthetic_posts(std::size_t n, std::uint64_t seed) {
  static const std::array<std::string_view, 8> kFiller = {"today", "work", "rain", "dinner",
                                                          "game",  "bus",  "exam", "walk"};
  static const std::array<std::string_view, 3> kTbe = {"alone", "lonely", "isolated"};
  static const std::array<std::string_view, 3> kPbu = {"useless", "weight", "trouble"};
  std::mt19937_64 rng(seed);
  auto pick = [&](auto& pool) { return std::string(pool[rng() % pool.size()]); };
  std::vector<Post> out;
  for (std::size_t i = 0; i < n; ++i) {
    Post p;
    p.id = "toy" + std::to_string(i);
    p.tbe_label = (i % 4) >= 2;
    p.pbu_label = (i % 2) == 1;
    std::vector<std::string> words;
    const std::size_t filler = 2 + rng() % 3;
    for (std::size_t k = 0; k < filler; ++k) words.push_back(pick(kFiller));
    if (p.tbe_label) {
      p.tbe_cue = pick(kTbe);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng() % (words.size() + 1)), p.tbe_cue);
    }
    if (p.pbu_label) {
      p.pbu_cue = pick(kPbu);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng() % (words.size() + 1)), p.pbu_cue);
    }
    for (const auto& w : words) p.text += (p.text.empty() ? "" : " ") + w;
    out.push_back(std::move(p));
  }
  return out;
}

/// Four posts with pairwise disjoint prompt vocabularies, one per label pair.
inline std::vector<Post> disjoint_prefix_posts() {
  return {
      Post{"m0", "quiet morning coffee", false, false, "", ""},
      Post{"m1", "heavy useless feeling", false, true, "", "useless"},
      Post{"m2", "empty lonely room", true, false, "lonely", ""},
      Post{"m3", "isolated tired trouble", true, true, "isolated", "trouble"},
  };
}

struct ToyDataset {
  Vocabulary vocab;
  std::vector<TokenizedRecord> records;
};

inline ToyDataset tokenize_posts(const std::vector<Post>& posts, const PromptTemplate& tpl = toy_template()) {
  ToyDataset out;
  for (const auto& p : posts) out.records.push_back(tokenize_record(build_finetune_record(p, tpl), tpl, out.vocab));
  return out;
}

}  // namespace interprompt::losslab
