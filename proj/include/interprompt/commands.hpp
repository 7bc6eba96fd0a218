#pragma once

// Subcommand implementations behind the `interprompt` CLI. Each returns a
// process exit code and writes human output to `out`, problems to `err`.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "interprompt/completion_parser.hpp"
#include "interprompt/config.hpp"
#include "interprompt/corpus.hpp"
#include "interprompt/llm_backend.hpp"
#include "interprompt/loss_lab.hpp"
#include "interprompt/manifest.hpp"
#include "interprompt/prompt_builder.hpp"
#include "interprompt/report.hpp"
#include "interprompt/significance.hpp"

namespace interprompt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kBackendError = 3 };

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline PromptTemplate load_template(const std::optional<std::filesystem::path>& config_path) {
  if (!config_path) return PromptTemplate{};
  return PromptTemplate::from_config(Config::load(*config_path));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct PrepareOptions {
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;  // [template] and [backend] sections
  std::optional<std::filesystem::path> manifest;
  CueCheck cue_check = CueCheck::warn;
  // Optional remote fine-tune submission.
  bool submit = false;
  std::size_t max_polls = 0;
  double poll_interval_s = 30.0;
  backend::CompletionBackend* backend = nullptr;  // required when submit is set
  std::optional<std::string> model_id;
};

inline int run_prepare(const PrepareOptions& opt, std::ostream& out, std::ostream& err) {
  PromptTemplate tpl;
  std::vector<Post> posts;
  try {
    tpl = detail::load_template(opt.config);
    auto rep = load_dataset(opt.dataset, std::nullopt, opt.cue_check);
    for (const auto& w : rep.warnings) err << "warning: row " << w.row << " (" << w.id << "): " << w.message << "\n";
    if (!rep.ok()) {
      err << "error: " << rep.errors.size() << " invalid row(s) in " << opt.dataset.string() << "\n"
          << describe(rep.errors);
      return kDataError;
    }
    posts = std::move(rep.posts);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  if (posts.empty()) {
    err << "error: dataset " << opt.dataset.string() << " has no posts\n";
    return kDataError;
  }
  std::vector<FineTuneRecord> records;
  try {
    records = build_finetune_records(posts, tpl);
    detail::write_file(opt.out, to_jsonl(records));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }

  const auto table = contingency(posts);
  out << "records: " << records.size() << "\n\n" << render_contingency(table);

  RunManifest m;
  m.command = "prepare";
  m.template_hash = tpl.hash();
  m.input_hashes[opt.dataset.string()] = sha256_file(opt.dataset.string());
  m.config["records"] = records.size();
  m.counts.total = records.size();

  if (opt.submit) {
    if (!opt.backend) {
      err << "error: --submit needs a backend\n";
      return kUsage;
    }
    try {
      backend::BackendConfig bc = opt.config ? backend::BackendConfig::from_config(Config::load(*opt.config))
                                             : backend::BackendConfig{};
      if (opt.model_id) bc.model_id = *opt.model_id;
      m.model_id = bc.model_id;
      m.config["backend"] = bc.snapshot();
      auto job = opt.backend->submit_finetune(opt.out, bc);
      m.job_ids.push_back(job.job_id);
      out << "\nfine-tune job: " << job.job_id << " (" << backend::to_string(job.status) << ")\n";
      for (std::size_t i = 0; i < opt.max_polls && !backend::is_terminal(job.status); ++i) {
        if (i > 0) std::this_thread::sleep_for(std::chrono::duration<double>(opt.poll_interval_s));
        job = opt.backend->poll_finetune(job, bc);
        out << "poll " << i + 1 << ": " << backend::to_string(job.status) << "\n";
      }
      if (job.result_model_id) out << "fine-tuned model: " << *job.result_model_id << "\n";
    } catch (const backend::BackendError& e) {
      err << "error: fine-tune submission failed (" << backend::to_string(e.kind()) << "): " << e.what() << "\n";
      return kBackendError;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kDataError;
    }
  }

  m.assign_run_id();
  m.created_at = utc_timestamp();
  if (opt.manifest) append_manifest(*opt.manifest, m);
  return kOk;
}

// ---------------------------------------------------------------------------
// predict / nshot

struct PredictOptions {
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> exemplars;  // pool for n-shot prompts (defaults to the dataset)
  std::optional<std::size_t> shots;
  std::optional<std::string> model_id;
  std::optional<std::string> base_url;
  std::optional<std::size_t> max_parallel;
  std::optional<std::filesystem::path> request_log;
  backend::CompletionBackend* backend = nullptr;
};

/// Fixture map for a mock backend that answers every dataset prompt with the gold completion.
inline std::map<std::string, std::string> gold_fixture(const std::vector<Post>& posts, const PromptTemplate& tpl,
                                                       const backend::BatchOptions& options) {
  std::map<std::string, std::string> fx;
  for (const auto& p : posts) fx[backend::prediction_prompt(p, tpl, options)] = build_finetune_record(p, tpl).completion;
  return fx;
}

/// Reads a JSONL file of {"prompt", "completion"} objects.
inline std::map<std::string, std::string> load_mock_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("mock fixture not found: " + path.string());
  std::map<std::string, std::string> fx;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim_view(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    fx[j.at("prompt").get<std::string>()] = j.at("completion").get<std::string>();
  }
  return fx;
}

inline int run_predict(const PredictOptions& opt, std::ostream& out, std::ostream& err) {
  if (!opt.backend) {
    err << "error: no backend configured\n";
    return kUsage;
  }
  PromptTemplate tpl;
  backend::BackendConfig bc;
  std::vector<Post> posts;
  backend::BatchOptions bo;
  std::optional<backend::ResponseCache> cache;
  RunManifest m;
  try {
    tpl = detail::load_template(opt.config);
    bc = opt.config ? backend::BackendConfig::from_config(Config::load(*opt.config)) : backend::BackendConfig{};
    if (opt.model_id) bc.model_id = *opt.model_id;
    if (opt.base_url) bc.base_url = *opt.base_url;
    if (opt.max_parallel) bc.max_parallel = *opt.max_parallel;
    bc.stop = {tpl.stop_sequence};
    bc.validate();
    posts = load_posts(opt.dataset);
    m.input_hashes[opt.dataset.string()] = sha256_file(opt.dataset.string());
    bo.shots = opt.shots;
    if (opt.shots) {
      bo.exemplar_pool = opt.exemplars ? load_posts(*opt.exemplars) : posts;
      if (opt.exemplars) m.input_hashes[opt.exemplars->string()] = sha256_file(opt.exemplars->string());
    }
    if (opt.cache_dir) {
      cache.emplace(*opt.cache_dir);
      bo.cache = &*cache;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  if (opt.request_log) opt.backend->log().set_sink(*opt.request_log);

  m.command = opt.shots ? "nshot" : "predict";
  m.model_id = bc.model_id;
  m.template_hash = tpl.hash();
  m.config["backend"] = bc.snapshot();
  m.config["shots"] = opt.shots ? nlohmann::ordered_json(*opt.shots) : nlohmann::ordered_json(nullptr);
  m.assign_run_id();

  const auto result = backend::batch_predict(posts, tpl, bc, *opt.backend, bo);
  std::string lines;
  m.counts.total = result.items.size();
  for (const auto& item : result.items) {
    PredictionRecord rec{m.run_id, item.id, item.prompt_hash, item.completion, item.error};
    const auto j = prediction_to_json(rec, tpl);
    const std::string status = j["parse"].is_null() ? "failed" : j["parse"]["status"].get<std::string>();
    if (status == "exact") ++m.counts.parsed;
    else if (status == "repaired") ++m.counts.repaired;
    else ++m.counts.unparseable;
    if (item.error) {
      ++m.counts.failed;
      err << "warning: " << item.id << ": " << *item.error << "\n";
    }
    lines += j.dump() + "\n";
  }
  try {
    detail::write_file(opt.out, lines);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  m.created_at = utc_timestamp();
  if (opt.manifest) append_manifest(*opt.manifest, m);

  out << "run " << m.run_id << ": " << result.items.size() << " posts, " << result.requests_issued
      << " requests, " << result.failures << " failures; exact " << m.counts.parsed << ", repaired "
      << m.counts.repaired << ", unparseable " << m.counts.unparseable << "\n";
  if (!posts.empty() && result.failures == posts.size()) return kBackendError;
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::filesystem::path predictions;
  std::filesystem::path gold;
  std::filesystem::path out_prefix;  // writes <prefix>.md and <prefix>.csv
  std::optional<std::filesystem::path> config;
};

inline int run_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const auto tpl = detail::load_template(opt.config);
    const auto preds = load_predictions(opt.predictions);
    const auto gold = load_posts(opt.gold);
    const auto rep = evaluate(preds, gold, tpl);
    const auto md = render_markdown(rep);
    auto md_path = opt.out_prefix, csv_path = opt.out_prefix;
    md_path += ".md";
    csv_path += ".csv";
    detail::write_file(md_path, md);
    detail::write_file(csv_path, render_csv(rep));
    out << md;
    return kOk;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// significance

/// One number per line; blank lines and lines starting with '#' are ignored.
inline significance::SampleVector load_score_file(const std::string& spec) {
  std::string label, path = spec;
  if (auto eq = spec.find('='); eq != std::string::npos) {
    label = spec.substr(0, eq);
    path = spec.substr(eq + 1);
  } else {
    label = std::filesystem::path(spec).stem().string();
  }
  std::ifstream in(path);
  if (!in) throw IngestionError("score file not found: " + path);
  significance::SampleVector v{label, {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      std::size_t used = 0;
      v.values.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw IngestionError(path + " line " + std::to_string(line_no) + ": not a number: " + t);
    }
  }
  return v;
}

struct SignificanceOptions {
  std::vector<std::string> score_files;  // "path" or "label=path"
  significance::Flavor flavor = significance::Flavor::welch;
  std::optional<std::filesystem::path> out;
};

inline int run_significance(const SignificanceOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.score_files.size() < 2) {
    err << "error: need at least 2 score files\n";
    return kUsage;
  }
  try {
    std::vector<significance::SampleVector> vectors;
    for (const auto& f : opt.score_files) vectors.push_back(load_score_file(f));
    const auto m = significance::pairwise_matrix(vectors, opt.flavor);
    const auto md = render_significance(m);
    if (opt.out) detail::write_file(*opt.out, md);
    out << md;
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// losslab

struct LossLabOptions {
  std::string fixture = "default";  // "default" (synthetic) or "memorize" (4 disjoint records)
  std::size_t records = 50;
  std::size_t epochs = 200;
  double learning_rate = 0.5;
  losslab::LossConfig loss;
  std::uint64_t seed = 7;
  std::optional<std::filesystem::path> trajectory_csv;
};

inline constexpr double kGradientTolerance = 1e-4;

inline int run_losslab(const LossLabOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    opt.loss.validate();
    std::vector<Post> posts;
    if (opt.fixture == "default")
      posts = losslab::synthetic_posts(opt.records, opt.seed);
    else if (opt.fixture == "memorize")
      posts = losslab::disjoint_prefix_posts();
    else {
      err << "error: unknown fixture '" << opt.fixture << "'\n";
      return kUsage;
    }
    const auto data = losslab::tokenize_posts(posts);

    // Gradient check on the first (at most 5) records with a non-trivial parameter point.
    std::vector<losslab::TokenizedRecord> probe(data.records.begin(),
                                                data.records.begin() + std::min<std::ptrdiff_t>(5, data.records.size()));
    losslab::ToyModel check_model(data.vocab, opt.learning_rate, opt.seed, 0.5);
    const auto gc = losslab::gradient_check(check_model, probe, opt.loss);

    losslab::ToyModel model(data.vocab, opt.learning_rate, opt.seed);
    const auto run = losslab::train_toy(model, data.records, opt.epochs, opt.loss);
    if (opt.trajectory_csv) {
      std::string csv = "epoch,combined_loss\n";
      for (std::size_t e = 0; e < run.trajectory.size(); ++e) csv += std::to_string(e) + "," + fmt6(run.trajectory[e]) + "\n";
      detail::write_file(*opt.trajectory_csv, csv);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", gc.max_relative_error);
    out << "records: " << data.records.size() << ", vocabulary: " << data.vocab.size() << "\n";
    out << "gradient check: max relative error " << buf << " over " << gc.parameters_checked << " parameters\n";
    if (!run.trajectory.empty())
      out << "loss: initial " << fmt6(run.trajectory.front()) << ", final " << fmt6(run.trajectory.back()) << " after "
          << run.trajectory.size() << " epochs\n";
    out << "label accuracy (greedy): " << fmt4(losslab::label_accuracy(model, data.records)) << "\n";
    if (run.diverged) {
      err << "error: " << run.diagnostic << "\n";
      return kDataError;
    }
    if (gc.max_relative_error >= kGradientTolerance) {
      err << "error: gradient check failed (" << buf << " >= 1e-4)\n";
      return kDataError;
    }
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::vector<std::string> evaluations;  // "label=report.csv"
  std::optional<std::filesystem::path> out;
};

inline int run_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.evaluations.empty()) {
    err << "error: need at least one --eval label=report.csv\n";
    return kUsage;
  }
  try {
    std::vector<std::pair<std::string, std::map<std::string, std::string>>> runs;
    for (const auto& spec : opt.evaluations) {
      const auto eq = spec.find('=');
      const std::string label = eq == std::string::npos ? std::filesystem::path(spec).stem().string() : spec.substr(0, eq);
      const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      runs.emplace_back(label, read_report_csv(path));
    }
    const auto md = render_comparison(runs);
    if (opt.out) detail::write_file(*opt.out, md);
    out << md;
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace interprompt::cli
