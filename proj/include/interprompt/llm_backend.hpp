#pragma once

// Completion and fine-tune job clients.
//
// HttpBackend speaks the completion-style JSON convention
// (POST /v1/completions with model, prompt, max_tokens, temperature, stop)
// plus the file-upload and fine-tune job endpoints. MockBackend implements the
// same interface in-process from a fixture map. batch_predict drives either
// with bounded parallelism and an on-disk response cache.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "interprompt/config.hpp"
#include "interprompt/corpus.hpp"
#include "interprompt/hashing.hpp"
#include "interprompt/prompt_builder.hpp"

namespace interprompt::backend {

inline constexpr const char* kApiKeyEnv = "INTERPROMPT_API_KEY";

struct BackendConfig {
  std::string base_url = "https://api.openai.com";
  std::string api_key;  // never serialized
  std::string model_id = "davinci";
  int max_tokens = 128;
  double temperature = 0.0;
  std::vector<std::string> stop = {"\n###\n"};
  std::size_t max_parallel = 4;
  std::size_t retry_budget = 3;
  double retry_base_delay_s = 1.0;  // exponential backoff when no Retry-After header
  double max_retry_wait_s = 60.0;
  int timeout_s = 60;

  void validate() const {
    if (max_parallel < 1) throw std::invalid_argument("backend: max_parallel must be >= 1");
    if (max_tokens < 1) throw std::invalid_argument("backend: max_tokens must be positive");
    if (!(temperature >= 0.0)) throw std::invalid_argument("backend: temperature must be >= 0");
    if (model_id.empty()) throw std::invalid_argument("backend: model_id is empty");
  }

  /// Snapshot for manifests; the API key is deliberately absent.
  nlohmann::ordered_json snapshot() const {
    nlohmann::ordered_json j;
    j["base_url"] = base_url;
    j["model_id"] = model_id;
    j["max_tokens"] = max_tokens;
    j["temperature"] = temperature;
    j["stop"] = stop;
    j["max_parallel"] = max_parallel;
    j["retry_budget"] = retry_budget;
    return j;
  }

  /// [backend] section of a config file; the key comes from the environment.
  static BackendConfig from_config(const Config& c) {
    BackendConfig b;
    auto num = [&](const char* key, auto& field) {
      if (auto v = c.get("backend", key)) {
        try {
          field = static_cast<std::decay_t<decltype(field)>>(std::stod(*v));
        } catch (const std::exception&) {
          throw ConfigError(std::string("backend.") + key + " is not a number: " + *v);
        }
      }
    };
    if (auto v = c.get("backend", "base_url")) b.base_url = *v;
    if (auto v = c.get("backend", "model_id")) b.model_id = *v;
    if (auto v = c.get("backend", "stop")) b.stop = {*v};
    num("max_tokens", b.max_tokens);
    num("temperature", b.temperature);
    num("max_parallel", b.max_parallel);
    num("retry_budget", b.retry_budget);
    num("retry_base_delay_s", b.retry_base_delay_s);
    num("timeout_s", b.timeout_s);
    if (const char* key = std::getenv(kApiKeyEnv)) b.api_key = key;
    b.validate();
    return b;
  }
};

enum class ErrorKind { transport, auth, service, not_found, validation };

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::transport: return "transport";
    case ErrorKind::auth: return "auth";
    case ErrorKind::service: return "service";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::validation: return "validation";
  }
  return "unknown";
}

class BackendError : public std::runtime_error {
 public:
  BackendError(ErrorKind kind, const std::string& message, bool retriable = false)
      : std::runtime_error(message), kind_(kind), retriable_(retriable) {}
  ErrorKind kind() const { return kind_; }
  bool retriable() const { return retriable_; }

 private:
  ErrorKind kind_;
  bool retriable_;
};

enum class JobStatus { pending, running, succeeded, failed };

inline std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

inline bool is_terminal(JobStatus s) { return s == JobStatus::succeeded || s == JobStatus::failed; }

struct FineTuneJob {
  std::string job_id;
  std::string training_file;
  JobStatus status = JobStatus::pending;
  std::optional<std::string> result_model_id;  // present iff succeeded
  std::string message;
};

struct RequestLogEntry {
  std::string prompt_hash;
  std::string model_id;
  double latency_ms = 0.0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::size_t retries = 0;
  std::string outcome;  // "ok" or an error kind
};

/// Thread-safe in-memory log with an optional JSONL sink.
class RequestLog {
 public:
  void set_sink(std::filesystem::path path) {
    std::lock_guard lock(mu_);
    sink_ = std::move(path);
  }
  void record(RequestLogEntry e) {
    std::lock_guard lock(mu_);
    if (sink_) {
      nlohmann::ordered_json j;
      j["prompt_hash"] = e.prompt_hash;
      j["model_id"] = e.model_id;
      j["latency_ms"] = e.latency_ms;
      j["prompt_tokens"] = e.prompt_tokens;
      j["completion_tokens"] = e.completion_tokens;
      j["retries"] = e.retries;
      j["outcome"] = e.outcome;
      std::ofstream(*sink_, std::ios::app) << j.dump() << '\n';
    }
    entries_.push_back(std::move(e));
  }
  std::vector<RequestLogEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> sink_;
  std::vector<RequestLogEntry> entries_;
};

/// Cuts `text` at the earliest occurrence of any stop string.
inline std::string truncate_at_stop(std::string text, const std::vector<std::string>& stops) {
  std::size_t cut = text.size();
  for (const auto& s : stops)
    if (!s.empty())
      if (auto p = text.find(s); p != std::string::npos) cut = std::min(cut, p);
  text.resize(cut);
  return text;
}

/// Checks a fine-tune JSONL file locally; returns its record count.
inline std::size_t validate_finetune_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError(ErrorKind::validation, "fine-tune file not found: " + path.string());
  std::size_t n = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim_view(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw BackendError(ErrorKind::validation, "fine-tune file line " + std::to_string(line_no) + ": malformed JSON");
    }
    if (!j.is_object() || !j.contains("prompt") || !j.contains("completion") || !j["prompt"].is_string() ||
        !j["completion"].is_string())
      throw BackendError(ErrorKind::validation,
                         "fine-tune file line " + std::to_string(line_no) + ": needs string prompt and completion");
    ++n;
  }
  if (n == 0) throw BackendError(ErrorKind::validation, "fine-tune file is empty: " + path.string());
  return n;
}

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const std::string& prompt, const BackendConfig& config) = 0;
  virtual FineTuneJob submit_finetune(const std::filesystem::path& records, const BackendConfig& config) = 0;
  virtual FineTuneJob poll_finetune(const FineTuneJob& job, const BackendConfig& config) = 0;

  RequestLog& log() { return log_; }
  const RequestLog& log() const { return log_; }

 protected:
  RequestLog log_;
};

// ---------------------------------------------------------------------------
// Mock

/// Deterministic in-process backend. Unknown prompts receive a completion
/// labelled with the template's (0, 0) phrase and empty cues.
class MockBackend : public CompletionBackend {
 public:
  explicit MockBackend(std::map<std::string, std::string> fixtures = {},
                       const PromptTemplate& tpl = PromptTemplate{})
      : fixtures_(std::move(fixtures)),
        fallback_(tpl.completion_lead + build_completion(Post{"", "-", false, false, "", ""}, tpl).serialized +
                  tpl.stop_sequence) {}

  void set_fixture(const std::string& prompt, std::string completion) {
    std::lock_guard lock(mu_);
    fixtures_[prompt] = std::move(completion);
  }
  void fail_prompt(const std::string& prompt) {
    std::lock_guard lock(mu_);
    failing_.insert(prompt);
  }
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }
  /// Fine-tune jobs report success on this poll (1-based); 0 makes them fail on the first poll.
  void set_polls_to_success(std::size_t n) { polls_to_success_ = n; }
  const std::string& fallback() const { return fallback_; }

  std::string complete(const std::string& prompt, const BackendConfig& config) override {
    if (prompt.empty()) throw BackendError(ErrorKind::validation, "empty prompt");
    const int now = ++in_flight_;
    for (int seen = max_in_flight_.load(); now > seen && !max_in_flight_.compare_exchange_weak(seen, now);) {
    }
    const auto t0 = std::chrono::steady_clock::now();
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    std::string result;
    bool fail = false;
    {
      std::lock_guard lock(mu_);
      calls_.push_back(prompt);
      fail = failing_.count(prompt) != 0;
      if (!fail) {
        auto it = fixtures_.find(prompt);
        result = it != fixtures_.end() ? it->second : fallback_;
      }
    }
    --in_flight_;
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (fail) {
      log_.record({sha256_hex(prompt), config.model_id, ms, text::split_whitespace(prompt).size(), 0, 0, "transport"});
      throw BackendError(ErrorKind::transport, "mock: scripted failure", true);
    }
    result = truncate_at_stop(std::move(result), config.stop);
    log_.record({sha256_hex(prompt), config.model_id, ms, text::split_whitespace(prompt).size(),
                 text::split_whitespace(result).size(), 0, "ok"});
    return result;
  }

  FineTuneJob submit_finetune(const std::filesystem::path& records, const BackendConfig& config) override {
    validate_finetune_file(records);
    std::lock_guard lock(mu_);
    FineTuneJob job;
    job.job_id = "mockjob-" + std::to_string(jobs_.size() + 1);
    job.training_file = records.string();
    job.status = JobStatus::pending;
    jobs_[job.job_id] = {job, 0, config.model_id};
    return job;
  }

  FineTuneJob poll_finetune(const FineTuneJob& job, const BackendConfig&) override {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job.job_id);
    if (it == jobs_.end()) throw BackendError(ErrorKind::not_found, "unknown fine-tune job: " + job.job_id);
    auto& state = it->second;
    if (is_terminal(state.job.status)) return state.job;
    ++state.polls;
    if (polls_to_success_ == 0) {
      state.job.status = JobStatus::failed;
      state.job.message = "mock: scripted failure";
    } else if (state.polls >= polls_to_success_) {
      state.job.status = JobStatus::succeeded;
      state.job.result_model_id = state.base_model + ":ft-" + state.job.job_id;
    } else {
      state.job.status = JobStatus::running;
    }
    return state.job;
  }

  std::vector<std::string> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }
  std::size_t call_count() const {
    std::lock_guard lock(mu_);
    return calls_.size();
  }
  int max_in_flight() const { return max_in_flight_.load(); }

 private:
  struct JobState {
    FineTuneJob job;
    std::size_t polls = 0;
    std::string base_model;
  };

  mutable std::mutex mu_;
  std::map<std::string, std::string> fixtures_;
  std::set<std::string> failing_;
  std::string fallback_;
  std::vector<std::string> calls_;
  std::map<std::string, JobState> jobs_;
  std::chrono::milliseconds latency_{0};
  std::size_t polls_to_success_ = 1;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

// ---------------------------------------------------------------------------
// HTTP

class HttpBackend : public CompletionBackend {
 public:
  std::string complete(const std::string& prompt, const BackendConfig& config) override {
    if (prompt.empty()) throw BackendError(ErrorKind::validation, "empty prompt");
    require_key(config);
    nlohmann::json body;
    body["model"] = config.model_id;
    body["prompt"] = prompt;
    body["max_tokens"] = config.max_tokens;
    body["temperature"] = config.temperature;
    body["stop"] = config.stop;
    RequestLogEntry entry{sha256_hex(prompt), config.model_id, 0.0, 0, 0, 0, ""};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto res = send(config, entry.retries, [&](httplib::Client& cli) {
        return cli.Post("/v1/completions", body.dump(), "application/json");
      });
      const auto j = parse_json(res->body);
      if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
          !j["choices"][0].contains("text") || !j["choices"][0]["text"].is_string())
        throw BackendError(ErrorKind::service, "completion response has no choices[0].text");
      if (j.contains("usage") && j["usage"].is_object()) {
        entry.prompt_tokens = j["usage"].value("prompt_tokens", 0u);
        entry.completion_tokens = j["usage"].value("completion_tokens", 0u);
      }
      entry.outcome = "ok";
      entry.latency_ms = elapsed_ms(t0);
      log_.record(entry);
      return truncate_at_stop(j["choices"][0]["text"].get<std::string>(), config.stop);
    } catch (const BackendError& e) {
      entry.outcome = std::string(to_string(e.kind()));
      entry.latency_ms = elapsed_ms(t0);
      log_.record(entry);
      throw;
    }
  }

  FineTuneJob submit_finetune(const std::filesystem::path& records, const BackendConfig& config) override {
    validate_finetune_file(records);
    require_key(config);
    std::size_t retries = 0;
    const std::string content = read_file(records.string());
    httplib::MultipartFormDataItems items = {
        {"purpose", "fine-tune", "", ""},
        {"file", content, records.filename().string(), "application/jsonl"},
    };
    auto up = send(config, retries, [&](httplib::Client& cli) { return cli.Post("/v1/files", items); });
    const auto file = parse_json(up->body);
    if (!file.contains("id") || !file["id"].is_string())
      throw BackendError(ErrorKind::service, "file upload response has no id");
    nlohmann::json body;
    body["training_file"] = file["id"];
    body["model"] = config.model_id;
    auto res = send(config, retries, [&](httplib::Client& cli) {
      return cli.Post("/v1/fine_tuning/jobs", body.dump(), "application/json");
    });
    auto job = job_from_json(parse_json(res->body));
    job.training_file = file["id"].get<std::string>();
    return job;
  }

  FineTuneJob poll_finetune(const FineTuneJob& job, const BackendConfig& config) override {
    if (is_terminal(job.status)) return job;
    require_key(config);
    std::size_t retries = 0;
    auto res = send(config, retries,
                    [&](httplib::Client& cli) { return cli.Get("/v1/fine_tuning/jobs/" + job.job_id); });
    auto updated = job_from_json(parse_json(res->body));
    if (updated.training_file.empty()) updated.training_file = job.training_file;
    return updated;
  }

  /// Sleeps are routed through this hook so tests can observe backoff.
  std::function<void(double seconds)> sleeper = [](double s) {
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };

 private:
  static double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }

  static void require_key(const BackendConfig& config) {
    if (config.api_key.empty())
      throw BackendError(ErrorKind::auth, std::string("no API key; set ") + kApiKeyEnv);
  }

  static nlohmann::json parse_json(const std::string& body) {
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      throw BackendError(ErrorKind::service, "response is not JSON");
    }
  }

  static std::string service_message(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("error") && j["error"].is_object() && j["error"].contains("message") &&
          j["error"]["message"].is_string())
        return j["error"]["message"].get<std::string>();
    } catch (const nlohmann::json::parse_error&) {
    }
    return body;
  }

  static FineTuneJob job_from_json(const nlohmann::json& j) {
    FineTuneJob job;
    if (!j.contains("id") || !j["id"].is_string()) throw BackendError(ErrorKind::service, "job response has no id");
    job.job_id = j["id"].get<std::string>();
    if (j.contains("training_file") && j["training_file"].is_string())
      job.training_file = j["training_file"].get<std::string>();
    const std::string status = j.value("status", "");
    if (status == "succeeded")
      job.status = JobStatus::succeeded;
    else if (status == "failed" || status == "cancelled")
      job.status = JobStatus::failed;
    else if (status == "running")
      job.status = JobStatus::running;
    else
      job.status = JobStatus::pending;
    if (job.status == JobStatus::succeeded) {
      if (!j.contains("fine_tuned_model") || !j["fine_tuned_model"].is_string())
        throw BackendError(ErrorKind::service, "succeeded job has no fine_tuned_model");
      job.result_model_id = j["fine_tuned_model"].get<std::string>();
    }
    return job;
  }

  template <typename Call>
  httplib::Result send(const BackendConfig& config, std::size_t& retries, Call&& call) {
    for (std::size_t attempt = 0;; ++attempt) {
      httplib::Client cli(config.base_url);
      cli.set_bearer_token_auth(config.api_key);
      cli.set_connection_timeout(config.timeout_s);
      cli.set_read_timeout(config.timeout_s);
      auto res = call(cli);
      double wait = config.retry_base_delay_s * std::pow(2.0, static_cast<double>(attempt));
      std::string failure;
      if (!res) {
        failure = "transport failure: " + httplib::to_string(res.error());
      } else if (res->status == 429 || res->status >= 500) {
        failure = "HTTP " + std::to_string(res->status) + ": " + service_message(res->body);
        if (res->has_header("Retry-After")) {
          try {
            wait = std::stod(res->get_header_value("Retry-After"));
          } catch (const std::exception&) {
          }
        }
      } else if (res->status == 401 || res->status == 403) {
        throw BackendError(ErrorKind::auth, "HTTP " + std::to_string(res->status) + ": " + service_message(res->body));
      } else if (res->status == 404) {
        throw BackendError(ErrorKind::not_found, service_message(res->body));
      } else if (res->status >= 400) {
        throw BackendError(ErrorKind::service, service_message(res->body));
      } else {
        return res;
      }
      if (attempt >= config.retry_budget)
        throw BackendError(ErrorKind::transport, failure + " (retry budget exhausted)", true);
      ++retries;
      sleeper(std::clamp(wait, 0.0, config.max_retry_wait_s));
    }
  }
};

// ---------------------------------------------------------------------------
// Cache and batch prediction

/// Completions on disk keyed by (model_id, prompt hash).
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  static std::string key(const std::string& model_id, const std::string& prompt) {
    return sha256_hex(model_id + '\n' + sha256_hex(prompt));
  }

  std::optional<std::string> get(const std::string& model_id, const std::string& prompt) const {
    std::ifstream in(dir_ / (key(model_id, prompt) + ".json"));
    if (!in) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.value("model_id", "") == model_id && j.value("prompt_hash", "") == sha256_hex(prompt))
        return j.at("completion").get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    return std::nullopt;
  }

  void put(const std::string& model_id, const std::string& prompt, const std::string& completion) const {
    nlohmann::ordered_json j;
    j["model_id"] = model_id;
    j["prompt_hash"] = sha256_hex(prompt);
    j["completion"] = completion;
    const auto final_path = dir_ / (key(model_id, prompt) + ".json");
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    std::ofstream(tmp) << j.dump();
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path dir_;
};

struct PredictionItem {
  std::string id;
  std::string prompt_hash;
  std::optional<std::string> completion;
  std::optional<std::string> error;  // per-item failure
  bool cached = false;
};

struct BatchOptions {
  std::optional<std::size_t> shots;  // unset: fine-tuned prompt (text + separator)
  std::vector<Post> exemplar_pool;   // first `shots` posts not equal to the target
  const ResponseCache* cache = nullptr;
};

struct BatchResult {
  std::vector<PredictionItem> items;  // same order as the input posts
  std::size_t requests_issued = 0;
  std::size_t failures = 0;
};

/// Prompt sent for `post` under `options`.
inline std::string prediction_prompt(const Post& post, const PromptTemplate& tpl, const BatchOptions& options) {
  if (!options.shots) return build_finetune_record(post, tpl).prompt;
  std::vector<Post> exemplars;
  for (const auto& e : options.exemplar_pool) {
    if (exemplars.size() == *options.shots) break;
    if (e.id != post.id) exemplars.push_back(e);
  }
  if (exemplars.size() < *options.shots)
    throw PromptError("not enough exemplars for " + std::to_string(*options.shots) + "-shot prompt of '" + post.id +
                      "'");
  return build_nshot_prompt(post, exemplars, tpl).text;
}

/// One completion per post, at most config.max_parallel requests in flight.
/// Failures are recorded per item; the batch never aborts.
inline BatchResult batch_predict(const std::vector<Post>& posts, const PromptTemplate& tpl,
                                 const BackendConfig& config, CompletionBackend& backend,
                                 const BatchOptions& options = {}) {
  config.validate();
  BatchResult out;
  out.items.resize(posts.size());
  std::vector<std::string> prompts(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    out.items[i].id = posts[i].id;
    try {
      prompts[i] = prediction_prompt(posts[i], tpl, options);
      out.items[i].prompt_hash = sha256_hex(prompts[i]);
    } catch (const std::exception& e) {
      out.items[i].error = e.what();
    }
  }
  std::atomic<std::size_t> next{0}, issued{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < posts.size(); i = next++) {
      auto& item = out.items[i];
      if (item.error) continue;
      if (options.cache) {
        if (auto hit = options.cache->get(config.model_id, prompts[i])) {
          item.completion = std::move(*hit);
          item.cached = true;
          continue;
        }
      }
      ++issued;
      try {
        item.completion = backend.complete(prompts[i], config);
        if (options.cache) options.cache->put(config.model_id, prompts[i], *item.completion);
      } catch (const std::exception& e) {
        item.error = e.what();
      }
    }
  };
  const std::size_t workers = std::min(config.max_parallel, std::max<std::size_t>(posts.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  out.requests_issued = issued.load();
  out.failures = static_cast<std::size_t>(
      std::count_if(out.items.begin(), out.items.end(), [](const PredictionItem& p) { return p.error.has_value(); }));
  return out;
}

}  // namespace interprompt::backend
