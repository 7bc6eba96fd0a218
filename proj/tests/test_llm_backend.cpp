#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "interprompt/commands.hpp"
#include "interprompt/llm_backend.hpp"
#include "test_util.hpp"

using namespace interprompt;
using namespace interprompt::backend;

namespace {

std::vector<Post> make_posts(std::size_t n) {
  std::vector<Post> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(Post{"q" + std::to_string(i), "post number " + std::to_string(i), i % 2 == 1, false,
                       i % 2 == 1 ? "number" : "", ""});
  return out;
}

std::filesystem::path write_finetune_file(const testutil::TempDir& dir, std::size_t n) {
  const auto path = dir / "train.jsonl";
  testutil::write(path, to_jsonl(build_finetune_records(make_posts(n), PromptTemplate{})));
  return path;
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class FakeServer {
 public:
  FakeServer() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  httplib::Server server;

 private:
  int port_ = 0;
  std::thread thread_;
};

BackendConfig http_config(const std::string& url) {
  BackendConfig c;
  c.base_url = url;
  c.api_key = "sk-test-not-a-real-key";
  c.timeout_s = 5;
  return c;
}

std::string completion_body(const std::string& text) {
  return nlohmann::json{{"choices", {{{"text", text}}}}, {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 3}}}}
      .dump();
}

}  // namespace

TEST(MockBackend, FixtureLookupAndFallback) {
  const PromptTemplate tpl;
  MockBackend mock({{"known prompt", " This given sentence represents burden"}}, tpl);
  const BackendConfig cfg;
  EXPECT_EQ(mock.complete("known prompt", cfg), " This given sentence represents burden");
  const auto fb = mock.complete("something else", cfg);
  EXPECT_EQ(fb, mock.complete("something else", cfg));
  const auto parsed = parse_completion(fb, tpl);
  EXPECT_EQ(parsed.labels(), (LabelPair{false, false}));
  EXPECT_TRUE(parsed.exact);
  EXPECT_THROW(mock.complete("", cfg), BackendError);
}

TEST(MockBackend, TruncatesAtStop) {
  MockBackend mock(std::map<std::string, std::string>{{"p", "abc\n###\ndef"}});
  EXPECT_EQ(mock.complete("p", BackendConfig{}), "abc");
}

TEST(MockBackend, FineTuneSucceedsOnThirdPoll) {
  testutil::TempDir dir;
  MockBackend mock;
  mock.set_polls_to_success(3);
  const BackendConfig cfg;
  auto job = mock.submit_finetune(write_finetune_file(dir, 1972), cfg);
  EXPECT_EQ(job.status, JobStatus::pending);
  EXPECT_FALSE(job.job_id.empty());
  job = mock.poll_finetune(job, cfg);
  EXPECT_EQ(job.status, JobStatus::running);
  EXPECT_FALSE(job.result_model_id);
  job = mock.poll_finetune(job, cfg);
  EXPECT_FALSE(job.result_model_id);
  job = mock.poll_finetune(job, cfg);
  EXPECT_EQ(job.status, JobStatus::succeeded);
  ASSERT_TRUE(job.result_model_id);
  const auto again = mock.poll_finetune(job, cfg);
  EXPECT_EQ(again.status, JobStatus::succeeded);
  EXPECT_EQ(again.result_model_id, job.result_model_id);
}

TEST(MockBackend, FailedJobIsSticky) {
  testutil::TempDir dir;
  MockBackend mock;
  mock.set_polls_to_success(0);
  auto job = mock.poll_finetune(mock.submit_finetune(write_finetune_file(dir, 3), {}), {});
  EXPECT_EQ(job.status, JobStatus::failed);
  mock.set_polls_to_success(1);
  EXPECT_EQ(mock.poll_finetune(job, {}).status, JobStatus::failed);
}

TEST(MockBackend, UnknownJob) {
  MockBackend mock;
  FineTuneJob ghost;
  ghost.job_id = "nope";
  try {
    mock.poll_finetune(ghost, {});
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_found);
  }
}

TEST(MockBackend, EmptyFileIsRejectedLocally) {
  testutil::TempDir dir;
  testutil::write(dir / "empty.jsonl", "");
  testutil::write(dir / "bad.jsonl", "{\"prompt\": 1}\n");
  FakeServer server;
  std::atomic<int> hits{0};
  server.server.Post(".*", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
  });
  HttpBackend http;
  for (auto* backend : std::initializer_list<CompletionBackend*>{&http}) {
    try {
      backend->submit_finetune(dir / "empty.jsonl", http_config(server.url()));
      FAIL();
    } catch (const BackendError& e) {
      EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
    EXPECT_THROW(backend->submit_finetune(dir / "bad.jsonl", http_config(server.url())), BackendError);
  }
  EXPECT_EQ(hits.load(), 0);
  MockBackend mock;
  EXPECT_THROW(mock.submit_finetune(dir / "empty.jsonl", {}), BackendError);
}

TEST(HttpBackend, RetriesRateLimitThenSucceeds) {
  FakeServer server;
  std::atomic<int> calls{0};
  std::string seen_auth, seen_body;
  server.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = 429;
      res.set_header("Retry-After", "0.25");
      res.set_content(R"({"error":{"message":"slow down"}})", "application/json");
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(completion_body(" This given sentence represents burden\n###\ntrailing"), "application/json");
  });
  HttpBackend http;
  std::vector<double> waits;
  http.sleeper = [&](double s) { waits.push_back(s); };
  const auto cfg = http_config(server.url());
  EXPECT_EQ(http.complete("a prompt", cfg), " This given sentence represents burden");
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(waits, (std::vector<double>{0.25, 0.25}));
  const auto entries = http.log().entries();
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].retries, 2u);
  EXPECT_EQ(entries[0].outcome, "ok");
  EXPECT_EQ(entries[0].prompt_tokens, 7u);
  EXPECT_EQ(entries[0].prompt_hash, sha256_hex("a prompt"));
  EXPECT_EQ(seen_auth, "Bearer " + cfg.api_key);
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body["model"], "davinci");
  EXPECT_EQ(body["prompt"], "a prompt");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["stop"][0], "\n###\n");
}

TEST(HttpBackend, RetryBudgetExhaustion) {
  FakeServer server;
  std::atomic<int> calls{0};
  server.server.Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  HttpBackend http;
  std::vector<double> waits;
  http.sleeper = [&](double s) { waits.push_back(s); };
  auto cfg = http_config(server.url());
  cfg.retry_budget = 2;
  try {
    http.complete("p", cfg);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::transport);
    EXPECT_TRUE(e.retriable());
  }
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(waits, (std::vector<double>{1.0, 2.0}));
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  FakeServer server;
  std::atomic<int> calls{0};
  server.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    res.status = req.body.find("auth") != std::string::npos ? 401 : 400;
    res.set_content(R"({"error":{"message":"prompt too long for model"}})", "application/json");
  });
  HttpBackend http;
  http.sleeper = [](double) { FAIL() << "no retry expected"; };
  try {
    http.complete("plain", http_config(server.url()));
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::service);
    EXPECT_STREQ(e.what(), "prompt too long for model");
  }
  try {
    http.complete("auth", http_config(server.url()));
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::auth);
  }
  EXPECT_EQ(calls.load(), 2);
}

TEST(HttpBackend, MissingKeyFailsWithoutRequest) {
  HttpBackend http;
  BackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:9";
  try {
    http.complete("p", cfg);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::auth);
    EXPECT_NE(std::string(e.what()).find(kApiKeyEnv), std::string::npos);
  }
}

TEST(HttpBackend, NetworkFailureIsRetriableTransportError) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpBackend http;
  http.sleeper = [](double) {};
  auto cfg = http_config("http://127.0.0.1:" + std::to_string(port));
  cfg.retry_budget = 1;
  FineTuneJob job;
  job.job_id = "ft-1";
  try {
    http.poll_finetune(job, cfg);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::transport);
    EXPECT_TRUE(e.retriable());
  }
}

TEST(HttpBackend, FineTuneLifecycle) {
  FakeServer server;
  std::atomic<int> polls{0};
  std::string uploaded;
  server.server.Post("/v1/files", [&](const httplib::Request& req, httplib::Response& res) {
    uploaded = req.get_file_value("file").content;
    EXPECT_EQ(req.get_file_value("purpose").content, "fine-tune");
    res.set_content(R"({"id":"file-1"})", "application/json");
  });
  server.server.Post("/v1/fine_tuning/jobs", [&](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    EXPECT_EQ(j["training_file"], "file-1");
    res.set_content(R"({"id":"ft-1","status":"queued","training_file":"file-1"})", "application/json");
  });
  server.server.Get(R"(/v1/fine_tuning/jobs/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
    if (req.matches[1] != "ft-1") {
      res.status = 404;
      res.set_content(R"({"error":{"message":"no such job"}})", "application/json");
      return;
    }
    if (++polls < 3)
      res.set_content(R"({"id":"ft-1","status":"running"})", "application/json");
    else
      res.set_content(R"({"id":"ft-1","status":"succeeded","fine_tuned_model":"davinci:ft-1"})", "application/json");
  });
  testutil::TempDir dir;
  const auto file = write_finetune_file(dir, 4);
  HttpBackend http;
  const auto cfg = http_config(server.url());
  auto job = http.submit_finetune(file, cfg);
  EXPECT_EQ(job.job_id, "ft-1");
  EXPECT_EQ(job.status, JobStatus::pending);
  EXPECT_EQ(uploaded, read_file(file.string()));
  for (int i = 0; i < 3; ++i) job = http.poll_finetune(job, cfg);
  EXPECT_EQ(job.status, JobStatus::succeeded);
  EXPECT_EQ(job.result_model_id, "davinci:ft-1");
  EXPECT_EQ(job.training_file, "file-1");
  EXPECT_EQ(http.poll_finetune(job, cfg).status, JobStatus::succeeded);
  EXPECT_EQ(polls.load(), 3);

  FineTuneJob ghost;
  ghost.job_id = "ft-404";
  try {
    http.poll_finetune(ghost, cfg);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_found);
  }
}

TEST(BatchPredict, OneCompletionPerPost) {
  const PromptTemplate tpl;
  MockBackend mock;
  const auto posts = make_posts(1057);
  const auto r = batch_predict(posts, tpl, BackendConfig{}, mock);
  ASSERT_EQ(r.items.size(), 1057u);
  EXPECT_EQ(r.failures, 0u);
  EXPECT_EQ(r.requests_issued, 1057u);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    EXPECT_EQ(r.items[i].id, posts[i].id);
    EXPECT_EQ(r.items[i].prompt_hash, sha256_hex(build_finetune_record(posts[i], tpl).prompt));
    ASSERT_TRUE(r.items[i].completion);
  }
}

TEST(BatchPredict, SingleWorkerIsSequential) {
  const PromptTemplate tpl;
  MockBackend mock;
  mock.set_latency(std::chrono::milliseconds(1));
  BackendConfig cfg;
  cfg.max_parallel = 1;
  const auto posts = make_posts(20);
  batch_predict(posts, tpl, cfg, mock);
  const auto calls = mock.calls();
  ASSERT_EQ(calls.size(), posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) EXPECT_EQ(calls[i], build_finetune_record(posts[i], tpl).prompt);
  EXPECT_EQ(mock.max_in_flight(), 1);
}

TEST(BatchPredict, InFlightBound) {
  MockBackend mock;
  mock.set_latency(std::chrono::milliseconds(3));
  BackendConfig cfg;
  cfg.max_parallel = 3;
  const auto r = batch_predict(make_posts(40), PromptTemplate{}, cfg, mock);
  EXPECT_EQ(r.failures, 0u);
  EXPECT_LE(mock.max_in_flight(), 3);
  EXPECT_GE(mock.max_in_flight(), 2);
}

TEST(BatchPredict, MiddleFailureIsRecorded) {
  const PromptTemplate tpl;
  const auto posts = make_posts(3);
  MockBackend mock;
  mock.fail_prompt(build_finetune_record(posts[1], tpl).prompt);
  const auto r = batch_predict(posts, tpl, BackendConfig{}, mock);
  EXPECT_EQ(r.failures, 1u);
  EXPECT_TRUE(r.items[0].completion);
  EXPECT_FALSE(r.items[1].completion);
  EXPECT_TRUE(r.items[1].error);
  EXPECT_TRUE(r.items[2].completion);
}

TEST(BatchPredict, CacheMakesRerunsFree) {
  testutil::TempDir dir;
  const PromptTemplate tpl;
  const auto posts = make_posts(25);
  ResponseCache cache(dir / "cache");
  BatchOptions opts;
  opts.cache = &cache;
  MockBackend first;
  const auto a = batch_predict(posts, tpl, BackendConfig{}, first, opts);
  EXPECT_EQ(a.requests_issued, 25u);
  MockBackend second;
  const auto b = batch_predict(posts, tpl, BackendConfig{}, second, opts);
  EXPECT_EQ(b.requests_issued, 0u);
  EXPECT_EQ(second.call_count(), 0u);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    EXPECT_TRUE(b.items[i].cached);
    EXPECT_EQ(a.items[i].completion, b.items[i].completion);
  }
  BackendConfig other;
  other.model_id = "curie";
  MockBackend third;
  EXPECT_EQ(batch_predict(posts, tpl, other, third, opts).requests_issued, 25u);
}

TEST(BatchPredict, NShotPromptsExcludeTheTarget) {
  const PromptTemplate tpl;
  const auto posts = make_posts(10);
  BatchOptions opts;
  opts.shots = 8;
  opts.exemplar_pool = posts;
  for (const auto& p : posts) {
    const auto prompt = prediction_prompt(p, tpl, opts);
    EXPECT_EQ(text::count_occurrences(prompt, tpl.stop_sequence), 8u);
    EXPECT_EQ(text::count_occurrences(prompt, p.text + tpl.separator), 1u);
  }
  opts.exemplar_pool.resize(8);
  MockBackend mock;
  const auto r = batch_predict(posts, tpl, BackendConfig{}, mock, opts);
  EXPECT_EQ(r.failures, 8u);  // pool minus the target leaves only 7 exemplars
  EXPECT_TRUE(r.items[9].completion);
}

TEST(Secrets, KeyNeverReachesManifestOrLogs) {
  const std::string secret = "sk-SECRET-abc123-do-not-log";
  FakeServer server;
  std::string seen_auth;
  std::mutex mu;
  server.server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      seen_auth = req.get_header_value("Authorization");
    }
    res.set_content(completion_body(" This given sentence represents burden"), "application/json");
  });
  testutil::TempDir dir;
  testutil::write(dir / "cfg.ini", "[backend]\nbase_url = " + server.url() + "\nmax_parallel = 2\n");
  testutil::write(dir / "posts.csv", to_csv(make_posts(6)));
  ::setenv(kApiKeyEnv, secret.c_str(), 1);
  HttpBackend http;
  cli::PredictOptions opt;
  opt.dataset = dir / "posts.csv";
  opt.out = dir / "pred.jsonl";
  opt.config = dir / "cfg.ini";
  opt.manifest = dir / "manifest.jsonl";
  opt.request_log = dir / "requests.jsonl";
  opt.backend = &http;
  std::ostringstream out, err;
  const int rc = cli::run_predict(opt, out, err);
  ::unsetenv(kApiKeyEnv);
  ASSERT_EQ(rc, 0) << err.str();
  EXPECT_EQ(seen_auth, "Bearer " + secret);
  for (const auto* name : {"manifest.jsonl", "requests.jsonl", "pred.jsonl"}) {
    const auto content = read_file((dir / name).string());
    EXPECT_FALSE(content.empty()) << name;
    EXPECT_EQ(content.find(secret), std::string::npos) << name;
  }
  EXPECT_EQ(out.str().find(secret), std::string::npos);
  EXPECT_EQ(err.str().find(secret), std::string::npos);
}
