// interprompt: prepare fine-tune data, run predictions, score them and
// render report tables.

#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "interprompt/interprompt.hpp"

namespace ip = interprompt;
namespace cli = interprompt::cli;

namespace {

struct BackendFlags {
  std::string kind = "mock";
  bool mock_gold = false;
  std::string mock_fixture;
};

void add_backend_flags(CLI::App* app, BackendFlags& f) {
  app->add_option("--backend", f.kind, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  app->add_flag("--mock-gold", f.mock_gold, "mock backend answers every prompt with the gold completion");
  app->add_option("--mock-fixture", f.mock_fixture, "JSONL of {prompt, completion} pairs for the mock backend");
}

std::unique_ptr<ip::backend::CompletionBackend> make_backend(const BackendFlags& f, const cli::PredictOptions* predict,
                                                             const std::optional<std::filesystem::path>& config) {
  if (f.kind == "http") return std::make_unique<ip::backend::HttpBackend>();
  auto tpl = config ? ip::PromptTemplate::from_config(ip::Config::load(*config)) : ip::PromptTemplate{};
  std::map<std::string, std::string> fixtures;
  if (!f.mock_fixture.empty()) fixtures = cli::load_mock_fixture(f.mock_fixture);
  if (f.mock_gold && predict) {
    ip::backend::BatchOptions bo;
    bo.shots = predict->shots;
    auto posts = ip::load_posts(predict->dataset);
    if (predict->shots) bo.exemplar_pool = predict->exemplars ? ip::load_posts(*predict->exemplars) : posts;
    for (auto& [k, v] : cli::gold_fixture(posts, tpl, bo)) fixtures[k] = v;
  }
  return std::make_unique<ip::backend::MockBackend>(std::move(fixtures), tpl);
}

template <class T>
void opt_path(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  app->add_option_function<std::string>(name, [&target](const std::string& v) { target = T(v); }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"InterPrompt pipeline: fine-tune data, predictions, evaluation and reports"};
  app.require_subcommand(1);
  int rc = cli::kOk;

  // prepare
  cli::PrepareOptions prep;
  BackendFlags prep_backend;
  std::string cue_check = "warn";
  std::string prep_model;
  auto* prepare = app.add_subcommand("prepare", "build fine-tune JSONL and print the contingency table");
  prepare->add_option("--dataset", prep.dataset, "CSV or JSONL dataset")->required();
  prepare->add_option("--out", prep.out, "output fine-tune JSONL")->required();
  opt_path(prepare, "--config", prep.config, "INI config with [template] and [backend]");
  opt_path(prepare, "--manifest", prep.manifest, "append a run manifest here");
  prepare->add_option("--cue-check", cue_check, "warn or strict")->check(CLI::IsMember({"warn", "strict"}));
  prepare->add_flag("--submit", prep.submit, "submit a fine-tune job for the written file");
  prepare->add_option("--max-polls", prep.max_polls, "job status polls after submission");
  prepare->add_option("--poll-interval", prep.poll_interval_s, "seconds between polls");
  prepare->add_option("--model", prep_model, "base model id");
  add_backend_flags(prepare, prep_backend);

  // predict / nshot
  cli::PredictOptions pred;
  BackendFlags pred_backend;
  std::size_t shots = 0;
  auto setup_predict = [&](CLI::App* sub, bool nshot) {
    sub->add_option("--dataset", pred.dataset, "posts to predict")->required();
    sub->add_option("--out", pred.out, "predictions JSONL")->required();
    opt_path(sub, "--config", pred.config, "INI config");
    opt_path(sub, "--manifest", pred.manifest, "append a run manifest here");
    opt_path(sub, "--cache-dir", pred.cache_dir, "response cache directory");
    opt_path(sub, "--exemplars", pred.exemplars, "exemplar pool for n-shot prompts");
    opt_path(sub, "--request-log", pred.request_log, "append request metadata (JSONL)");
    sub->add_option_function<std::string>("--model", [&](const std::string& v) { pred.model_id = v; }, "model id");
    sub->add_option_function<std::string>("--base-url", [&](const std::string& v) { pred.base_url = v; }, "API base URL");
    sub->add_option_function<std::size_t>("--max-parallel", [&](std::size_t v) { pred.max_parallel = v; },
                                          "concurrent requests");
    auto* s = sub->add_option("--shots", shots, "number of exemplars in the prompt (0, 1 or 8 are the usual settings)");
    if (nshot) s->required();
    add_backend_flags(sub, pred_backend);
  };
  auto* predict = app.add_subcommand("predict", "complete every post with a backend");
  setup_predict(predict, false);
  auto* nshot = app.add_subcommand("nshot", "predict with N exemplars in the prompt (alias of predict --shots N)");
  setup_predict(nshot, true);

  // evaluate
  cli::EvaluateOptions eval;
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against gold labels and cues");
  evaluate->add_option("--predictions", eval.predictions)->required();
  evaluate->add_option("--gold", eval.gold)->required();
  evaluate->add_option("--out", eval.out_prefix, "output prefix; writes .md and .csv")->required();
  opt_path(evaluate, "--config", eval.config, "INI config");

  // significance
  cli::SignificanceOptions sig;
  std::string flavor = "welch";
  auto* significance = app.add_subcommand("significance", "pairwise t-tests between score vectors");
  significance->add_option("scores", sig.score_files, "score files, one value per line (label=path allowed)")
      ->required();
  significance->add_option("--flavor", flavor, "pooled, welch or paired")
      ->check(CLI::IsMember({"pooled", "welch", "paired"}));
  opt_path(significance, "--out", sig.out, "write the Markdown table here");

  // losslab
  cli::LossLabOptions lab;
  auto* losslab = app.add_subcommand("losslab", "toy-model check of the combined loss");
  losslab->add_option("--fixture", lab.fixture, "default or memorize")->check(CLI::IsMember({"default", "memorize"}));
  losslab->add_option("--records", lab.records, "records in the default fixture");
  losslab->add_option("--epochs", lab.epochs);
  losslab->add_option("--lr", lab.learning_rate);
  losslab->add_option("--lambda1", lab.loss.lambda1);
  losslab->add_option("--lambda2", lab.loss.lambda2);
  losslab->add_option("--lambda3", lab.loss.lambda3);
  losslab->add_option("--seed", lab.seed);
  opt_path(losslab, "--trajectory", lab.trajectory_csv, "write the per-epoch loss CSV here");

  // report
  cli::ReportOptions report;
  auto* rep = app.add_subcommand("report", "compare evaluation CSVs from several runs");
  rep->add_option("--eval", report.evaluations, "NAME=report.csv, repeatable")->required();
  opt_path(rep, "--out", report.out, "write the Markdown table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (prepare->parsed()) {
      prep.cue_check = cue_check == "strict" ? ip::CueCheck::strict : ip::CueCheck::warn;
      if (!prep_model.empty()) prep.model_id = prep_model;
      std::unique_ptr<ip::backend::CompletionBackend> backend;
      if (prep.submit) {
        backend = make_backend(prep_backend, nullptr, prep.config);
        prep.backend = backend.get();
      }
      rc = cli::run_prepare(prep, std::cout, std::cerr);
    } else if (predict->parsed() || nshot->parsed()) {
      auto* sub = predict->parsed() ? predict : nshot;
      if (sub->count("--shots") > 0) pred.shots = shots;
      auto backend = make_backend(pred_backend, &pred, pred.config);
      pred.backend = backend.get();
      rc = cli::run_predict(pred, std::cout, std::cerr);
    } else if (evaluate->parsed()) {
      rc = cli::run_evaluate(eval, std::cout, std::cerr);
    } else if (significance->parsed()) {
      sig.flavor = ip::significance::flavor_from_string(flavor);
      rc = cli::run_significance(sig, std::cout, std::cerr);
    } else if (losslab->parsed()) {
      rc = cli::run_losslab(lab, std::cout, std::cerr);
    } else if (rep->parsed()) {
      rc = cli::run_report(report, std::cout, std::cerr);
    }
  } catch (const ip::backend::BackendError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kBackendError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kDataError;
  }
  return rc;
}
