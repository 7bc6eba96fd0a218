// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include "interprompt/interprompt.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace interprompt;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double time_limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0 && secs >= time_limit_s) {
    o.ok = false;
    o.detail += " (time limit " + std::to_string(time_limit_s) + " s exceeded)";
  }
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.3f s", secs);
  std::cout << (o.ok ? "PASS" : "FAIL") << "  " << name << "  [" << timing << "]  " << o.detail << "\n";
  if (!o.ok) ++failures;
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// A dataset with the given contingency counts, ids d0000...
std::vector<Post> dataset_with_counts(std::size_t n00, std::size_t n01, std::size_t n10, std::size_t n11) {
  std::vector<Post> out;
  auto add = [&](std::size_t n, bool tbe, bool pbu) {
    for (std::size_t i = 0; i < n; ++i) {
      Post p;
      p.id = "d" + std::to_string(out.size());
      p.text = "post " + std::to_string(out.size());
      if (tbe) p.text += " I feel alone";
      if (pbu) p.text += " I am a burden";
      p.tbe_label = tbe;
      p.pbu_label = pbu;
      if (tbe) p.tbe_cue = "feel alone";
      if (pbu) p.pbu_cue = "a burden";
      out.push_back(std::move(p));
    }
  };
  add(n00, false, false);
  add(n01, false, true);
  add(n10, true, false);
  add(n11, true, true);
  return out;
}

}  // namespace

int main() {
  testutil::TempDir dir;
  const PromptTemplate tpl;

  criterion("Contingency delta ratios via prepare", 1.0, [&]() -> Outcome {
    testutil::write(dir / "irf_counts.csv", to_csv(dataset_with_counts(1123, 472, 1252, 675)));
    cli::PrepareOptions o;
    o.dataset = dir / "irf_counts.csv";
    o.out = dir / "irf_counts.jsonl";
    std::ostringstream out, err;
    if (cli::run_prepare(o, out, err) != 0) return {false, "prepare failed: " + err.str()};
    std::smatch m;
    const std::string s = out.str();
    if (!std::regex_search(s, m, std::regex(R"(%Delta \| (\d+)/(\d+) = [0-9.]+ \| (\d+)/(\d+) = [0-9.]+ \|)")))
      return {false, "no %Delta row in: " + s};
    // The printed decimals are rounded (129/1123 shows as 0.1149), so compare the exact fractions.
    const double r0 = std::stod(m[1]) / std::stod(m[2]), r1 = std::stod(m[3]) / std::stod(m[4]);
    const bool ok = m[1] == "129" && m[2] == "1123" && m[3] == "203" && m[4] == "472" &&
                    std::fabs(r0 - 0.1148) <= 1e-4 && std::fabs(r1 - 0.4301) <= 1e-4 &&
                    s.find("records: 3522") != std::string::npos;
    return {ok, "ratios " + fmt(r0, 6) + ", " + fmt(r1, 6) + " (expected 0.1148, 0.4301 +-1e-4)"};
  });

  criterion("Round trip parse(build) over 4 label pairs x 1000 cues", 5.0, [&]() -> Outcome {
    std::mt19937 rng(42);
    const std::vector<std::string> words = {"i",     "feel", "alone",  "so",  "much", "of",    "a",   "burden",
                                            "Nobody", "cares", "(really)", "it's", "50%", "café", "x/y", "ok,"};
    auto cue = [&] {
      std::string s;
      for (std::size_t n = 1 + rng() % 7; n > 0; --n) s += (s.empty() ? "" : " ") + words[rng() % words.size()];
      return s;
    };
    std::size_t failed = 0, total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto pair = PromptTemplate::pair_at(i);
      for (int k = 0; k < 1000; ++k, ++total) {
        Post p{"r", "text", pair.tbe, pair.pbu, pair.tbe ? cue() : "", pair.pbu ? cue() : ""};
        try {
          const auto parsed = parse_completion(build_finetune_record(p, tpl).completion, tpl);
          const bool ok = parsed.labels() == pair && parsed.tbe_cue.value_or("") == p.tbe_cue &&
                          parsed.pbu_cue.value_or("") == p.pbu_cue && parsed.exact;
          failed += ok ? 0 : 1;
        } catch (const UnparseableCompletion&) {
          ++failed;
        }
      }
    }
    return {failed == 0, std::to_string(total) + " cases, " + std::to_string(failed) + " failures"};
  });

  criterion("Closed loop on the 60-post fixture", 5.0, [&]() -> Outcome {
    const auto fixture = testutil::data("irf_fixture.csv");
    const auto posts = load_posts(fixture);
    backend::MockBackend mock(cli::gold_fixture(posts, tpl, {}), tpl);
    cli::PredictOptions p;
    p.dataset = fixture;
    p.out = dir / "closed_loop.jsonl";
    p.backend = &mock;
    std::ostringstream out, err;
    if (cli::run_predict(p, out, err) != 0) return {false, "predict failed: " + err.str()};
    cli::EvaluateOptions e{p.out, fixture, dir / "closed_loop", std::nullopt};
    if (cli::run_evaluate(e, out, err) != 0) return {false, "evaluate failed: " + err.str()};
    const auto v = read_report_csv(dir / "closed_loop.csv");
    std::size_t ones = 0, checked = 0;
    for (const char* f : {"TBe", "PBu"}) {
      for (const char* m : {"precision", "recall", "f1", "accuracy"})
        ones += v.at(std::string("classification.") + f + "." + m) == "1.000000", ++checked;
      for (const char* m : {"rouge1", "rougeL", "bleu1", "exact_match"})
        ones += v.at(std::string("generation.") + f + "." + m) == "1.000000", ++checked;
    }
    return {ones == checked && v.at("parse.all.exact") == "60",
            std::to_string(ones) + "/" + std::to_string(checked) + " metrics equal 1.0, exact parses " +
                v.at("parse.all.exact") + "/60"};
  });

  criterion("Metric oracle equivalence on 100 random pairs", 10.0, []() -> Outcome {
    std::mt19937 rng(2023);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto c = oracle::random_tokens(rng, 0, 12), r = oracle::random_tokens(rng, 1, 12);
      const auto cs = oracle::join(c), rs = oracle::join(r);
      worst = std::max({worst, std::fabs(metrics::rouge1(cs, rs) - oracle::rouge1(c, r)),
                        std::fabs(metrics::rougeL(cs, rs) - oracle::rougeL(c, r)),
                        std::fabs(metrics::bleu1(cs, rs) - oracle::bleu1(c, r))});
    }
    return {worst <= 1e-9, "max deviation " + std::to_string(worst)};
  });

  criterion("BLEU brevity case", 0, []() -> Outcome {
    const double b = metrics::bleu1("the", "the cat");
    return {std::fabs(b - 0.3679) <= 1e-4, "bleu1 = " + fmt(b, 6) + " (expected 0.3679 +-1e-4)"};
  });

  criterion("t-test correctness", 0, []() -> Outcome {
    using namespace significance;
    const auto r = t_test({"a", {1, 2, 3, 4, 5}}, {"b", {2, 3, 4, 5, 6}}, Flavor::two_sample_pooled);
    const auto same = t_test({"a", {1, 2, 3, 4, 5}}, {"b", {1, 2, 3, 4, 5}}, Flavor::two_sample_pooled);
    const double crit = critical_value(8, 0.05);
    const bool ok = std::fabs(r.t_statistic + 1.0) <= 1e-6 && std::fabs(r.p_value - 0.3466) <= 1e-3 &&
                    r.degrees_of_freedom == 8.0 && same.t_statistic == 0.0 && same.p_value == 1.0 &&
                    std::fabs(crit - 2.306) <= 1e-3 && two_sided_p(crit, 8) <= 0.05 + 1e-12;
    return {ok, "t = " + fmt(r.t_statistic) + ", p = " + fmt(r.p_value, 4) + ", df = " + fmt(r.degrees_of_freedom, 0) +
                    "; identical t = " + fmt(same.t_statistic, 0) + ", p = " + fmt(same.p_value, 0) +
                    "; critical(df=8) = " + fmt(crit, 4)};
  });

  criterion("Gradient check over 20 random toy models", 30.0, []() -> Outcome {
    const auto data = losslab::tokenize_posts(losslab::synthetic_posts(50, 7));
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> w(0.0, 2.0);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      losslab::ToyModel model(data.vocab, 0.5, seed, 0.5);
      const std::size_t n = 1 + seed % 5;
      std::vector<losslab::TokenizedRecord> batch(data.records.begin() + seed, data.records.begin() + seed + n);
      worst = std::max(worst, losslab::gradient_check(model, batch, {w(rng), w(rng), w(rng)}).max_relative_error);
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", worst);
    return {worst < 1e-4, std::string("max relative error ") + buf + " (limit 1e-4)"};
  });

  criterion("Toy training: 50 records, 200 epochs", 0, []() -> Outcome {
    const auto data = losslab::tokenize_posts(losslab::synthetic_posts(50, 7));
    losslab::ToyModel model(data.vocab, 0.5, 7);
    const auto run = losslab::train_toy(model, data.records, 200, {});
    std::size_t rises = 0;
    for (std::size_t i = 1; i < run.trajectory.size(); ++i) rises += run.trajectory[i] > run.trajectory[i - 1] + 1e-9;
    const double acc = losslab::label_accuracy(model, data.records);
    return {run.trajectory.size() == 200 && rises == 0 && acc >= 0.9,
            "loss " + fmt(run.trajectory.front()) + " -> " + fmt(run.trajectory.back()) + ", " +
                std::to_string(rises) + " increases, label accuracy " + fmt(acc, 4)};
  });

  criterion("N-shot structure (0, 1, 8 exemplar blocks)", 0, [&]() -> Outcome {
    const auto posts = load_posts(testutil::data("irf_fixture.csv"));
    const Post& target = posts.back();
    std::string counts;
    bool ok = true;
    for (std::size_t n : kCanonicalShots) {
      const std::vector<Post> ex(posts.begin(), posts.begin() + static_cast<std::ptrdiff_t>(n));
      const auto p = build_nshot_prompt(target, ex, tpl);
      const auto blocks = text::count_occurrences(p.text, tpl.stop_sequence);
      ok = ok && blocks == n && text::count_occurrences(p.text, target.text + tpl.separator) == 1;
      counts += (counts.empty() ? "" : ", ") + std::to_string(blocks);
    }
    return {ok, "exemplar blocks: " + counts};
  });

  std::cout << "NOTE  Accuracy, ROUGE and significance figures for hosted fine-tuned models are not reproducible "
               "here: they need a proprietary fine-tuning service and the original predictions. The checks above "
               "cover the metric, parsing and loss machinery instead.\n";
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}
