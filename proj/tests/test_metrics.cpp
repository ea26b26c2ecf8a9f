#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "wordconf/metrics.hpp"
#include "wordconf/rng.hpp"
#include "oracles.hpp"

using namespace wordconf;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

using testing::brute_force_ap;
using testing::nce_oracle;
using testing::pairwise_auc;
using testing::random_instance;

TEST_CASE("calibrator examples", "[metrics][calibration]") {
  const std::vector<double> s{0.1, 0.9, 0.5, 0.2};
  const std::vector<int> l{0, 1, 1, 1};
  const auto one = fit_calibrator(s, l, 1);
  for (double c : one.calibrate(s)) CHECK(c == (3.0 + 1.0) / (4.0 + 2.0));

  const std::vector<double> s2{0.1, 0.9};
  const std::vector<int> l2{0, 1};
  const auto two = fit_calibrator(s2, l2, 2);
  const auto c2 = two.calibrate(s2);
  CHECK(c2[0] == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(c2[1] == Approx(2.0 / 3.0).epsilon(1e-15));

  CHECK(two.bin_index(1.0) == 1);
  CHECK(two.bin_index(0.0) == 0);
  CHECK_THROWS_AS(fit_calibrator(std::vector<double>{}, std::vector<int>{}, 4), MetricError);
}

TEST_CASE("calibrator empty bins fall back to the global value", "[metrics][calibration]") {
  const std::vector<double> s{0.05, 0.06, 0.95};
  const std::vector<int> l{0, 1, 1};
  const auto cal = fit_calibrator(s, l, 10);
  CHECK(cal.global_value() == Approx(3.0 / 5.0).epsilon(1e-15));
  CHECK(cal.calibrate(0.5) == cal.global_value());
  CHECK(cal.bins()[0].count == 2);
  CHECK(cal.bins()[0].value == Approx(2.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("calibrator is constant within a bin and values lie in (0,1)", "[metrics][calibration][property]") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng);
    const auto cal = fit_calibrator(in.scores, in.labels, 5);
    for (const auto& b : cal.bins()) {
      CHECK(b.value > 0.0);
      CHECK(b.value < 1.0);
    }
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
      for (std::size_t j = 0; j < in.scores.size(); ++j) {
        if (cal.bin_index(in.scores[i]) == cal.bin_index(in.scores[j])) CHECK(cal.calibrate(in.scores[i]) == cal.calibrate(in.scores[j]));
      }
    }
  }
}

TEST_CASE("calibrator normalizes out-of-range scores", "[metrics][calibration]") {
  const std::vector<double> s{-2.0, 0.0, 2.0};
  const std::vector<int> l{0, 1, 1};
  const auto cal = fit_calibrator(s, l, 2);
  CHECK(cal.normalizes());
  CHECK(cal.bin_index(-2.0) == 0);
  CHECK(cal.bin_index(2.0) == 1);
  CHECK(cal.bin_index(0.0) == 1);
}

TEST_CASE("nce examples", "[metrics][nce]") {
  const std::vector<double> perfect{1.0 - 1e-7, 1e-7};
  const std::vector<int> l{1, 0};
  CHECK(nce(perfect, l) == Approx(1.0).margin(1e-4));

  const std::vector<int> labels{1, 1, 0, 1};
  const std::vector<double> constant(4, 0.75);
  CHECK(nce(constant, labels) == 0.0);

  const std::vector<double> scores{0.9, 0.8, 0.3, 0.6};
  const double oracle = nce_oracle(scores, labels);
  CHECK(oracle == Approx(0.4682865520136136).epsilon(1e-12));
  CHECK(nce(scores, labels) == Approx(oracle).epsilon(1e-14));
}

TEST_CASE("nce errors", "[metrics][nce]") {
  CHECK_THROWS_AS(nce(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 1}), MetricError);
  CHECK_THROWS_AS(nce(std::vector<double>{1.0, 0.5}, std::vector<int>{1, 0}), MetricError);
}

TEST_CASE("nce of the calibrated constant predictor is zero", "[metrics][nce][property]") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng);
    const double n_c = static_cast<double>(std::count(in.labels.begin(), in.labels.end(), 1));
    const std::vector<double> pc(in.labels.size(), n_c / static_cast<double>(in.labels.size()));
    CHECK(std::abs(nce(pc, in.labels)) <= 1e-12);
  }
}

TEST_CASE("auc_roc examples", "[metrics][auc]") {
  CHECK(auc_roc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(auc_roc(std::vector<double>(5, 0.3), std::vector<int>{1, 0, 1, 0, 1}) == 0.5);
  CHECK(auc_roc(std::vector<double>{0.9, 0.8, 0.7, 0.2}, std::vector<int>{1, 0, 1, 0}) == 0.75);
  CHECK_THROWS_WITH(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ContainsSubstring("undefined"));
}

TEST_CASE("auc_roc matches the pairwise oracle exactly", "[metrics][auc][property]") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng);
    CHECK(auc_roc(in.scores, in.labels) == pairwise_auc(in.scores, in.labels));
  }
}

TEST_CASE("auc_roc is invariant to increasing transforms and complements", "[metrics][auc][property]") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng);
    for (auto& s : in.scores) s = rng.uniform();  // no ties
    std::vector<double> warped;
    for (double s : in.scores) warped.push_back(std::exp(3.0 * s) - 7.0);
    CHECK(auc_roc(warped, in.labels) == Approx(auc_roc(in.scores, in.labels)).epsilon(1e-15));
    std::vector<int> flipped;
    for (int l : in.labels) flipped.push_back(1 - l);
    CHECK(auc_roc(in.scores, in.labels) + auc_roc(in.scores, flipped) == Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("auc_pr examples", "[metrics][auc_pr]") {
  const std::vector<double> s{0.9, 0.1};
  const std::vector<int> l{1, 0};
  CHECK(auc_pr(s, l, PrPolarity::Pos) == 1.0);
  CHECK(auc_pr(s, l, PrPolarity::Neg) == 1.0);
  CHECK(auc_pr(std::vector<double>{0.9, 0.8, 0.2}, std::vector<int>{1, 0, 1}, PrPolarity::Pos) == Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(auc_pr(std::vector<double>{0.9, 0.7, 0.3, 0.2}, std::vector<int>{1, 1, 0, 0}, PrPolarity::Neg) == 1.0);
  CHECK_THROWS_AS(auc_pr(s, std::vector<int>{1, 1}, PrPolarity::Neg), MetricError);
}

TEST_CASE("auc_pr matches a brute-force curve", "[metrics][auc_pr][property]") {
  Rng rng(321);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng);
    std::vector<int> neg;
    std::vector<double> inv;
    for (std::size_t i = 0; i < in.labels.size(); ++i) {
      neg.push_back(1 - in.labels[i]);
      inv.push_back(1.0 - in.scores[i]);
    }
    CHECK(std::abs(auc_pr(in.scores, in.labels, PrPolarity::Pos) - brute_force_ap(in.scores, in.labels)) <= 1e-12);
    CHECK(std::abs(auc_pr(in.scores, in.labels, PrPolarity::Neg) - brute_force_ap(inv, neg)) <= 1e-12);
  }
}

TEST_CASE("wer examples", "[metrics][wer]") {
  const std::vector<std::string> ref{"the", "cat", "sat"};
  const std::vector<std::string> bat{"the", "bat", "sat"};
  const Alignment same[] = {align(ref, ref)};
  CHECK(wer(same) == 0.0);
  const Alignment one[] = {align(ref, bat)};
  CHECK(wer(one) == Approx(1.0 / 3.0).epsilon(1e-15));
  const Alignment del[] = {align(ref, {})};
  CHECK(wer(del) == 1.0);
  const Alignment none[] = {align({}, {})};
  CHECK_THROWS_AS(wer(none), MetricError);
}

namespace {

std::vector<ScoredUtterance> toy_corpus() {
  return {
      {"u1", {"the", "cat", "sat"}, {"the", "bat", "sat"}, {0.9, 0.3, 0.8}},
      {"u2", {"a", "dog", "ran"}, {"a", "dog", "dog", "ran"}, {0.7, 0.6, 0.4, 0.95}},
  };
}

}  // namespace

TEST_CASE("evaluate matches hand-derived values on a toy corpus", "[metrics][evaluate]") {
  const auto corpus = toy_corpus();
  const auto r = evaluate(corpus, 2, "toy", "fixture");
  // labels pooled: [1 0 1 | 1 1 0 1], scores [.9 .3 .8 .7 .6 .4 .95]
  const std::vector<double> s{0.9, 0.3, 0.8, 0.7, 0.6, 0.4, 0.95};
  const std::vector<int> l{1, 0, 1, 1, 1, 0, 1};
  CHECK(r.n_words == 7);
  CHECK(r.n_correct == 5);
  CHECK(r.wer == Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(r.auc_roc == pairwise_auc(s, l));
  CHECK(r.auc_roc == 1.0);
  CHECK(r.auc_pr_pos == Approx(brute_force_ap(s, l)).margin(1e-12));
  // bins [0,.5): 2 words, 0 correct -> 1/4; [.5,1]: 5 words, 5 correct -> 6/7
  std::vector<double> cal;
  for (double x : s) cal.push_back(x < 0.5 ? 0.25 : 6.0 / 7.0);
  CHECK(r.nce == Approx(nce_oracle(cal, l)).epsilon(1e-13));
}

TEST_CASE("evaluate is invariant to duplication and order", "[metrics][evaluate][property]") {
  const auto corpus = toy_corpus();
  const auto base = evaluate(corpus, 20);
  auto doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  const auto d = evaluate(doubled, 20);
  const std::vector<ScoredUtterance> reversed{corpus[1], corpus[0]};
  const auto p = evaluate(reversed, 20);
  for (const auto* other : {&d, &p}) {
    CHECK(other->auc_roc == Approx(base.auc_roc).epsilon(1e-14));
    CHECK(other->auc_pr_pos == Approx(base.auc_pr_pos).epsilon(1e-14));
    CHECK(other->auc_pr_neg == Approx(base.auc_pr_neg).epsilon(1e-14));
    CHECK(other->wer == Approx(base.wer).epsilon(1e-14));
  }
  CHECK(p.nce == Approx(base.nce).epsilon(1e-14));
}

TEST_CASE("evaluate names the failing metric", "[metrics][evaluate]") {
  const std::vector<ScoredUtterance> all_right{{"u", {"a", "b"}, {"a", "b"}, {0.9, 0.8}}};
  CHECK_THROWS_WITH(evaluate(all_right), ContainsSubstring("[nce]"));
  const std::vector<ScoredUtterance> bad{{"u", {"a"}, {"a"}, {}}};
  CHECK_THROWS_AS(evaluate(bad), MetricError);
}

TEST_CASE("report json round trip and table", "[metrics][report]") {
  const auto r = evaluate(toy_corpus(), 4, "softmax_min", "eval");
  const auto back = eval_report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  const EvalReport reports[] = {r};
  const auto table = format_table(reports);
  CHECK_THAT(table, ContainsSubstring("AUC-PR_NEG"));
  CHECK_THAT(table, ContainsSubstring("softmax_min"));
}
