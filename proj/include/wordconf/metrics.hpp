#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wordconf/error.hpp"
#include "wordconf/labeling.hpp"

namespace wordconf {

// ---------------------------------------------------------------------------
// Histogram-binning calibration

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  double value = 0.0;  // Laplace-smoothed accuracy, or the global value when empty
};

class BinningCalibrator {
 public:
  const std::vector<CalibrationBin>& bins() const { return bins_; }
  double global_value() const { return global_value_; }
  bool normalizes() const { return normalize_; }

  std::size_t bin_index(double score) const {
    const double s = normalized(score);
    const auto n = bins_.size();
    const auto idx = static_cast<std::size_t>(std::floor(s * static_cast<double>(n)));
    return std::min(idx, n - 1);
  }

  double calibrate(double score) const { return bins_[bin_index(score)].value; }

  std::vector<double> calibrate(std::span<const double> scores) const {
    std::vector<double> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back(calibrate(s));
    return out;
  }

  friend BinningCalibrator fit_calibrator(std::span<const double> scores, std::span<const int> labels, std::size_t n_bins);

 private:
  double normalized(double s) const {
    if (!normalize_) return std::clamp(s, 0.0, 1.0);
    if (hi_ == lo_) return 0.5;
    return std::clamp((s - lo_) / (hi_ - lo_), 0.0, 1.0);
  }

  std::vector<CalibrationBin> bins_;
  double global_value_ = 0.5;
  bool normalize_ = false;
  double lo_ = 0.0;
  double hi_ = 1.0;
};

/// Equal-width bins over [0,1], each mapped to (correct + 1) / (count + 2).
/// Scores outside [0,1] trigger min-max normalization of the whole set.
inline BinningCalibrator fit_calibrator(std::span<const double> scores, std::span<const int> labels, std::size_t n_bins) {
  if (scores.empty()) throw MetricError("fit_calibrator: empty input");
  if (scores.size() != labels.size()) throw MetricError("fit_calibrator: scores and labels differ in length");
  if (n_bins == 0) throw MetricError("fit_calibrator: n_bins must be >= 1");
  BinningCalibrator cal;
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  if (*mn < 0.0 || *mx > 1.0) {
    cal.normalize_ = true;
    cal.lo_ = *mn;
    cal.hi_ = *mx;
  }
  cal.bins_.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    cal.bins_[b].lo = static_cast<double>(b) / static_cast<double>(n_bins);
    cal.bins_[b].hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
  }
  std::size_t n_correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& bin = cal.bins_[cal.bin_index(scores[i])];
    ++bin.count;
    if (labels[i] == 1) {
      ++bin.correct;
      ++n_correct;
    }
  }
  cal.global_value_ = (static_cast<double>(n_correct) + 1.0) / (static_cast<double>(scores.size()) + 2.0);
  for (auto& bin : cal.bins_) {
    bin.value = bin.count == 0 ? cal.global_value_ : (static_cast<double>(bin.correct) + 1.0) / (static_cast<double>(bin.count) + 2.0);
  }
  return cal;
}

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* metric) {
  if (scores.size() != labels.size()) throw MetricError(std::string(metric) + ": scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw MetricError(std::string(metric) + ": labels must be 0 or 1");
}

}  // namespace detail

/// Normalized cross entropy of calibrated confidences against correctness.
inline double nce(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels, "nce");
  const std::size_t n = labels.size();
  const auto n_c = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n == 0 || n_c == 0 || n_c == n) throw MetricError("nce: undefined when every word has the same label");
  const double p_c = static_cast<double>(n_c) / static_cast<double>(n);
  // Both entropies are accumulated word by word in the same order, so a
  // predictor that outputs p_c everywhere scores exactly zero.
  double h_max = 0.0, h_conf = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = scores[i];
    if (!(c > 0.0 && c < 1.0)) throw MetricError("nce: scores must lie strictly inside (0, 1)");
    if (labels[i] == 1) {
      h_max -= std::log(p_c);
      h_conf -= std::log(c);
    } else {
      h_max -= std::log(1.0 - p_c);
      h_conf -= std::log(1.0 - c);
    }
  }
  return (h_max - h_conf) / h_max;
}

/// Mann-Whitney AUC: share of (correct, incorrect) pairs ranked correctly,
/// ties counting one half.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels, "auc_roc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double wins = 0.0;
  std::size_t neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    wins += static_cast<double>(pos) * static_cast<double>(neg_below) + 0.5 * static_cast<double>(pos) * static_cast<double>(neg);
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc_roc: undefined without both correct and incorrect words");
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

enum class PrPolarity { Pos, Neg };

/// Average precision. POS ranks correct words by confidence; NEG ranks
/// errors by 1 - confidence. Tied scores enter the curve as one step.
inline double auc_pr(std::span<const double> scores, std::span<const int> labels, PrPolarity polarity) {
  detail::check_inputs(scores, labels, "auc_pr");
  const int positive = polarity == PrPolarity::Pos ? 1 : 0;
  // Descending rank key: confidence for POS, 1 - confidence (i.e. -confidence) for NEG.
  std::vector<double> key(scores.begin(), scores.end());
  if (polarity == PrPolarity::Neg)
    for (auto& k : key) k = -k;
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), positive));
  if (total_pos == 0) throw MetricError(std::string("auc_pr: no positives under polarity ") + (positive ? "POS" : "NEG"));
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && key[order[j]] == key[order[i]]) {
      if (labels[order[j]] == positive) ++tp;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Pooled word error rate over a corpus of alignments.
inline double wer(std::span<const Alignment> alignments) {
  std::size_t errors = 0, ref_words = 0;
  for (const auto& a : alignments) {
    errors += a.errors();
    ref_words += a.ref_length;
  }
  if (ref_words == 0) throw MetricError("wer: corpus has no reference words");
  return static_cast<double>(errors) / static_cast<double>(ref_words);
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr std::size_t kDefaultBins = 20;

struct ScoredUtterance {
  std::string id;
  std::vector<std::string> reference;
  std::vector<std::string> hypothesis;
  std::vector<double> scores;  // one per hypothesis word
};

struct EvalReport {
  std::string model;
  std::string dataset;
  double nce = 0.0;
  double auc_roc = 0.0;
  double auc_pr_pos = 0.0;
  double auc_pr_neg = 0.0;
  double wer = 0.0;
  std::size_t n_utterances = 0;
  std::size_t n_words = 0;
  std::size_t n_correct = 0;
  std::vector<CalibrationBin> bins;
};

/// Pools every hypothesis word, labels it by alignment, fits the calibrator
/// on the pooled scores and computes all metrics.
inline EvalReport evaluate(std::span<const ScoredUtterance> corpus, std::size_t n_bins = kDefaultBins, std::string model = "",
                           std::string dataset = "") {
  EvalReport r;
  r.model = std::move(model);
  r.dataset = std::move(dataset);
  r.n_utterances = corpus.size();
  std::vector<Alignment> alignments;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& u : corpus) {
    if (u.scores.size() != u.hypothesis.size()) {
      throw MetricError("evaluate: utterance '" + u.id + "' has " + std::to_string(u.scores.size()) + " scores for " +
                        std::to_string(u.hypothesis.size()) + " words");
    }
    alignments.push_back(align(u.reference, u.hypothesis));
    const auto lab = label_words(alignments.back(), u.hypothesis);
    labels.insert(labels.end(), lab.labels.begin(), lab.labels.end());
    scores.insert(scores.end(), u.scores.begin(), u.scores.end());
  }
  r.n_words = labels.size();
  r.n_correct = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));

  auto guarded = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw MetricError(std::string("evaluate [") + name + "]: " + e.what());
    }
  };
  r.wer = guarded("wer", [&] { return wer(alignments); });
  const auto cal = guarded("calibration", [&] { return fit_calibrator(scores, labels, n_bins); });
  r.bins = cal.bins();
  const auto calibrated = cal.calibrate(scores);
  r.nce = guarded("nce", [&] { return nce(calibrated, labels); });
  r.auc_roc = guarded("auc_roc", [&] { return auc_roc(scores, labels); });
  r.auc_pr_pos = guarded("auc_pr_pos", [&] { return auc_pr(scores, labels, PrPolarity::Pos); });
  r.auc_pr_neg = guarded("auc_pr_neg", [&] { return auc_pr(scores, labels, PrPolarity::Neg); });
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"correct", b.correct}, {"value", b.value}});
  return {{"model", r.model},     {"dataset", r.dataset},       {"nce", r.nce},
          {"auc_roc", r.auc_roc}, {"auc_pr_pos", r.auc_pr_pos}, {"auc_pr_neg", r.auc_pr_neg},
          {"wer", r.wer},         {"n_utterances", r.n_utterances}, {"n_words", r.n_words},
          {"n_correct", r.n_correct}, {"calibration_bins", bins}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.nce = j.at("nce").get<double>();
  r.auc_roc = j.at("auc_roc").get<double>();
  r.auc_pr_pos = j.at("auc_pr_pos").get<double>();
  r.auc_pr_neg = j.at("auc_pr_neg").get<double>();
  r.wer = j.at("wer").get<double>();
  r.n_utterances = j.at("n_utterances").get<std::size_t>();
  r.n_words = j.at("n_words").get<std::size_t>();
  r.n_correct = j.at("n_correct").get<std::size_t>();
  for (const auto& b : j.at("calibration_bins")) {
    r.bins.push_back({b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("count").get<std::size_t>(),
                      b.at("correct").get<std::size_t>(), b.at("value").get<double>()});
  }
  return r;
}

/// Metric-by-model text table: one row per metric, one column per report.
inline std::string format_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  std::size_t width = 12;
  for (const auto& r : reports) width = std::max(width, r.model.size() + 2);
  os << std::left << std::setw(14) << "Metric";
  for (const auto& r : reports) os << std::right << std::setw(static_cast<int>(width)) << r.model;
  os << "\n";
  auto row = [&](const char* name, double EvalReport::*field) {
    os << std::left << std::setw(14) << name;
    for (const auto& r : reports) os << std::right << std::setw(static_cast<int>(width)) << std::fixed << std::setprecision(3) << r.*field;
    os << "\n";
  };
  row("NCE", &EvalReport::nce);
  row("AUC-ROC", &EvalReport::auc_roc);
  row("AUC-PR_POS", &EvalReport::auc_pr_pos);
  row("AUC-PR_NEG", &EvalReport::auc_pr_neg);
  row("WER", &EvalReport::wer);
  return os.str();
}

}  // namespace wordconf
