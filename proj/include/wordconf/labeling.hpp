#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wordconf/error.hpp"

namespace wordconf {

enum class EditOp { Match, Substitute, Insert, Delete };

struct AlignedPair {
  EditOp op;
  std::ptrdiff_t ref = -1;  // -1 for Insert
  std::ptrdiff_t hyp = -1;  // -1 for Delete
};

struct Alignment {
  std::vector<AlignedPair> ops;
  std::size_t ref_length = 0;
  std::size_t hyp_length = 0;

  std::size_t count(EditOp op) const {
    return static_cast<std::size_t>(std::count_if(ops.begin(), ops.end(), [op](const AlignedPair& p) { return p.op == op; }));
  }
  std::size_t substitutions() const { return count(EditOp::Substitute); }
  std::size_t insertions() const { return count(EditOp::Insert); }
  std::size_t deletions() const { return count(EditOp::Delete); }
  std::size_t errors() const { return substitutions() + insertions() + deletions(); }
};

/// Unit-cost word alignment. Among optimal alignments the one chosen is
/// found by walking from the start of both sequences and preferring, at
/// equal remaining cost, MATCH/SUBSTITUTE, then DELETE, then INSERT.
inline Alignment align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // cost[i][j]: edit distance between ref[i:] and hyp[j:]
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = n + 1; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      if (i == n) {
        at(i, j) = m - j;
      } else if (j == m) {
        at(i, j) = n - i;
      } else {
        const std::size_t diag = at(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
        at(i, j) = std::min({diag, at(i + 1, j) + 1, at(i, j + 1) + 1});
      }
    }
  }

  Alignment a;
  a.ref_length = n;
  a.hyp_length = m;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    const std::size_t here = at(i, j);
    if (i < n && j < m && here == at(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1)) {
      a.ops.push_back({ref[i] == hyp[j] ? EditOp::Match : EditOp::Substitute, static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(j)});
      ++i;
      ++j;
    } else if (i < n && here == at(i + 1, j) + 1) {
      a.ops.push_back({EditOp::Delete, static_cast<std::ptrdiff_t>(i), -1});
      ++i;
    } else {
      a.ops.push_back({EditOp::Insert, -1, static_cast<std::ptrdiff_t>(j)});
      ++j;
    }
  }
  return a;
}

struct LabeledHypothesis {
  std::vector<std::string> words;
  std::vector<int> labels;  // 1 = correct, one per hypothesis word
  std::size_t deletions = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::vector<double> word_confidences;  // filled by a scorer, empty until then
};

/// MATCH -> 1, SUBSTITUTE/INSERT -> 0; deletions are only counted.
inline LabeledHypothesis label_words(const Alignment& a, std::span<const std::string> hyp_words) {
  if (a.hyp_length != hyp_words.size()) {
    throw Error("label_words: alignment covers " + std::to_string(a.hyp_length) + " hypothesis words, got " +
                std::to_string(hyp_words.size()));
  }
  LabeledHypothesis out;
  out.words.assign(hyp_words.begin(), hyp_words.end());
  out.labels.assign(hyp_words.size(), -1);
  std::ptrdiff_t expected_hyp = 0;
  for (const auto& p : a.ops) {
    if (p.op == EditOp::Delete) {
      ++out.deletions;
      continue;
    }
    if (p.hyp != expected_hyp) throw Error("label_words: alignment does not cover hypothesis words in order");
    ++expected_hyp;
    out.labels[static_cast<std::size_t>(p.hyp)] = p.op == EditOp::Match ? 1 : 0;
    if (p.op == EditOp::Substitute) ++out.substitutions;
    if (p.op == EditOp::Insert) ++out.insertions;
  }
  if (static_cast<std::size_t>(expected_hyp) != hyp_words.size()) {
    throw Error("label_words: alignment leaves hypothesis words uncovered");
  }
  return out;
}

enum class TokenAggregation { Last, Min, Mean, Product, Max };

inline std::string to_string(TokenAggregation a) {
  switch (a) {
    case TokenAggregation::Last: return "last";
    case TokenAggregation::Min: return "min";
    case TokenAggregation::Mean: return "mean";
    case TokenAggregation::Product: return "product";
    case TokenAggregation::Max: return "max";
  }
  return "last";
}

inline TokenAggregation parse_token_aggregation(std::string_view s) {
  if (s == "last") return TokenAggregation::Last;
  if (s == "min") return TokenAggregation::Min;
  if (s == "mean") return TokenAggregation::Mean;
  if (s == "product") return TokenAggregation::Product;
  if (s == "max") return TokenAggregation::Max;
  throw ConfigError("unknown aggregation '" + std::string(s) + "' (expected last, min, mean, product or max)");
}

/// Word confidence from token confidence. Word k spans the tokens after
/// word_final[k-1] up to and including word_final[k].
inline std::vector<double> aggregate_token_confidence(std::span<const double> token_conf, std::span<const std::size_t> word_final,
                                                      TokenAggregation strategy = TokenAggregation::Last) {
  std::vector<double> out;
  out.reserve(word_final.size());
  std::size_t begin = 0;
  for (std::size_t k = 0; k < word_final.size(); ++k) {
    const std::size_t end = word_final[k] + 1;
    if (end > token_conf.size()) throw Error("aggregate_token_confidence: word-final index out of range");
    if (end <= begin) throw Error("aggregate_token_confidence: empty word span (indices must strictly increase)");
    const auto span = token_conf.subspan(begin, end - begin);
    double v = 0.0;
    switch (strategy) {
      case TokenAggregation::Last: v = span.back(); break;
      case TokenAggregation::Min: v = *std::min_element(span.begin(), span.end()); break;
      case TokenAggregation::Max: v = *std::max_element(span.begin(), span.end()); break;
      case TokenAggregation::Mean:
        for (double x : span) v += x;
        v /= static_cast<double>(span.size());
        break;
      case TokenAggregation::Product:
        v = 1.0;
        for (double x : span) v *= x;
        break;
    }
    out.push_back(v);
    begin = end;
  }
  return out;
}

}  // namespace wordconf
