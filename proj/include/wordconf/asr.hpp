#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wordconf/datagen.hpp"
#include "wordconf/error.hpp"
#include "wordconf/model.hpp"
#include "wordconf/optim.hpp"
#include "wordconf/tokenizer.hpp"

namespace wordconf {

/// A decoded transcript. Every word ends at a word-final marker: the SPACE or
/// EOS token right after it (or its last letter when decoding was truncated).
struct Hypothesis {
  std::vector<int> token_ids;
  std::vector<double> token_probs;
  std::vector<std::size_t> word_final;
  std::vector<std::string> words;
  bool truncated = false;

  std::string text() const { return join_words(words); }
};

/// Builds a Hypothesis from raw decoder output. SPACE tokens that would
/// delimit an empty word (leading, doubled, or right before EOS) are dropped.
inline Hypothesis make_hypothesis(const DecodeOutput& raw) {
  Hypothesis h;
  h.truncated = raw.truncated;
  auto last_is = [&](int id) { return !h.token_ids.empty() && h.token_ids.back() == id; };
  for (std::size_t i = 0; i < raw.tokens.size(); ++i) {
    const int id = raw.tokens[i];
    if (id == Tokenizer::kSpace && (h.token_ids.empty() || last_is(Tokenizer::kSpace))) continue;
    if (id == Tokenizer::kEos && last_is(Tokenizer::kSpace)) {
      h.token_ids.pop_back();
      h.token_probs.pop_back();
    }
    h.token_ids.push_back(id);
    h.token_probs.push_back(raw.probs[i]);
    if (id == Tokenizer::kEos) break;
  }
  if (h.truncated && last_is(Tokenizer::kSpace)) {
    h.token_ids.pop_back();
    h.token_probs.pop_back();
  }

  std::string word;
  for (std::size_t i = 0; i < h.token_ids.size(); ++i) {
    const int id = h.token_ids[i];
    if (id == Tokenizer::kSpace || id == Tokenizer::kEos) {
      if (!word.empty()) {
        h.word_final.push_back(i);
        h.words.push_back(std::move(word));
        word.clear();
      }
    } else {
      word.push_back(Tokenizer::char_of(id));
    }
  }
  if (!word.empty()) {
    h.word_final.push_back(h.token_ids.size() - 1);
    h.words.push_back(std::move(word));
  }
  return h;
}

inline std::size_t default_decode_budget(const ModelConfig& c, std::size_t frames) {
  return std::min(c.max_seq_len - 1, frames + 8);
}

/// Greedy transcription with the LM head.
inline Hypothesis transcribe(const ModelParams& model, const Tensor& frames, std::size_t max_len = 0) {
  if (model.config().head_kind != HeadKind::Lm) throw ConfigError("transcribe: model must have an LM head");
  NoGradGuard no_grad;
  const auto e = encode(model, frames);
  if (max_len == 0) max_len = default_decode_budget(model.config(), frames.dim(0));
  return make_hypothesis(greedy_decode(model, e, max_len));
}

enum class BaselineAggregation { Min, Mean, Sum, Product, Max };

inline std::string to_string(BaselineAggregation a) {
  switch (a) {
    case BaselineAggregation::Min: return "min";
    case BaselineAggregation::Mean: return "mean";
    case BaselineAggregation::Sum: return "sum";
    case BaselineAggregation::Product: return "product";
    case BaselineAggregation::Max: return "max";
  }
  return "min";
}

inline BaselineAggregation parse_baseline_aggregation(std::string_view s) {
  if (s == "min") return BaselineAggregation::Min;
  if (s == "mean") return BaselineAggregation::Mean;
  if (s == "sum") return BaselineAggregation::Sum;
  if (s == "product") return BaselineAggregation::Product;
  if (s == "max") return BaselineAggregation::Max;
  throw ConfigError("unknown baseline strategy '" + std::string(s) + "' (expected min, mean, sum, product or max)");
}

/// Word scores from the ASR's own token probabilities. Marker tokens
/// (SPACE/EOS) are excluded; SUM is left unclamped.
inline std::vector<double> softmax_word_confidence(std::span<const double> token_probs, std::span<const int> token_ids,
                                                   std::span<const std::size_t> word_final,
                                                   BaselineAggregation strategy = BaselineAggregation::Min) {
  if (word_final.empty()) throw ParameterError("softmax_word_confidence: hypothesis has no words");
  if (token_probs.size() != token_ids.size()) throw ParameterError("softmax_word_confidence: probabilities and tokens differ in length");
  std::vector<double> out;
  std::size_t begin = 0;
  for (std::size_t wf : word_final) {
    if (wf >= token_ids.size() || wf < begin) throw ParameterError("softmax_word_confidence: invalid word-final index");
    std::size_t end = wf + 1;
    if (token_ids[wf] == Tokenizer::kSpace || token_ids[wf] == Tokenizer::kEos) --end;
    if (end <= begin) throw ParameterError("softmax_word_confidence: word has no letter tokens");
    double v = 0.0;
    switch (strategy) {
      case BaselineAggregation::Min: v = *std::min_element(token_probs.begin() + static_cast<std::ptrdiff_t>(begin), token_probs.begin() + static_cast<std::ptrdiff_t>(end)); break;
      case BaselineAggregation::Max: v = *std::max_element(token_probs.begin() + static_cast<std::ptrdiff_t>(begin), token_probs.begin() + static_cast<std::ptrdiff_t>(end)); break;
      case BaselineAggregation::Sum:
      case BaselineAggregation::Mean:
        for (std::size_t i = begin; i < end; ++i) v += token_probs[i];
        if (strategy == BaselineAggregation::Mean) v /= static_cast<double>(end - begin);
        break;
      case BaselineAggregation::Product:
        v = 1.0;
        for (std::size_t i = begin; i < end; ++i) v *= token_probs[i];
        break;
    }
    out.push_back(v);
    begin = wf + 1;
  }
  return out;
}

inline std::vector<double> softmax_word_confidence(const Hypothesis& h, BaselineAggregation strategy = BaselineAggregation::Min) {
  return softmax_word_confidence(h.token_probs, h.token_ids, h.word_final, strategy);
}

// ---------------------------------------------------------------------------
// ASR training

struct AsrTrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
};

struct TrainResult {
  ModelParams model;
  std::vector<double> losses;  // one per optimizer step
  std::vector<double> lrs;
};

/// Teacher-forced cross-entropy training of an LM-head model from scratch.
inline TrainResult train_asr(std::span<const Utterance* const> corpus, const ModelConfig& config, const AsrTrainConfig& hp) {
  if (corpus.empty()) throw TrainingError("train_asr: empty corpus");
  if (hp.batch_size == 0 || hp.epochs == 0) throw ParameterError("train_asr: batch_size and epochs must be positive");
  ModelConfig cfg = config;
  cfg.head_kind = HeadKind::Lm;
  cfg.decoder_mask = DecoderMask::Causal;
  TrainResult result{ModelParams::initialize(cfg, hp.seed), {}, {}};
  auto& model = result.model;

  Rng order_rng(hp.seed ^ 0xA5A5A5A5ULL);
  Rng dropout_rng(hp.seed ^ 0x5A5A5A5AULL);
  const std::size_t steps_per_epoch = (corpus.size() + hp.batch_size - 1) / hp.batch_size;
  const LrSchedule schedule(hp.lr, static_cast<std::int64_t>(steps_per_epoch * hp.epochs));
  AdamState adam;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Utterance& u = *corpus[order[k]];
        auto tokens = Tokenizer::tokenize(u.text);
        std::vector<int> input{Tokenizer::kBos}, target = tokens;
        input.insert(input.end(), tokens.begin(), tokens.end());
        target.push_back(Tokenizer::kEos);
        ForwardMode mode{true, &dropout_rng};
        const auto e = encode(model, u.frames, mode);
        const Tensor loss = cross_entropy(decode_logits(model, e, input, mode), target);
        scale(loss, weight).backward();
        batch_loss += weight * loss.item();
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("train_asr: non-finite loss at step " + std::to_string(step));
      const double lr = schedule.at(step);
      adam_step(model.params(), adam, lr);
      model.zero_grad();
      result.losses.push_back(batch_loss);
      result.lrs.push_back(lr);
      ++step;
    }
  }
  return result;
}

}  // namespace wordconf
