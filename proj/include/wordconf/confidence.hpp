#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordconf/asr.hpp"
#include "wordconf/error.hpp"
#include "wordconf/labeling.hpp"
#include "wordconf/model.hpp"
#include "wordconf/optim.hpp"

namespace wordconf {

/// One confidence-training item: audio, hypothesis tokens and word labels.
struct ConfExample {
  std::string id;
  Tensor frames;
  std::vector<int> tokens;
  std::vector<std::size_t> word_final;
  std::vector<int> labels;  // one per word
};

struct ConfTrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  bool all_tokens = false;  // supervise every token with its word's label
  std::size_t max_steps = 0;  // 0 = no cap
};

namespace detail {

// Per-token targets and loss mask for one example.
inline void conf_targets(const ConfExample& ex, bool all_tokens, std::vector<double>& target, std::vector<double>& mask) {
  const std::size_t n = ex.tokens.size();
  target.assign(n, 0.0);
  mask.assign(n, 0.0);
  std::size_t begin = 0;
  for (std::size_t w = 0; w < ex.word_final.size(); ++w) {
    const std::size_t wf = ex.word_final[w];
    const double label = ex.labels[w];
    if (all_tokens) {
      for (std::size_t i = begin; i <= wf; ++i) {
        target[i] = label;
        mask[i] = 1.0;
      }
    } else {
      target[wf] = label;
      mask[wf] = 1.0;
    }
    begin = wf + 1;
  }
}

inline bool encoder_frozen(const ModelParams& m) {
  bool any = false;
  for (const auto& p : m.params()) {
    if (!is_encoder_parameter(p.name)) continue;
    if (!p.frozen) return false;
    any = true;
  }
  return any;
}

}  // namespace detail

/// Mean BCE over the supervised positions of a batch. `features` may hold a
/// precomputed encoder output per example; empty means encode here.
inline Tensor confidence_loss(const ModelParams& m, std::span<const ConfExample* const> batch, bool all_tokens, ForwardMode mode = {},
                              std::span<const EncoderFeatures* const> features = {}) {
  if (batch.empty()) throw ParameterError("confidence_loss: empty batch");
  if (!features.empty() && features.size() != batch.size()) throw ParameterError("confidence_loss: features and batch differ in size");
  std::vector<Tensor> preds;
  std::vector<double> all_target, all_mask, target, mask;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const ConfExample& ex = *batch[k];
    const EncoderFeatures e = features.empty() ? encode(m, ex.frames, mode) : *features[k];
    preds.push_back(confidence_forward(m, e, ex.tokens, mode));
    detail::conf_targets(ex, all_tokens, target, mask);
    all_target.insert(all_target.end(), target.begin(), target.end());
    all_mask.insert(all_mask.end(), mask.begin(), mask.end());
  }
  const Tensor pred = concat_rows(preds);
  return bce_loss(pred, Tensor(pred.shape(), std::move(all_target)), Tensor(pred.shape(), std::move(all_mask)));
}

/// BCE fine-tuning of a confidence-head model. The loss is averaged over
/// supervised positions of the whole batch (word-final tokens by default).
/// A frozen encoder runs once per example in eval mode and is cached.
inline TrainResult train_confidence(ModelParams model, std::span<const ConfExample> examples, const ConfTrainConfig& hp) {
  if (model.config().head_kind != HeadKind::Confidence) throw ConfigError("train_confidence: model needs a confidence head");
  if (hp.batch_size == 0 || hp.epochs == 0) throw ParameterError("train_confidence: batch_size and epochs must be positive");
  std::vector<const ConfExample*> usable;
  for (const auto& ex : examples) {
    if (ex.labels.size() != ex.word_final.size()) throw ParameterError("train_confidence: example '" + ex.id + "' has mismatched labels");
    if (!ex.word_final.empty()) usable.push_back(&ex);
  }
  if (usable.empty()) throw TrainingError("train_confidence: no example has a labeled word");

  const bool frozen = detail::encoder_frozen(model);
  std::vector<std::optional<EncoderFeatures>> cache(usable.size());
  if (frozen) {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < usable.size(); ++i) cache[i] = encode(model, usable[i]->frames);
  }

  Rng order_rng(hp.seed ^ 0xC0FFEEULL);
  Rng dropout_rng(hp.seed ^ 0xBEEFULL);
  const std::size_t steps_per_epoch = (usable.size() + hp.batch_size - 1) / hp.batch_size;
  std::size_t total = steps_per_epoch * hp.epochs;
  if (hp.max_steps) total = std::min(total, hp.max_steps);
  const LrSchedule schedule(hp.lr, static_cast<std::int64_t>(total));
  AdamState adam;
  std::vector<std::size_t> order(usable.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{std::move(model), {}, {}};
  auto& m = result.model;
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs && static_cast<std::size_t>(step) < total; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() && static_cast<std::size_t>(step) < total; start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      std::vector<const ConfExample*> batch;
      std::vector<const EncoderFeatures*> features;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(usable[order[k]]);
        if (frozen) features.push_back(&*cache[order[k]]);
      }
      const Tensor loss = confidence_loss(m, batch, hp.all_tokens, ForwardMode{true, &dropout_rng}, features);
      if (!std::isfinite(loss.item())) throw TrainingError("train_confidence: non-finite loss at step " + std::to_string(step));
      loss.backward();
      const double lr = schedule.at(step);
      adam_step(m.params(), adam, lr);
      m.zero_grad();
      result.losses.push_back(loss.item());
      result.lrs.push_back(lr);
      ++step;
    }
  }
  return result;
}

/// Word confidences from a confidence-head model for one hypothesis.
inline std::vector<double> confidence_word_scores(const ModelParams& model, const Tensor& frames, std::span<const int> tokens,
                                                  std::span<const std::size_t> word_final,
                                                  TokenAggregation strategy = TokenAggregation::Last) {
  if (word_final.empty()) return {};
  NoGradGuard no_grad;
  const auto e = encode(model, frames);
  const Tensor conf = confidence_forward(model, e, tokens);
  return aggregate_token_confidence(conf.data(), word_final, strategy);
}

}  // namespace wordconf
