#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "wordconf/asr.hpp"
#include "wordconf/confidence.hpp"
#include "wordconf/datagen.hpp"
#include "wordconf/metrics.hpp"
#include "wordconf/records.hpp"

namespace wordconf {

using CorpusIndex = std::map<std::string, const Utterance*, std::less<>>;

inline CorpusIndex index_corpus(const std::vector<Utterance>& corpus) {
  CorpusIndex idx;
  for (const auto& u : corpus) idx.emplace(u.id, &u);
  return idx;
}

inline const Utterance& find_utterance(const CorpusIndex& idx, const std::string& id) {
  auto it = idx.find(id);
  if (it == idx.end()) throw ParseError("utterance '" + id + "' is not in the manifest");
  return *it->second;
}

inline std::vector<DecodedRecord> decode_split(const ModelParams& asr, const std::vector<Utterance>& corpus, Split split) {
  std::vector<DecodedRecord> out;
  for (const auto* u : select_split(corpus, split)) out.push_back({u->id, u->text, transcribe(asr, u->frames)});
  return out;
}

inline std::vector<LabeledRecord> label_records(std::span<const DecodedRecord> decoded) {
  std::vector<LabeledRecord> out;
  out.reserve(decoded.size());
  for (const auto& d : decoded) out.push_back(label_record(d));
  return out;
}

inline std::vector<ConfExample> conf_examples(std::span<const LabeledRecord> records, const CorpusIndex& idx) {
  std::vector<ConfExample> out;
  for (const auto& r : records) {
    const auto& h = r.decoded.hypothesis;
    if (h.words.empty()) continue;
    out.push_back({r.decoded.id, find_utterance(idx, r.decoded.id).frames, h.token_ids, h.word_final, r.labeled.labels});
  }
  return out;
}

inline ScoredUtterance scored_shell(const LabeledRecord& r) {
  return {r.decoded.id, split_words(r.decoded.reference), r.decoded.hypothesis.words, {}};
}

inline std::vector<ScoredUtterance> softmax_scored(std::span<const LabeledRecord> records, BaselineAggregation strategy) {
  std::vector<ScoredUtterance> out;
  for (const auto& r : records) {
    auto s = scored_shell(r);
    if (!s.hypothesis.empty()) s.scores = softmax_word_confidence(r.decoded.hypothesis, strategy);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ScoredUtterance> confidence_scored(const ModelParams& conf, std::span<const LabeledRecord> records, const CorpusIndex& idx,
                                                      TokenAggregation strategy) {
  std::vector<ScoredUtterance> out;
  for (const auto& r : records) {
    auto s = scored_shell(r);
    const auto& h = r.decoded.hypothesis;
    s.scores = confidence_word_scores(conf, find_utterance(idx, r.decoded.id).frames, h.token_ids, h.word_final, strategy);
    out.push_back(std::move(s));
  }
  return out;
}

/// Copies scores back into labeled records (word_confidences field).
inline std::vector<LabeledRecord> attach_scores(std::vector<LabeledRecord> records, std::span<const ScoredUtterance> scored) {
  for (std::size_t i = 0; i < records.size(); ++i) records[i].labeled.word_confidences = scored[i].scores;
  return records;
}

struct AblationResult {
  EvalReport causal;
  EvalReport non_causal;
};

inline nlohmann::json to_json(const AblationResult& a) {
  return {{"causal", to_json(a.causal)},
          {"non_causal", to_json(a.non_causal)},
          {"delta_causal_minus_non_causal",
           {{"nce", a.causal.nce - a.non_causal.nce},
            {"auc_roc", a.causal.auc_roc - a.non_causal.auc_roc},
            {"auc_pr_pos", a.causal.auc_pr_pos - a.non_causal.auc_pr_pos},
            {"auc_pr_neg", a.causal.auc_pr_neg - a.non_causal.auc_pr_neg}}}};
}

/// Trains two confidence models that differ only in the decoder mask and
/// evaluates both on the same records.
inline AblationResult run_ablation(const ModelParams& asr, std::span<const LabeledRecord> train, std::span<const LabeledRecord> eval,
                                   const CorpusIndex& idx, const ConfTrainConfig& hp, bool freeze_encoder, double dropout,
                                   std::size_t n_bins, TokenAggregation aggregation = TokenAggregation::Last) {
  const auto examples = conf_examples(train, idx);
  auto run = [&](DecoderMask mask, const std::string& name) {
    auto conf = convert_to_confidence_model(asr, mask, freeze_encoder);
    conf.set_dropout_rate(dropout);
    const auto trained = train_confidence(std::move(conf), examples, hp);
    const auto scored = confidence_scored(trained.model, eval, idx, aggregation);
    return evaluate(scored, n_bins, name, "eval");
  };
  return {run(DecoderMask::Causal, "causal"), run(DecoderMask::NonCausal, "non_causal")};
}

/// Every setting of a full run: corpus, model and both training recipes.
struct PipelineConfig {
  CorpusSpec corpus;
  ModelConfig model;
  AsrTrainConfig asr;
  ConfTrainConfig conf;
  double conf_dropout = 0.1;
  bool freeze_encoder = true;
  DecoderMask mask = DecoderMask::Causal;
  std::size_t n_bins = kDefaultBins;

  void set_seed(std::uint64_t seed) { corpus.seed = asr.seed = conf.seed = seed; }
};

struct PipelineResult {
  EvalReport softmax_min;  // SOFTMAX:MIN on the eval split
  EvalReport confidence;   // fine-tuned head, LAST aggregation, on the eval split
};

/// gen -> train-asr -> decode -> label -> train-conf -> eval, in memory.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  const auto corpus = generate_corpus(cfg.corpus);
  ModelConfig mc = cfg.model;
  mc.feat_dim = cfg.corpus.feat_dim;
  const auto asr = train_asr(select_split(corpus, Split::AsrTrain), mc, cfg.asr).model;
  const auto train = label_records(decode_split(asr, corpus, Split::ConfTrain));
  const auto eval = label_records(decode_split(asr, corpus, Split::Eval));
  const auto idx = index_corpus(corpus);
  auto conf = convert_to_confidence_model(asr, cfg.mask, cfg.freeze_encoder);
  conf.set_dropout_rate(cfg.conf_dropout);
  const auto tuned = train_confidence(std::move(conf), conf_examples(train, idx), cfg.conf).model;
  PipelineResult r;
  r.softmax_min = evaluate(softmax_scored(eval, BaselineAggregation::Min), cfg.n_bins, "softmax_min", "eval");
  r.confidence = evaluate(confidence_scored(tuned, eval, idx, TokenAggregation::Last), cfg.n_bins, "conf_last", "eval");
  return r;
}

}  // namespace wordconf
