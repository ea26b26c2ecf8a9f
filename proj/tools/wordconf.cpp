// wordconf: end-to-end driver for the word-confidence pipeline.
//
//   gen -> train-asr -> decode -> label -> train-conf -> eval / ablate
//
// Every stage reads the files written by the previous one and writes its own
// output atomically.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "wordconf/wordconf.hpp"

using namespace wordconf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Defaults come from PipelineConfig, then the --config file, then flags.
using RunConfig = PipelineConfig;

// Reads the keys of one config section, rejecting any it does not know.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (root.contains(name)) {
      if (!root.at(name).is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
      j_ = root.at(name);
    }
  }

  template <class T>
  void take(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config " + name_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void take(const char* key, std::optional<T>& field) {
    T v{};
    seen_.insert(key);
    if (!j_.contains(key)) return;
    take(key, v);
    field = v;
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("config " + name_ + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string name_;
  json j_ = json::object();
  std::set<std::string> seen_;
};

void apply_config_file(RunConfig& rc, const fs::path& path) {
  json root;
  try {
    root = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  for (const auto& [key, value] : root.items()) {
    if (key != "corpus" && key != "model" && key != "asr" && key != "conf" && key != "eval") {
      throw ConfigError(path.string() + ": unknown section '" + key + "'");
    }
  }

  Section c(root, "corpus");
  auto& s = rc.corpus;
  c.take("vocab_size", s.vocab_size);
  c.take("min_word_len", s.min_word_len);
  c.take("max_word_len", s.max_word_len);
  c.take("confusable_fraction", s.confusable_fraction);
  c.take("min_sentence_len", s.min_sentence_len);
  c.take("max_sentence_len", s.max_sentence_len);
  c.take("noise_sigma", s.noise_sigma);
  c.take("asr_noise_sigma", s.asr_noise_sigma);
  c.take("channel_shift", s.channel_shift);
  c.take("frames_per_token", s.frames_per_token);
  c.take("feat_dim", s.feat_dim);
  c.take("n_utterances", s.n_utterances);
  c.take("asr_train_fraction", s.asr_train_fraction);
  c.take("conf_train_fraction", s.conf_train_fraction);
  c.done();

  Section m(root, "model");
  auto& mc = rc.model;
  m.take("d_model", mc.d_model);
  m.take("n_heads", mc.n_heads);
  m.take("n_encoder_layers", mc.n_encoder_layers);
  m.take("n_decoder_layers", mc.n_decoder_layers);
  m.take("ffn_dim", mc.ffn_dim);
  m.take("max_seq_len", mc.max_seq_len);
  m.take("dropout_rate", mc.dropout_rate);
  m.done();

  Section a(root, "asr");
  a.take("lr", rc.asr.lr);
  a.take("epochs", rc.asr.epochs);
  a.take("batch_size", rc.asr.batch_size);
  a.done();

  Section f(root, "conf");
  std::string mask = to_string(rc.mask);
  f.take("lr", rc.conf.lr);
  f.take("epochs", rc.conf.epochs);
  f.take("batch_size", rc.conf.batch_size);
  f.take("all_tokens", rc.conf.all_tokens);
  f.take("dropout", rc.conf_dropout);
  f.take("freeze_encoder", rc.freeze_encoder);
  f.take("decoder_mask", mask);
  f.done();
  rc.mask = parse_decoder_mask(mask);

  Section e(root, "eval");
  e.take("n_bins", rc.n_bins);
  e.done();
}

template <class T>
void override_with(T& field, const std::optional<T>& flag) {
  if (flag) field = *flag;
}

ModelParams load_with_head(const fs::path& path, HeadKind want, const char* purpose) {
  auto model = load_checkpoint(path);
  if (model.config().head_kind != want) {
    throw ConfigError(std::string(purpose) + " needs a " + (want == HeadKind::Lm ? "ASR (lm-head)" : "confidence-head") + " checkpoint, but '" +
                      path.string() + "' has a " + to_string(model.config().head_kind) + " head");
  }
  return model;
}

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

json loss_log(const TrainResult& r) { return {{"losses", r.losses}, {"lrs", r.lrs}}; }

std::string uppercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// SOFTMAX:<strategy> or CONF:<checkpoint>:<aggregation>.
struct ScoreSource {
  bool softmax = true;
  BaselineAggregation baseline = BaselineAggregation::Min;
  fs::path checkpoint;
  TokenAggregation aggregation = TokenAggregation::Last;
  std::string label;
};

ScoreSource parse_score_source(const std::string& text) {
  ScoreSource s;
  const auto first = text.find(':');
  const std::string kind = uppercase(text.substr(0, first));
  if (kind == "SOFTMAX" && first != std::string::npos) {
    s.baseline = parse_baseline_aggregation(lowercase(text.substr(first + 1)));
    s.label = "softmax_" + to_string(s.baseline);
    return s;
  }
  const auto last = text.rfind(':');
  if (kind == "CONF" && last != first) {
    s.softmax = false;
    s.checkpoint = text.substr(first + 1, last - first - 1);
    s.aggregation = parse_token_aggregation(lowercase(text.substr(last + 1)));
    s.label = "conf_" + to_string(s.aggregation);
    return s;
  }
  throw ConfigError("score source '" + text + "' must be SOFTMAX:<min|mean|sum|product|max> or CONF:<checkpoint>:<last|min|mean|product|max>");
}

// Checks that every decoded record still matches the manifest it came from.
void check_against_manifest(std::span<const DecodedRecord> decoded, const CorpusIndex& idx) {
  for (const auto& d : decoded) {
    const auto& u = find_utterance(idx, d.id);
    if (u.text != d.reference) throw ParseError("record '" + d.id + "' reference disagrees with the manifest transcript");
  }
}

struct ConfFlags {
  std::optional<double> lr, dropout;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<std::string> mask;
  std::optional<bool> freeze;
  bool all_tokens = false;
  bool large_model_recipe = false;

  void add_to(CLI::App* app) {
    app->add_option("--lr", lr, "learning rate (default 1e-3)");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch-size", batch_size, "utterances per optimizer step");
    app->add_option("--dropout", dropout, "dropout during fine-tuning (default 0.1)");
    app->add_flag("--freeze-encoder,!--no-freeze-encoder", freeze, "keep encoder weights fixed (default on)");
    app->add_flag("--all-tokens", all_tokens, "supervise every token with its word label instead of word-final tokens only");
    app->add_flag("--large-model-recipe", large_model_recipe, "lr 5e-6 for a single epoch, the setting used for billion-parameter models");
  }

  void apply(RunConfig& rc, bool with_mask) const {
    if (large_model_recipe) {
      rc.conf.lr = 5e-6;
      rc.conf.epochs = 1;
    }
    override_with(rc.conf.lr, lr);
    override_with(rc.conf.epochs, epochs);
    override_with(rc.conf.batch_size, batch_size);
    override_with(rc.conf_dropout, dropout);
    override_with(rc.freeze_encoder, freeze);
    if (all_tokens) rc.conf.all_tokens = true;
    if (with_mask && mask) rc.mask = parse_decoder_mask(*mask);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-level confidence estimation for a toy encoder-decoder ASR"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string config_path;
  app.add_option("--seed", seed, "seed for data generation, initialization, shuffling and dropout")->capture_default_str();
  app.add_option("--config", config_path, "JSON file with corpus/model/asr/conf/eval sections")->check(CLI::ExistingFile);

  // gen
  auto* gen = app.add_subcommand("gen", "generate the synthetic corpus manifest");
  std::string out;
  std::optional<std::size_t> n_utt, vocab, feat_dim;
  std::optional<double> sigma, asr_sigma, shift;
  gen->add_option("--out", out, "manifest path")->required();
  gen->add_option("--n-utterances", n_utt);
  gen->add_option("--vocab-size", vocab);
  gen->add_option("--feat-dim", feat_dim);
  gen->add_option("--noise-sigma", sigma);
  gen->add_option("--asr-noise-sigma", asr_sigma, "noise on the asr_train split (defaults to --noise-sigma)");
  gen->add_option("--channel-shift", shift, "prototype shift applied outside the asr_train split");

  // train-asr
  auto* tasr = app.add_subcommand("train-asr", "train the toy ASR with teacher forcing");
  std::string manifest, log_path;
  std::optional<double> asr_lr, asr_dropout;
  std::optional<std::size_t> asr_epochs, asr_batch;
  tasr->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  tasr->add_option("--out", out, "checkpoint path")->required();
  tasr->add_option("--log", log_path, "loss log (default <out>.log.json)");
  tasr->add_option("--lr", asr_lr);
  tasr->add_option("--epochs", asr_epochs);
  tasr->add_option("--batch-size", asr_batch);
  tasr->add_option("--dropout", asr_dropout);

  // decode
  auto* dec = app.add_subcommand("decode", "greedy-decode one split into decoded records");
  std::string checkpoint, split_name = "eval";
  dec->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  dec->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  dec->add_option("--split", split_name, "asr_train, conf_train or eval")->capture_default_str();
  dec->add_option("--out", out)->required();

  // label
  auto* lab = app.add_subcommand("label", "align hypotheses with references and label each word");
  std::string decoded_path;
  lab->add_option("--decoded", decoded_path)->required()->check(CLI::ExistingFile);
  lab->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  lab->add_option("--out", out)->required();

  // train-conf
  auto* tconf = app.add_subcommand("train-conf", "fine-tune a confidence head on labeled records");
  std::string asr_path, labeled_path;
  ConfFlags conf_flags;
  tconf->add_option("--asr", asr_path, "ASR checkpoint")->required()->check(CLI::ExistingFile);
  tconf->add_option("--labeled", labeled_path)->required()->check(CLI::ExistingFile);
  tconf->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  tconf->add_option("--out", out, "confidence checkpoint path")->required();
  tconf->add_option("--log", log_path, "loss log (default <out>.log.json)");
  tconf->add_option("--mask", conf_flags.mask, "causal or non_causal (default causal)");
  conf_flags.add_to(tconf);

  // eval
  auto* ev = app.add_subcommand("eval", "score labeled records and report NCE, AUC-ROC, AUC-PR and WER");
  std::string score, scored_out;
  std::optional<std::size_t> bins;
  ev->add_option("--labeled", labeled_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--score", score, "SOFTMAX:<strategy> or CONF:<checkpoint>:<aggregation>")->required();
  ev->add_option("--manifest", manifest, "needed for CONF scores")->check(CLI::ExistingFile);
  ev->add_option("--out", out, "EvalReport JSON path")->required();
  ev->add_option("--scored-out", scored_out, "also write the labeled records with word confidences");
  ev->add_option("--bins", bins, "calibration bins (default 20)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train causal and non-causal confidence models identically and compare");
  std::string train_path, eval_path;
  ConfFlags abl_flags;
  abl->add_option("--asr", asr_path)->required()->check(CLI::ExistingFile);
  abl->add_option("--train", train_path, "labeled conf_train records")->required()->check(CLI::ExistingFile);
  abl->add_option("--eval", eval_path, "labeled eval records")->required()->check(CLI::ExistingFile);
  abl->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  abl->add_option("--out", out, "ablation report JSON path")->required();
  abl->add_option("--bins", bins);
  abl_flags.add_to(abl);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc;
    if (!config_path.empty()) apply_config_file(rc, config_path);
    rc.set_seed(seed);
    override_with(rc.n_bins, bins);
    auto log_for = [&](const std::string& o) { return log_path.empty() ? fs::path(o + ".log.json") : fs::path(log_path); };

    if (*gen) {
      override_with(rc.corpus.n_utterances, n_utt);
      override_with(rc.corpus.vocab_size, vocab);
      override_with(rc.corpus.feat_dim, feat_dim);
      override_with(rc.corpus.noise_sigma, sigma);
      if (asr_sigma) rc.corpus.asr_noise_sigma = *asr_sigma;
      override_with(rc.corpus.channel_shift, shift);
      const auto corpus = generate_corpus(rc.corpus);
      write_manifest(corpus, out);
      std::cout << "wrote " << corpus.size() << " utterances to " << out << "\n";
    } else if (*tasr) {
      override_with(rc.asr.lr, asr_lr);
      override_with(rc.asr.epochs, asr_epochs);
      override_with(rc.asr.batch_size, asr_batch);
      override_with(rc.model.dropout_rate, asr_dropout);
      const auto corpus = read_manifest(manifest);
      const auto train = select_split(corpus, Split::AsrTrain);
      if (train.empty()) throw TrainingError("manifest has no asr_train utterances");
      rc.model.feat_dim = train.front()->frames.dim(1);
      const auto result = train_asr(train, rc.model, rc.asr);
      save_checkpoint(result.model, out);
      write_json(log_for(out), loss_log(result));
      std::cout << "trained on " << train.size() << " utterances, " << result.losses.size() << " steps, final loss "
                << result.losses.back() << "\n";
    } else if (*dec) {
      const auto asr = load_with_head(checkpoint, HeadKind::Lm, "decode");
      const auto corpus = read_manifest(manifest);
      const auto records = decode_split(asr, corpus, parse_split(split_name));
      write_decoded_records(records, out);
      std::cout << "decoded " << records.size() << " " << split_name << " utterances\n";
    } else if (*lab) {
      const auto decoded = read_decoded_records(decoded_path);
      const auto corpus = read_manifest(manifest);
      check_against_manifest(decoded, index_corpus(corpus));
      const auto labeled = label_records(decoded);
      write_labeled_records(labeled, out);
      std::vector<Alignment> alignments;
      for (const auto& d : decoded) alignments.push_back(align(split_words(d.reference), d.hypothesis.words));
      std::cout << "labeled " << labeled.size() << " records, WER " << (alignments.empty() ? 0.0 : wer(alignments)) << "\n";
    } else if (*tconf) {
      conf_flags.apply(rc, true);
      const auto asr = load_with_head(asr_path, HeadKind::Lm, "train-conf --asr");
      const auto corpus = read_manifest(manifest);
      const auto idx = index_corpus(corpus);
      const auto labeled = read_labeled_records(labeled_path);
      auto model = convert_to_confidence_model(asr, rc.mask, rc.freeze_encoder);
      model.set_dropout_rate(rc.conf_dropout);
      const auto result = train_confidence(std::move(model), conf_examples(labeled, idx), rc.conf);
      save_checkpoint(result.model, out);
      write_json(log_for(out), loss_log(result));
      std::cout << "fine-tuned " << to_string(rc.mask) << " confidence model for " << result.losses.size() << " steps, final loss "
                << result.losses.back() << "\n";
    } else if (*ev) {
      const auto source = parse_score_source(score);
      const auto labeled = read_labeled_records(labeled_path);
      std::vector<ScoredUtterance> scored;
      if (source.softmax) {
        scored = softmax_scored(labeled, source.baseline);
      } else {
        if (manifest.empty()) throw ConfigError("CONF scores need --manifest for the acoustic frames");
        const auto conf = load_with_head(source.checkpoint, HeadKind::Confidence, "eval CONF:");
        const auto corpus = read_manifest(manifest);
        scored = confidence_scored(conf, labeled, index_corpus(corpus), source.aggregation);
      }
      const auto report = evaluate(scored, rc.n_bins, source.label, fs::path(labeled_path).filename().string());
      write_json(out, to_json(report));
      if (!scored_out.empty()) write_labeled_records(attach_scores(labeled, scored), scored_out);
      const EvalReport one[] = {report};
      std::cout << format_table(one);
    } else if (*abl) {
      abl_flags.apply(rc, false);
      const auto asr = load_with_head(asr_path, HeadKind::Lm, "ablate --asr");
      const auto corpus = read_manifest(manifest);
      const auto train = read_labeled_records(train_path);
      const auto eval = read_labeled_records(eval_path);
      const auto result = run_ablation(asr, train, eval, index_corpus(corpus), rc.conf, rc.freeze_encoder, rc.conf_dropout, rc.n_bins);
      write_json(out, to_json(result));
      const EvalReport both[] = {result.causal, result.non_causal};
      std::cout << format_table(both);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
