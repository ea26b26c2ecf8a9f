#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wordconf/error.hpp"
#include "wordconf/io.hpp"
#include "wordconf/rng.hpp"
#include "wordconf/tensor.hpp"
#include "wordconf/tokenizer.hpp"

namespace wordconf {

enum class Split { AsrTrain, ConfTrain, Eval };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::AsrTrain: return "asr_train";
    case Split::ConfTrain: return "conf_train";
    case Split::Eval: return "eval";
  }
  return "eval";
}

inline Split parse_split(std::string_view s) {
  if (s == "asr_train") return Split::AsrTrain;
  if (s == "conf_train") return Split::ConfTrain;
  if (s == "eval") return Split::Eval;
  throw ParseError("unknown split '" + std::string(s) + "' (expected asr_train, conf_train or eval)");
}

/// Knobs of the synthetic speech-like corpus.
struct CorpusSpec {
  std::size_t vocab_size = 40;
  std::size_t min_word_len = 2;
  std::size_t max_word_len = 5;
  double confusable_fraction = 0.3;
  std::size_t min_sentence_len = 2;
  std::size_t max_sentence_len = 5;
  double noise_sigma = 0.8;
  // Noise on the ASR_TRAIN split; unset means noise_sigma. A cleaner ASR
  // training split leaves the ASR overconfident on the other two.
  std::optional<double> asr_noise_sigma;
  // Outside ASR_TRAIN each prototype coordinate gets a fixed offset drawn
  // from N(0, channel_shift^2), as if recorded through a different channel.
  double channel_shift = 0.0;
  std::size_t frames_per_token = 1;
  std::size_t feat_dim = 16;
  std::size_t n_utterances = 1500;
  double asr_train_fraction = 0.6;
  double conf_train_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size == 0) throw ParameterError("corpus: vocab_size must be positive");
    if (min_word_len == 0 || min_word_len > max_word_len) throw ParameterError("corpus: word length range is empty");
    if (min_sentence_len == 0 || min_sentence_len > max_sentence_len) throw ParameterError("corpus: sentence length range is empty");
    if (!(confusable_fraction >= 0.0 && confusable_fraction <= 1.0)) throw ParameterError("corpus: confusable_fraction must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw ParameterError("corpus: noise_sigma must be >= 0");
    if (asr_noise_sigma && !(*asr_noise_sigma >= 0.0)) throw ParameterError("corpus: asr_noise_sigma must be >= 0");
    if (!(channel_shift >= 0.0)) throw ParameterError("corpus: channel_shift must be >= 0");
    if (frames_per_token == 0 || feat_dim == 0) throw ParameterError("corpus: frames_per_token and feat_dim must be positive");
    if (asr_train_fraction < 0.0 || conf_train_fraction < 0.0 || asr_train_fraction + conf_train_fraction > 1.0) {
      throw ParameterError("corpus: split fractions must be non-negative and sum to at most 1");
    }
    // Each length admits 26^len words; make sure the vocabulary fits.
    double capacity = 0.0;
    for (std::size_t len = min_word_len; len <= max_word_len && capacity < 1e9; ++len) capacity += std::pow(26.0, static_cast<double>(len));
    if (static_cast<double>(vocab_size) > capacity) throw ParameterError("corpus: vocab_size exceeds the number of possible words");
  }
};

struct Utterance {
  std::string id;
  std::string text;
  Tensor frames;  // [frames_per_token * tokens x feat_dim]
  Split split = Split::AsrTrain;
};

namespace detail {

inline std::string random_word(Rng& rng, const CorpusSpec& spec) {
  const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.min_word_len), static_cast<std::int64_t>(spec.max_word_len)));
  std::string w(len, 'a');
  for (auto& c : w) c = static_cast<char>('a' + rng.uniform_int(0, 25));
  return w;
}

}  // namespace detail

/// Word list where a `confusable_fraction` share of entries are one-letter
/// substitutions of an earlier entry.
inline std::vector<std::string> generate_vocabulary(const CorpusSpec& spec, Rng& rng) {
  const auto n_conf = static_cast<std::size_t>(std::llround(spec.confusable_fraction * static_cast<double>(spec.vocab_size)));
  const std::size_t n_base = std::max<std::size_t>(spec.vocab_size - std::min(n_conf, spec.vocab_size), 1);
  std::vector<std::string> words;
  std::set<std::string> seen;
  while (words.size() < n_base) {
    auto w = detail::random_word(rng, spec);
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  std::size_t attempts = 0;
  while (words.size() < spec.vocab_size) {
    if (++attempts > 1000 * spec.vocab_size) {
      // Tiny alphabets/lengths can exhaust one-letter neighbours; fall back to fresh words.
      auto w = detail::random_word(rng, spec);
      if (seen.insert(w).second) words.push_back(std::move(w));
      continue;
    }
    std::string w = words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))];
    const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w.size()) - 1));
    const char old = w[pos];
    const auto shift = rng.uniform_int(1, 25);
    w[pos] = static_cast<char>('a' + (old - 'a' + shift) % 26);
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

/// One prototype vector per acoustic unit: the 26 letters then SPACE.
inline std::vector<std::vector<double>> generate_prototypes(const CorpusSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> protos(27, std::vector<double>(spec.feat_dim));
  for (auto& p : protos)
    for (auto& v : p) v = rng.normal();
  return protos;
}

inline Tensor synthesize_frames(std::string_view text, const std::vector<std::vector<double>>& protos, const CorpusSpec& spec, double sigma,
                                Rng& rng) {
  const auto ids = Tokenizer::tokenize(text);
  std::vector<double> values;
  values.reserve(ids.size() * spec.frames_per_token * spec.feat_dim);
  for (int id : ids) {
    const auto& proto = protos[id == Tokenizer::kSpace ? 26 : static_cast<std::size_t>(id - Tokenizer::kFirstLetter)];
    for (std::size_t f = 0; f < spec.frames_per_token; ++f)
      for (double v : proto) values.push_back(sigma == 0.0 ? v : v + sigma * rng.normal());
  }
  return Tensor({ids.size() * spec.frames_per_token, spec.feat_dim}, std::move(values));
}

/// Deterministic synthetic corpus: sentences over a random vocabulary, with
/// frames drawn as noisy per-character prototypes, split three ways.
inline std::vector<Utterance> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng vocab_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 1);
  Rng proto_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 2);
  Rng text_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 3);
  Rng noise_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 4);
  Rng split_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 5);

  const auto vocab = generate_vocabulary(spec, vocab_rng);
  const auto protos = generate_prototypes(spec, proto_rng);
  auto shifted = protos;
  if (spec.channel_shift > 0.0) {
    Rng channel_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 6);
    for (auto& p : shifted)
      for (auto& v : p) v += spec.channel_shift * channel_rng.normal();
  }

  const std::size_t n = spec.n_utterances;
  const auto n_asr = static_cast<std::size_t>(std::llround(spec.asr_train_fraction * static_cast<double>(n)));
  const auto n_conf = std::min(n - n_asr, static_cast<std::size_t>(std::llround(spec.conf_train_fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  split_rng.shuffle(order);
  std::vector<Split> split_of(n);
  for (std::size_t r = 0; r < n; ++r) split_of[order[r]] = r < n_asr ? Split::AsrTrain : (r < n_asr + n_conf ? Split::ConfTrain : Split::Eval);

  const int width = std::max<int>(6, static_cast<int>(std::to_string(n).size()));
  std::vector<Utterance> corpus;
  corpus.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = static_cast<std::size_t>(text_rng.uniform_int(static_cast<std::int64_t>(spec.min_sentence_len), static_cast<std::int64_t>(spec.max_sentence_len)));
    std::vector<std::string> words;
    for (std::size_t w = 0; w < len; ++w) words.push_back(vocab[static_cast<std::size_t>(text_rng.uniform_int(0, static_cast<std::int64_t>(vocab.size()) - 1))]);
    Utterance u;
    std::string num = std::to_string(i);
    u.id = "utt-" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), static_cast<std::size_t>(width)), '0') + num;
    u.text = join_words(words);
    u.split = split_of[i];
    const bool asr = u.split == Split::AsrTrain;
    const double sigma = asr ? spec.asr_noise_sigma.value_or(spec.noise_sigma) : spec.noise_sigma;
    u.frames = synthesize_frames(u.text, asr ? protos : shifted, spec, sigma, noise_rng);
    corpus.push_back(std::move(u));
  }
  return corpus;
}

inline std::vector<const Utterance*> select_split(const std::vector<Utterance>& corpus, Split split) {
  std::vector<const Utterance*> out;
  for (const auto& u : corpus)
    if (u.split == split) out.push_back(&u);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: line 1 is a header with the format version, then one JSON record
// per utterance. Frame payloads are hex-encoded little-endian doubles.

inline constexpr int kManifestVersion = 1;

inline std::string manifest_to_string(const std::vector<Utterance>& corpus) {
  if (corpus.empty()) return {};
  std::string out;
  nlohmann::json header = {{"format", "wordconf-manifest"}, {"version", kManifestVersion}, {"utterances", corpus.size()}};
  out += header.dump() + "\n";
  for (const auto& u : corpus) {
    nlohmann::json rec = {
        {"id", u.id},
        {"split", to_string(u.split)},
        {"text", u.text},
        {"frames", {{"shape", u.frames.shape()}, {"hex", io::f64_to_hex(u.frames.data())}}},
    };
    out += rec.dump() + "\n";
  }
  return out;
}

inline std::vector<Utterance> manifest_from_string(const std::string& text, const std::string& source = "manifest") {
  std::vector<Utterance> corpus;
  if (text.empty()) return corpus;
  const auto lines = io::split_lines(text);
  auto fail = [&](std::size_t line, const std::string& what) -> ParseError {
    return ParseError(source + " line " + std::to_string(line) + ": " + what);
  };
  if (lines.trailing_partial) throw fail(lines.complete.size(), "truncated record (no terminating newline)");

  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(lines.complete.front());
    if (header.at("format") != "wordconf-manifest") throw fail(1, "not a wordconf manifest");
    if (header.at("version").get<int>() != kManifestVersion) {
      throw fail(1, "unsupported manifest version " + header.at("version").dump());
    }
    expected = header.at("utterances").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(1, std::string("malformed header: ") + e.what());
  }

  std::set<std::string> ids;
  for (std::size_t i = 1; i < lines.complete.size(); ++i) {
    const std::size_t line_no = i + 1;
    Utterance u;
    try {
      const auto rec = nlohmann::json::parse(lines.complete[i]);
      u.id = rec.at("id").get<std::string>();
      u.split = parse_split(rec.at("split").get<std::string>());
      u.text = rec.at("text").get<std::string>();
      const auto shape = rec.at("frames").at("shape").get<Shape>();
      u.frames = Tensor(shape, io::hex_to_f64(rec.at("frames").at("hex").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw fail(line_no, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
      throw fail(line_no, e.what());
    }
    if (!ids.insert(u.id).second) throw fail(line_no, "duplicate utterance id '" + u.id + "'");
    corpus.push_back(std::move(u));
  }
  if (corpus.size() != expected) {
    throw fail(lines.complete.size(), "header declares " + std::to_string(expected) + " utterances, found " + std::to_string(corpus.size()));
  }
  return corpus;
}

inline void write_manifest(const std::vector<Utterance>& corpus, const std::filesystem::path& path) {
  io::write_file_atomic(path, manifest_to_string(corpus));
}

inline std::vector<Utterance> read_manifest(const std::filesystem::path& path) {
  return manifest_from_string(io::read_file(path), path.string());
}

}  // namespace wordconf
