#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wordconf/error.hpp"
#include "wordconf/optim.hpp"
#include "wordconf/rng.hpp"
#include "wordconf/tensor.hpp"
#include "wordconf/tokenizer.hpp"

namespace wordconf {

enum class HeadKind { Lm, Confidence };
enum class DecoderMask { Causal, NonCausal };

inline std::string to_string(HeadKind k) { return k == HeadKind::Lm ? "lm" : "confidence"; }
inline std::string to_string(DecoderMask m) { return m == DecoderMask::Causal ? "causal" : "non_causal"; }

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "lm") return HeadKind::Lm;
  if (s == "confidence") return HeadKind::Confidence;
  throw ConfigError("unknown head kind '" + std::string(s) + "' (expected lm or confidence)");
}

inline DecoderMask parse_decoder_mask(std::string_view s) {
  if (s == "causal") return DecoderMask::Causal;
  if (s == "non_causal" || s == "noncausal" || s == "non-causal") return DecoderMask::NonCausal;
  throw ConfigError("unknown decoder mask '" + std::string(s) + "' (expected causal or non_causal)");
}

struct ModelConfig {
  std::size_t vocab_size = Tokenizer::kVocabSize;
  std::size_t feat_dim = 16;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_encoder_layers = 2;
  std::size_t n_decoder_layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 128;
  double dropout_rate = 0.1;
  HeadKind head_kind = HeadKind::Lm;
  DecoderMask decoder_mask = DecoderMask::Causal;

  void validate() const {
    if (vocab_size == 0 || feat_dim == 0 || d_model == 0 || n_heads == 0 || ffn_dim == 0 || max_seq_len < 2) {
      throw ConfigError("model dimensions must be positive and max_seq_len >= 2");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (head_kind == HeadKind::Lm && decoder_mask != DecoderMask::Causal) {
      throw ConfigError("an LM-head model decodes autoregressively and requires the causal mask");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline bool is_encoder_parameter(std::string_view name) { return name.starts_with("enc."); }
inline bool is_head_parameter(std::string_view name) { return name.starts_with("head."); }

/// Ordered (name, shape) list of every parameter a config implies.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t d = c.d_model, f = c.ffn_dim;
  auto norm = [&](const std::string& p) {
    out.push_back({p + ".g", {d}});
    out.push_back({p + ".b", {d}});
  };
  auto attn = [&](const std::string& p) {
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.push_back({p + "." + proj + ".w", {d, d}});
      out.push_back({p + "." + proj + ".b", {d}});
    }
  };
  auto mlp = [&](const std::string& p) {
    out.push_back({p + ".fc1.w", {d, f}});
    out.push_back({p + ".fc1.b", {f}});
    out.push_back({p + ".fc2.w", {f, d}});
    out.push_back({p + ".fc2.b", {d}});
  };

  out.push_back({"enc.in.w", {c.feat_dim, d}});
  out.push_back({"enc.in.b", {d}});
  out.push_back({"enc.pos", {c.max_seq_len, d}});
  for (std::size_t l = 0; l < c.n_encoder_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".attn");
    norm(p + ".ln2");
    mlp(p + ".mlp");
  }
  norm("enc.ln_f");

  out.push_back({"dec.tok", {c.vocab_size, d}});
  out.push_back({"dec.pos", {c.max_seq_len, d}});
  for (std::size_t l = 0; l < c.n_decoder_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    norm(p + ".ln1");
    attn(p + ".self");
    norm(p + ".ln2");
    attn(p + ".cross");
    norm(p + ".ln3");
    mlp(p + ".mlp");
  }
  norm("dec.ln_f");

  if (c.head_kind == HeadKind::Lm) {
    out.push_back({"head.lm.w", {d, c.vocab_size}});
    out.push_back({"head.lm.b", {c.vocab_size}});
  } else {
    out.push_back({"head.conf.w", {d, 1}});
    out.push_back({"head.conf.b", {1}});
  }
  return out;
}

/// Named parameter collection for one encoder-decoder with exactly one head.
class ModelParams {
 public:
  ModelParams() = default;

  /// Adopts `params`, checking names and shapes against the config layout.
  ModelParams(ModelConfig config, std::vector<Parameter> params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto layout = parameter_layout(config_);
    if (layout.size() != params_.size()) {
      throw ShapeError("model expects " + std::to_string(layout.size()) + " parameters, got " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (params_[i].name != layout[i].first) {
        throw ShapeError("parameter " + std::to_string(i) + " is '" + params_[i].name + "', expected '" + layout[i].first + "'");
      }
      if (params_[i].value.shape() != layout[i].second) {
        throw ShapeError("parameter '" + params_[i].name + "' has shape " + shape_str(params_[i].value.shape()) +
                         ", config implies " + shape_str(layout[i].second));
      }
      index_.emplace(params_[i].name, i);
    }
  }

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    std::vector<Parameter> params;
    for (auto& [name, shape] : parameter_layout(config)) {
      std::vector<double> values(shape_numel(shape), 0.0);
      const bool is_gain = name.ends_with(".g");
      const bool is_table = name == "enc.pos" || name == "dec.pos" || name == "dec.tok";
      if (is_gain) {
        std::fill(values.begin(), values.end(), 1.0);
      } else if (is_table) {
        for (auto& v : values) v = rng.normal(0.0, 1.0);
      } else if (shape.size() == 2 && !name.starts_with("head.conf")) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
        for (auto& v : values) v = rng.normal(0.0, stddev);
      }
      params.emplace_back(name, Tensor(shape, std::move(values), true));
    }
    return ModelParams(config, std::move(params));
  }

  const ModelConfig& config() const { return config_; }

  void set_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    config_.dropout_rate = rate;
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  const Tensor& operator[](std::string_view name) const { return params_[lookup(name)].value; }
  Parameter& param(std::string_view name) { return params_[lookup(name)]; }
  const Parameter& param(std::string_view name) const { return params_[lookup(name)]; }

  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model has no parameter '" + std::string(name) + "'");
    return it->second;
  }

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Encoder output e, one row per acoustic frame.
struct EncoderFeatures {
  Tensor features;
  std::size_t frames() const { return features.dim(0); }
};

struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

namespace detail {

inline Tensor linear(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return add_bias(matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

inline Tensor norm(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, p[prefix + ".g"], p[prefix + ".b"]);
}

inline Tensor maybe_dropout(const ModelParams& p, const Tensor& x, ForwardMode& mode) {
  const double rate = p.config().dropout_rate;
  if (!mode.training || rate == 0.0) return x;
  if (!mode.rng) throw ParameterError("training-mode forward with dropout needs an Rng");
  return dropout(x, rate, *mode.rng, true);
}

inline std::vector<double> causal_mask(std::size_t n) {
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask[i * n + j] = -std::numeric_limits<double>::infinity();
  return mask;
}

inline Tensor attention(const ModelParams& p, const std::string& prefix, const Tensor& xq, const Tensor& xkv,
                        std::span<const double> mask) {
  const std::size_t d = p.config().d_model, heads = p.config().n_heads, dh = d / heads;
  const Tensor q = linear(p, prefix + ".q", xq);
  const Tensor k = linear(p, prefix + ".k", xkv);
  const Tensor v = linear(p, prefix + ".v", xkv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor scores = scale(matmul(slice_cols(q, h * dh, dh), transpose(slice_cols(k, h * dh, dh))), inv_sqrt);
    if (!mask.empty()) scores = add_constant(scores, mask);
    ctx.push_back(matmul(softmax(scores, 1), slice_cols(v, h * dh, dh)));
  }
  return linear(p, prefix + ".o", heads == 1 ? ctx.front() : concat_cols(ctx));
}

inline Tensor mlp(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return linear(p, prefix + ".fc2", gelu(linear(p, prefix + ".fc1", x)));
}

inline std::vector<int> iota_ids(std::size_t n, int start = 0) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), start);
  return ids;
}

}  // namespace detail

/// Acoustic frames [frames x feat_dim] -> encoder features [frames x d_model].
inline EncoderFeatures encode(const ModelParams& p, const Tensor& frames, ForwardMode mode = {}) {
  const auto& c = p.config();
  if (!frames.defined()) throw LengthError("encode: input has zero frames");
  if (frames.rank() != 2 || frames.dim(1) != c.feat_dim) {
    throw ShapeError("encode: expected frames x " + std::to_string(c.feat_dim) + ", got " + shape_str(frames.shape()));
  }
  const std::size_t n = frames.dim(0);
  if (n > c.max_seq_len) {
    throw LengthError("encode: " + std::to_string(n) + " frames exceed max_seq_len " + std::to_string(c.max_seq_len));
  }
  const auto positions = detail::iota_ids(n);
  Tensor x = add(detail::linear(p, "enc.in", frames), embedding(p["enc.pos"], positions));
  x = detail::maybe_dropout(p, x, mode);
  for (std::size_t l = 0; l < c.n_encoder_layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    const Tensor h1 = detail::norm(p, pre + ".ln1", x);
    x = add(x, detail::maybe_dropout(p, detail::attention(p, pre + ".attn", h1, h1, {}), mode));
    x = add(x, detail::maybe_dropout(p, detail::mlp(p, pre + ".mlp", detail::norm(p, pre + ".ln2", x)), mode));
  }
  return {detail::norm(p, "enc.ln_f", x)};
}

/// Final decoder hidden states h [tokens x d_model] for a full input sequence.
inline Tensor decoder_hidden(const ModelParams& p, const EncoderFeatures& e, std::span<const int> tokens,
                             DecoderMask mask_kind, ForwardMode mode = {}) {
  const auto& c = p.config();
  if (tokens.empty()) throw LengthError("decoder: empty token sequence");
  if (tokens.size() > c.max_seq_len) {
    throw LengthError("decoder: " + std::to_string(tokens.size()) + " tokens exceed max_seq_len " + std::to_string(c.max_seq_len));
  }
  const std::size_t n = tokens.size();
  const auto positions = detail::iota_ids(n);
  const std::vector<double> mask = mask_kind == DecoderMask::Causal ? detail::causal_mask(n) : std::vector<double>{};
  Tensor x = add(embedding(p["dec.tok"], tokens), embedding(p["dec.pos"], positions));
  x = detail::maybe_dropout(p, x, mode);
  for (std::size_t l = 0; l < c.n_decoder_layers; ++l) {
    const std::string pre = "dec.l" + std::to_string(l);
    const Tensor h1 = detail::norm(p, pre + ".ln1", x);
    x = add(x, detail::maybe_dropout(p, detail::attention(p, pre + ".self", h1, h1, mask), mode));
    x = add(x, detail::maybe_dropout(p, detail::attention(p, pre + ".cross", detail::norm(p, pre + ".ln2", x), e.features, {}), mode));
    x = add(x, detail::maybe_dropout(p, detail::mlp(p, pre + ".mlp", detail::norm(p, pre + ".ln3", x)), mode));
  }
  return detail::norm(p, "dec.ln_f", x);
}

/// Teacher-forced next-token logits [tokens x vocab] from the LM head.
inline Tensor decode_logits(const ModelParams& p, const EncoderFeatures& e, std::span<const int> input_tokens,
                            ForwardMode mode = {}) {
  if (p.config().head_kind != HeadKind::Lm) throw ConfigError("decode_logits: model has a confidence head, not an LM head");
  const Tensor h = decoder_hidden(p, e, input_tokens, DecoderMask::Causal, mode);
  return detail::linear(p, "head.lm", h);
}

/// Logits for the token following `prefix` (which starts with BOS).
inline Tensor decode_step_logits(const ModelParams& p, const EncoderFeatures& e, std::span<const int> prefix) {
  if (p.config().head_kind != HeadKind::Lm) {
    throw ConfigError("decode_step_logits: model has a confidence head; next-token decoding needs an LM-head checkpoint");
  }
  if (prefix.empty() || prefix.front() != Tokenizer::kBos) throw ParameterError("decode_step_logits: prefix must start with BOS");
  const Tensor h = decoder_hidden(p, e, prefix, DecoderMask::Causal);
  const int last = static_cast<int>(prefix.size() - 1);
  const Tensor row = embedding(h, std::span<const int>(&last, 1));
  return reshape(detail::linear(p, "head.lm", row), {p.config().vocab_size});
}

/// Per-token confidence in (0,1) for a full hypothesis in one parallel pass.
/// The decoder input is BOS followed by the hypothesis; output i belongs to
/// hypothesis token i.
inline Tensor confidence_forward(const ModelParams& p, const EncoderFeatures& e, std::span<const int> hypothesis_tokens,
                                 ForwardMode mode = {}) {
  const auto& c = p.config();
  if (c.head_kind != HeadKind::Confidence) {
    throw ConfigError("confidence_forward: model has an LM head; convert it to a confidence model first");
  }
  if (hypothesis_tokens.empty()) throw LengthError("confidence_forward: empty hypothesis");
  if (hypothesis_tokens.size() + 1 > c.max_seq_len) {
    throw LengthError("confidence_forward: " + std::to_string(hypothesis_tokens.size()) +
                      " tokens plus BOS exceed max_seq_len " + std::to_string(c.max_seq_len));
  }
  std::vector<int> input;
  input.reserve(hypothesis_tokens.size() + 1);
  input.push_back(Tokenizer::kBos);
  input.insert(input.end(), hypothesis_tokens.begin(), hypothesis_tokens.end());
  const Tensor h = decoder_hidden(p, e, input, c.decoder_mask, mode);
  const auto rows = detail::iota_ids(hypothesis_tokens.size(), 1);
  const Tensor logits = detail::linear(p, "head.conf", embedding(h, rows));
  return reshape(sigmoid(logits), {hypothesis_tokens.size()});
}

/// Replaces the LM head with a zero-initialized scalar confidence head.
/// Every other parameter is copied bit-exactly.
inline ModelParams convert_to_confidence_model(const ModelParams& asr, DecoderMask mask, bool freeze_encoder) {
  if (asr.config().head_kind != HeadKind::Lm) throw ConfigError("convert_to_confidence_model: input must have an LM head");
  ModelConfig cfg = asr.config();
  cfg.head_kind = HeadKind::Confidence;
  cfg.decoder_mask = mask;
  std::vector<Parameter> params;
  for (const auto& src : asr.params()) {
    if (is_head_parameter(src.name)) continue;
    Parameter copy(src);
    copy.frozen = freeze_encoder && is_encoder_parameter(src.name);
    copy.value.set_requires_grad(!copy.frozen);
    params.push_back(std::move(copy));
  }
  params.emplace_back("head.conf.w", Tensor::zeros({cfg.d_model, 1}, true));
  params.emplace_back("head.conf.b", Tensor::zeros({1}, true));
  return ModelParams(cfg, std::move(params));
}

struct DecodeOutput {
  std::vector<int> tokens;    // emitted tokens, EOS included when reached
  std::vector<double> probs;  // softmax probability of each emitted token
  bool truncated = false;     // stopped at max_len without EOS
};

/// Greedy decoding from BOS. BOS and PAD are never emitted.
inline DecodeOutput greedy_decode(const ModelParams& p, const EncoderFeatures& e, std::size_t max_len) {
  if (p.config().head_kind != HeadKind::Lm) throw ConfigError("greedy_decode: model has a confidence head");
  NoGradGuard no_grad;
  max_len = std::min(max_len, p.config().max_seq_len - 1);
  DecodeOutput out;
  std::vector<int> prefix{Tokenizer::kBos};
  while (out.tokens.size() < max_len) {
    const Tensor logits = decode_step_logits(p, e, prefix);
    const Tensor probs = softmax(logits, 0);
    int best = -1;
    for (int id = 0; id < static_cast<int>(probs.numel()); ++id) {
      if (id == Tokenizer::kBos || id == Tokenizer::kPad) continue;
      if (best < 0 || probs[static_cast<std::size_t>(id)] > probs[static_cast<std::size_t>(best)]) best = id;
    }
    out.tokens.push_back(best);
    out.probs.push_back(probs[static_cast<std::size_t>(best)]);
    prefix.push_back(best);
    if (best == Tokenizer::kEos) return out;
  }
  out.truncated = true;
  return out;
}

}  // namespace wordconf
