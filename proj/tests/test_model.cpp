#include <catch_amalgamated.hpp>

#include <cstring>

#include "model_fixtures.hpp"
#include "wordconf/asr.hpp"
#include "wordconf/confidence.hpp"
#include "wordconf/model.hpp"

using namespace wordconf;
using Catch::Matchers::ContainsSubstring;

using namespace testing;

TEST_CASE("encode validates its input", "[model]") {
  const auto m = ModelParams::initialize(tiny_config(), 1);
  Rng rng(1);
  CHECK_THROWS_AS(encode(m, Tensor()), LengthError);
  CHECK_THROWS_AS(encode(m, random_frames(rng, 17, 3)), LengthError);
  CHECK_THROWS_AS(encode(m, random_frames(rng, 4, 5)), ShapeError);
  const auto x = random_frames(rng, 5, 3);
  const auto e1 = encode(m, x), e2 = encode(m, x);
  CHECK(e1.features.shape() == Shape{5, 8});
  CHECK(bit_equal(e1.features, e2.features));
}

TEST_CASE("config validation", "[model]") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_WITH(c.validate(), ContainsSubstring("divisible"));
  c = tiny_config();
  c.decoder_mask = DecoderMask::NonCausal;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("step logits agree with teacher-forced logits", "[model]") {
  const auto m = ModelParams::initialize(tiny_config(), 2);
  Rng rng(2);
  const auto e = encode(m, random_frames(rng, 6, 3));
  std::vector<int> seq{Tokenizer::kBos};
  for (int id : random_tokens(rng, 5)) seq.push_back(id);
  const auto full = decode_logits(m, e, seq);
  REQUIRE(full.shape() == Shape{6, Tokenizer::kVocabSize});
  for (std::size_t n = 1; n <= seq.size(); ++n) {
    const auto step = decode_step_logits(m, e, std::span<const int>(seq.data(), n));
    REQUIRE(step.shape() == Shape{Tokenizer::kVocabSize});
    for (std::size_t v = 0; v < Tokenizer::kVocabSize; ++v) CHECK(step[v] == Catch::Approx(full[(n - 1) * Tokenizer::kVocabSize + v]).margin(1e-12));
  }
  CHECK_THROWS_AS(decode_step_logits(m, e, std::vector<int>{Tokenizer::kSpace}), ParameterError);
  const auto conf = convert_to_confidence_model(m, DecoderMask::Causal, false);
  CHECK_THROWS_AS(decode_step_logits(conf, e, seq), ConfigError);
  CHECK_THROWS_AS(transcribe(conf, random_frames(rng, 3, 3)), ConfigError);
}

TEST_CASE("greedy decoding never emits BOS or PAD and respects the budget", "[model]") {
  const auto m = ModelParams::initialize(tiny_config(), 3);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto out = greedy_decode(m, encode(m, random_frames(rng, 4, 3)), 6);
    CHECK(out.tokens.size() <= 6);
    CHECK(out.truncated == (out.tokens.empty() || out.tokens.back() != Tokenizer::kEos));
    for (std::size_t i = 0; i < out.tokens.size(); ++i) {
      CHECK(out.tokens[i] != Tokenizer::kBos);
      CHECK(out.tokens[i] != Tokenizer::kPad);
      CHECK(out.probs[i] > 0.0);
      CHECK(out.probs[i] <= 1.0);
    }
  }
}

TEST_CASE("conversion copies every non-head parameter bit-exactly", "[model][conversion]") {
  const auto asr = ModelParams::initialize(tiny_config(), 4);
  for (bool freeze : {false, true}) {
    const auto conf = convert_to_confidence_model(asr, DecoderMask::Causal, freeze);
    CHECK(conf.config().head_kind == HeadKind::Confidence);
    CHECK(!conf.contains("head.lm.w"));
    CHECK(conf["head.conf.w"].shape() == Shape{8, 1});
    CHECK(conf["head.conf.b"].shape() == Shape{1});
    for (const auto& p : asr.params()) {
      if (is_head_parameter(p.name)) continue;
      INFO(p.name);
      CHECK(bit_equal(conf[p.name], p.value));
      CHECK(conf.param(p.name).frozen == (freeze && is_encoder_parameter(p.name)));
    }
  }
  const auto conf = convert_to_confidence_model(asr, DecoderMask::Causal, false);
  CHECK_THROWS_AS(convert_to_confidence_model(conf, DecoderMask::Causal, false), ConfigError);
}

TEST_CASE("conversion does not alias the source model", "[model][conversion]") {
  auto asr = ModelParams::initialize(tiny_config(), 5);
  const auto conf = convert_to_confidence_model(asr, DecoderMask::Causal, false);
  const double before = conf["dec.tok"][0];
  asr.param("dec.tok").value.mutable_data()[0] += 1.0;
  CHECK(conf["dec.tok"][0] == before);
}

TEST_CASE("zero-initialized head outputs exactly one half", "[model][confidence]") {
  Rng rng(6);
  for (auto mask : {DecoderMask::Causal, DecoderMask::NonCausal}) {
    const auto conf = convert_to_confidence_model(ModelParams::initialize(tiny_config(), 6), mask, true);
    for (int trial = 0; trial < 20; ++trial) {
      const auto e = encode(conf, random_frames(rng, 5, 3));
      const auto c = confidence_forward(conf, e, random_tokens(rng, 1 + trial % 10));
      for (double v : c.data()) CHECK(v == 0.5);
    }
  }
}

TEST_CASE("confidence outputs lie strictly inside (0, 1)", "[model][confidence]") {
  Rng rng(7);
  const auto conf = random_conf_model(7, DecoderMask::Causal);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = random_tokens(rng, 8);
    const auto c = confidence_forward(conf, encode(conf, random_frames(rng, 5, 3)), tokens);
    REQUIRE(c.numel() == tokens.size());
    for (double v : c.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK_THROWS_AS(confidence_forward(conf, encode(conf, random_frames(rng, 2, 3)), random_tokens(rng, 16)), LengthError);
  CHECK_THROWS_AS(confidence_forward(conf, encode(conf, random_frames(rng, 2, 3)), std::vector<int>{}), LengthError);
}

TEST_CASE("causal confidence ignores the hypothesis suffix", "[model][confidence][property]") {
  Rng rng(8);
  const auto conf = random_conf_model(8, DecoderMask::Causal);
  for (int trial = 0; trial < 100; ++trial) {
    const auto e = encode(conf, random_frames(rng, 6, 3));
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 12));
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 2));
    auto tokens = random_tokens(rng, n);
    const auto before = confidence_forward(conf, e, tokens);
    for (std::size_t j = i + 1; j < n; ++j) tokens[j] = random_tokens(rng, 1)[0];
    const auto after = confidence_forward(conf, e, tokens);
    for (std::size_t k = 0; k <= i; ++k) CHECK(std::memcmp(&before.data()[k], &after.data()[k], sizeof(double)) == 0);
  }
}

TEST_CASE("non-causal confidence sees the suffix", "[model][confidence]") {
  Rng rng(9);
  const auto conf = random_conf_model(9, DecoderMask::NonCausal);
  const auto e = encode(conf, random_frames(rng, 6, 3));
  bool changed = false;
  for (int trial = 0; trial < 20 && !changed; ++trial) {
    auto tokens = random_tokens(rng, 6);
    const double first = confidence_forward(conf, e, tokens)[0];
    tokens[5] = tokens[5] == Tokenizer::kSpace ? Tokenizer::kEos : Tokenizer::kSpace;
    changed = confidence_forward(conf, e, tokens)[0] != first;
  }
  CHECK(changed);
}

TEST_CASE("end-to-end confidence loss matches finite differences", "[model][gradcheck]") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const double err = conf_loss_grad_error(seed);
    INFO("seed " << seed << " rel err " << err);
    CHECK(err < 1e-4);
  }
}
