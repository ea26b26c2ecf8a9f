#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "wordconf/checkpoint.hpp"
#include "wordconf/io.hpp"
#include "wordconf/pipeline.hpp"
#include "wordconf/records.hpp"

using namespace wordconf;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "wordconf_tests";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig small_config() {
  ModelConfig c;
  c.feat_dim = 4;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_dim = 16;
  c.max_seq_len = 20;
  return c;
}

DecodedRecord sample_decoded() {
  DecodedRecord d;
  d.id = "utt-7";
  d.reference = "the cat";
  DecodeOutput raw;
  raw.tokens = Tokenizer::tokenize("the bat");
  raw.tokens.push_back(Tokenizer::kEos);
  for (std::size_t i = 0; i < raw.tokens.size(); ++i) raw.probs.push_back(0.5 + 0.05 * static_cast<double>(i));
  d.hypothesis = make_hypothesis(raw);
  return d;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("little-endian hex round trip", "[io]") {
  const std::vector<double> v{0.0, -0.0, 1.0, -2.5, 1e-310, 1.7976931348623157e308};
  const auto hex = io::f64_to_hex(v);
  CHECK(hex.size() == 16 * v.size());
  CHECK(io::f64_to_hex(std::vector<double>{1.0}) == "000000000000f03f");
  const auto back = io::hex_to_f64(hex);
  REQUIRE(back.size() == v.size());
  CHECK(std::memcmp(back.data(), v.data(), v.size() * sizeof(double)) == 0);
  CHECK_THROWS(io::hex_to_f64("abc"));
  CHECK_THROWS(io::hex_to_f64("zz00000000000000"));
}

TEST_CASE("atomic writes leave no temp file", "[io]") {
  const auto p = temp_path("atomic.txt");
  io::write_file_atomic(p, "first");
  io::write_file_atomic(p, "second");
  CHECK(io::read_file(p) == "second");
  CHECK(!fs::exists(p.string() + ".tmp"));
  CHECK_THROWS_AS(io::write_file_atomic(temp_path("missing_dir") / "x" / "y.txt", "z"), Error);
}

TEST_CASE("checkpoint round trip is bit-exact", "[io][checkpoint]") {
  const auto asr = ModelParams::initialize(small_config(), 11);
  const auto conf = convert_to_confidence_model(asr, DecoderMask::NonCausal, true);
  for (const ModelParams* m : {&asr, &conf}) {
    const auto p = temp_path("model.ckpt");
    save_checkpoint(*m, p);
    const auto back = load_checkpoint(p);
    CHECK(back.config() == m->config());
    REQUIRE(back.params().size() == m->params().size());
    for (std::size_t i = 0; i < back.params().size(); ++i) {
      const auto& a = back.params()[i];
      const auto& b = m->params()[i];
      CHECK(a.name == b.name);
      CHECK(a.frozen == b.frozen);
      CHECK(std::memcmp(a.value.data().data(), b.value.data().data(), a.value.numel() * sizeof(double)) == 0);
    }
    CHECK(checkpoint_to_bytes(back) == checkpoint_to_bytes(*m));
    CHECK(io::read_file(p).compare(0, 4, "CWL1") == 0);
  }
}

TEST_CASE("corrupt checkpoints fail loudly", "[io][checkpoint]") {
  const auto bytes = checkpoint_to_bytes(ModelParams::initialize(small_config(), 12));
  CHECK_THROWS_WITH(checkpoint_from_bytes("XXXX" + bytes.substr(4)), ContainsSubstring("magic"));
  CHECK_THROWS_WITH(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 8)), ContainsSubstring("payload"));
  CHECK_THROWS_AS(checkpoint_from_bytes(bytes.substr(0, 10)), ParseError);

  // a config that disagrees with the stored tensor shapes
  const std::uint64_t len = io::get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
  auto manifest = nlohmann::json::parse(bytes.substr(12, len));
  manifest["config"]["ffn_dim"] = 12;
  std::string header = manifest.dump();
  std::string edited(kCheckpointMagic, 4);
  io::put_u64_le(edited, header.size());
  edited += header + bytes.substr(12 + len);
  CHECK_THROWS_WITH(checkpoint_from_bytes(edited), ContainsSubstring("does not match config"));
  CHECK_THROWS_AS(load_checkpoint(temp_path("no_such.ckpt")), Error);
}

TEST_CASE("decoded and labeled records round trip", "[io][records]") {
  const auto d = sample_decoded();
  auto l = label_record(d);
  CHECK(l.labeled.labels == std::vector<int>{1, 0});
  l.labeled.word_confidences = {0.9, 0.2};

  const auto pd = temp_path("decoded.jsonl");
  write_decoded_records({d, d}, pd);
  const auto dback = read_decoded_records(pd);
  REQUIRE(dback.size() == 2);
  CHECK(dback[0].hypothesis.words == d.hypothesis.words);
  CHECK(dback[0].hypothesis.token_probs == d.hypothesis.token_probs);
  CHECK(dback[0].hypothesis.word_final == d.hypothesis.word_final);
  CHECK(records_to_string(dback) == records_to_string(std::vector<DecodedRecord>{d, d}));

  const auto pl = temp_path("labeled.jsonl");
  write_labeled_records({l}, pl);
  const auto lback = read_labeled_records(pl);
  REQUIRE(lback.size() == 1);
  CHECK(lback[0].labeled.labels == l.labeled.labels);
  CHECK(lback[0].labeled.word_confidences == l.labeled.word_confidences);
  CHECK(lback[0].labeled.substitutions == 1);
  CHECK(records_to_string(lback) == records_to_string(std::vector<LabeledRecord>{l}));

  // a decoded file is not a labeled file
  CHECK_THROWS_WITH(read_labeled_records(pd), ContainsSubstring("line 1"));
}

TEST_CASE("malformed records report the line", "[io][records]") {
  const auto good = records_to_string(std::vector<DecodedRecord>{sample_decoded()});
  const auto p = temp_path("bad.jsonl");

  write_text(p, good + good.substr(0, good.size() - 1));
  CHECK_THROWS_WITH(read_decoded_records(p), ContainsSubstring("line 2") && ContainsSubstring("truncated"));

  write_text(p, good + "{\"kind\":\"decoded\"}\n");
  CHECK_THROWS_WITH(read_decoded_records(p), ContainsSubstring("line 2"));

  auto j = nlohmann::json::parse(good);
  j["hypothesis"] = "the cat";
  write_text(p, j.dump() + "\n");
  CHECK_THROWS_WITH(read_decoded_records(p), ContainsSubstring("disagrees"));

  j = nlohmann::json::parse(good);
  j["word_final"] = {7, 3};
  write_text(p, j.dump() + "\n");
  CHECK_THROWS_AS(read_decoded_records(p), ParseError);
}

TEST_CASE("scored records drive the softmax baseline", "[io][records]") {
  const auto l = label_record(sample_decoded());
  const std::vector<LabeledRecord> records{l};
  const auto scored = softmax_scored(records, BaselineAggregation::Min);
  REQUIRE(scored.size() == 1);
  // letters of "the" are tokens 0..2, of "bat" tokens 4..6; markers are skipped
  CHECK(scored[0].scores == std::vector<double>{0.5, 0.5 + 0.05 * 4});
  const auto attached = attach_scores(records, scored);
  CHECK(attached[0].labeled.word_confidences == scored[0].scores);
}
