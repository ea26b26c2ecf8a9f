#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include "wordconf/datagen.hpp"
#include "wordconf/io.hpp"

using namespace wordconf;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec(std::uint64_t seed = 3) {
  CorpusSpec s;
  s.n_utterances = 60;
  s.feat_dim = 4;
  s.seed = seed;
  return s;
}

bool same_corpus(const std::vector<Utterance>& a, const std::vector<Utterance>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].text != b[i].text || a[i].split != b[i].split) return false;
    if (a[i].frames.shape() != b[i].frames.shape()) return false;
    const auto x = a[i].frames.data(), y = b[i].frames.data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end(), [](double p, double q) { return std::memcmp(&p, &q, sizeof p) == 0; })) return false;
  }
  return true;
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "wordconf_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed", "[datagen]") {
  CHECK(same_corpus(generate_corpus(small_spec()), generate_corpus(small_spec())));
  CHECK(!same_corpus(generate_corpus(small_spec(3)), generate_corpus(small_spec(4))));
}

TEST_CASE("frames follow the token count and prototypes", "[datagen]") {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.frames_per_token = 2;
  const auto corpus = generate_corpus(spec);
  std::map<char, std::vector<double>> seen;
  for (const auto& u : corpus) {
    REQUIRE(u.frames.dim(0) == 2 * u.text.size());
    REQUIRE(u.frames.dim(1) == spec.feat_dim);
    for (std::size_t t = 0; t < u.text.size(); ++t) {
      for (std::size_t f = 0; f < 2; ++f) {
        const auto row = u.frames.data().subspan((2 * t + f) * spec.feat_dim, spec.feat_dim);
        std::vector<double> v(row.begin(), row.end());
        auto [it, fresh] = seen.emplace(u.text[t], v);
        if (!fresh) CHECK(it->second == v);
      }
    }
  }
  CHECK(seen.size() > 10);
}

TEST_CASE("asr split noise can differ from the rest", "[datagen]") {
  auto spec = small_spec();
  spec.noise_sigma = 0.5;
  spec.asr_noise_sigma = 0.0;
  auto clean = spec;
  clean.noise_sigma = 0.0;
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(clean);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool equal = std::equal(a[i].frames.data().begin(), a[i].frames.data().end(), b[i].frames.data().begin());
    CHECK(equal == (a[i].split == Split::AsrTrain));
  }
}

TEST_CASE("channel shift moves only the non-ASR splits", "[datagen]") {
  auto spec = small_spec();
  spec.noise_sigma = 0.3;
  const auto plain = generate_corpus(spec);
  spec.channel_shift = 0.5;
  const auto shifted = generate_corpus(spec);
  REQUIRE(plain.size() == shifted.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    INFO(plain[i].id);
    CHECK(plain[i].text == shifted[i].text);
    const bool same = same_corpus({plain[i]}, {shifted[i]});
    CHECK(same == (plain[i].split == Split::AsrTrain));
  }
}

TEST_CASE("ids are unique and splits are disjoint with default proportions", "[datagen]") {
  auto spec = small_spec();
  spec.n_utterances = 500;
  const auto corpus = generate_corpus(spec);
  std::set<std::string> ids;
  std::map<Split, std::size_t> counts;
  for (const auto& u : corpus) {
    CHECK(ids.insert(u.id).second);
    ++counts[u.split];
  }
  CHECK(counts[Split::AsrTrain] == 300);
  CHECK(counts[Split::ConfTrain] == 100);
  CHECK(counts[Split::Eval] == 100);
  std::size_t total = 0;
  for (auto s : {Split::AsrTrain, Split::ConfTrain, Split::Eval}) total += select_split(corpus, s).size();
  CHECK(total == corpus.size());
}

TEST_CASE("vocabulary honours the confusable fraction", "[datagen]") {
  CorpusSpec spec;
  spec.vocab_size = 40;
  spec.confusable_fraction = 0.3;
  Rng rng(5);
  const auto vocab = generate_vocabulary(spec, rng);
  REQUIRE(vocab.size() == 40);
  CHECK(std::set<std::string>(vocab.begin(), vocab.end()).size() == 40);
  auto one_apart = [](const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return false;
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d == 1;
  };
  // the last 12 words are each one substitution away from an earlier word
  for (std::size_t i = 28; i < 40; ++i) {
    bool found = false;
    for (std::size_t j = 0; j < i && !found; ++j) found = one_apart(vocab[i], vocab[j]);
    CHECK(found);
  }
  for (const auto& w : vocab) {
    CHECK(w.size() >= spec.min_word_len);
    CHECK(w.size() <= spec.max_word_len);
  }
}

TEST_CASE("invalid specs are rejected", "[datagen]") {
  auto bad = [](auto mutate) {
    CorpusSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.confusable_fraction = 1.5; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.noise_sigma = -1.0; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.min_word_len = 6; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.max_sentence_len = 0; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.asr_train_fraction = 0.9; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.asr_noise_sigma = -0.1; })), ParameterError);
  CHECK_THROWS_AS(generate_corpus(bad([](CorpusSpec& s) { s.channel_shift = -0.5; })), ParameterError);
}

TEST_CASE("manifest round trip is bit-exact", "[datagen][manifest]") {
  const auto corpus = generate_corpus(small_spec());
  const auto path = temp_path("roundtrip.manifest");
  write_manifest(corpus, path);
  CHECK(same_corpus(read_manifest(path), corpus));
  CHECK(!fs::exists(path.string() + ".tmp"));
}

TEST_CASE("manifest edge values survive", "[datagen][manifest]") {
  Utterance u;
  u.id = "x";
  u.text = "ab";
  u.split = Split::Eval;
  u.frames = Tensor({2, 3}, {0.0, -0.0, 1e-310, -1.7976931348623157e308, 0.1, 3.0});
  const std::vector<Utterance> corpus{u};
  CHECK(same_corpus(manifest_from_string(manifest_to_string(corpus)), corpus));
}

TEST_CASE("empty corpus is an empty manifest", "[datagen][manifest]") {
  const auto path = temp_path("empty.manifest");
  write_manifest({}, path);
  CHECK(fs::file_size(path) == 0);
  CHECK(read_manifest(path).empty());
}

TEST_CASE("manifest corruption is reported with a line number", "[datagen][manifest]") {
  const auto text = manifest_to_string(generate_corpus(small_spec()));
  const auto lines = io::split_lines(text).complete;

  const std::string truncated = text.substr(0, text.size() - 40);
  CHECK_THROWS_AS(manifest_from_string(truncated), ParseError);
  CHECK_THROWS_WITH(manifest_from_string(truncated), ContainsSubstring("line " + std::to_string(lines.size())) && ContainsSubstring("truncated"));

  std::string broken = lines[0] + "\n" + lines[1] + "\n{not json\n";
  CHECK_THROWS_WITH(manifest_from_string(broken), ContainsSubstring("line 3"));

  std::string dup = lines[0] + "\n" + lines[1] + "\n" + lines[1] + "\n";
  CHECK_THROWS_WITH(manifest_from_string(dup), ContainsSubstring("duplicate"));

  CHECK_THROWS_WITH(manifest_from_string(lines[0] + "\n"), ContainsSubstring("declares"));
  CHECK_THROWS_WITH(manifest_from_string("{\"format\":\"other\"}\n"), ContainsSubstring("line 1"));
}
