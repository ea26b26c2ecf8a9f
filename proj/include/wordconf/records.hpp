#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wordconf/asr.hpp"
#include "wordconf/error.hpp"
#include "wordconf/io.hpp"
#include "wordconf/labeling.hpp"

namespace wordconf {

// Line-delimited JSON records, one utterance per line. Each line names its
// own kind ("decoded" or "labeled").

struct DecodedRecord {
  std::string id;
  std::string reference;
  Hypothesis hypothesis;
};

struct LabeledRecord {
  DecodedRecord decoded;
  LabeledHypothesis labeled;
};

inline LabeledRecord label_record(const DecodedRecord& d) {
  const auto ref = split_words(d.reference);
  const auto a = align(ref, d.hypothesis.words);
  return {d, label_words(a, d.hypothesis.words)};
}

inline nlohmann::json to_json(const DecodedRecord& r) {
  const auto& h = r.hypothesis;
  return {{"kind", "decoded"},          {"id", r.id},
          {"reference", r.reference},   {"hypothesis", h.text()},
          {"token_ids", h.token_ids},   {"token_probs", h.token_probs},
          {"word_final", h.word_final}, {"truncated", h.truncated}};
}

inline nlohmann::json to_json(const LabeledRecord& r) {
  auto j = to_json(r.decoded);
  j["kind"] = "labeled";
  j["labels"] = r.labeled.labels;
  j["deletions"] = r.labeled.deletions;
  j["substitutions"] = r.labeled.substitutions;
  j["insertions"] = r.labeled.insertions;
  j["word_confidences"] = r.labeled.word_confidences;
  return j;
}

namespace detail {

inline DecodedRecord decoded_from_json(const nlohmann::json& j) {
  DecodedRecord r;
  r.id = j.at("id").get<std::string>();
  r.reference = j.at("reference").get<std::string>();
  auto& h = r.hypothesis;
  h.token_ids = j.at("token_ids").get<std::vector<int>>();
  h.token_probs = j.at("token_probs").get<std::vector<double>>();
  h.word_final = j.at("word_final").get<std::vector<std::size_t>>();
  h.truncated = j.at("truncated").get<bool>();
  if (h.token_probs.size() != h.token_ids.size()) throw ParseError("token_probs and token_ids differ in length");
  std::size_t begin = 0;
  for (std::size_t wf : h.word_final) {
    if (wf >= h.token_ids.size() || wf < begin) throw ParseError("word_final indices must increase and lie inside the token list");
    std::string word;
    for (std::size_t i = begin; i <= wf; ++i) {
      const int id = h.token_ids[i];
      if (id == Tokenizer::kSpace || id == Tokenizer::kEos) {
        if (i != wf) throw ParseError("word marker inside a word span");
        continue;
      }
      word.push_back(Tokenizer::char_of(id));
    }
    if (word.empty()) throw ParseError("empty word span");
    h.words.push_back(std::move(word));
    begin = wf + 1;
  }
  if (h.text() != j.at("hypothesis").get<std::string>()) throw ParseError("hypothesis text disagrees with its tokens");
  return r;
}

inline LabeledRecord labeled_from_json(const nlohmann::json& j) {
  LabeledRecord r;
  r.decoded = decoded_from_json(j);
  auto& l = r.labeled;
  l.words = r.decoded.hypothesis.words;
  l.labels = j.at("labels").get<std::vector<int>>();
  l.deletions = j.at("deletions").get<std::size_t>();
  l.substitutions = j.at("substitutions").get<std::size_t>();
  l.insertions = j.at("insertions").get<std::size_t>();
  l.word_confidences = j.at("word_confidences").get<std::vector<double>>();
  if (l.labels.size() != l.words.size()) throw ParseError("label count differs from hypothesis word count");
  if (!l.word_confidences.empty() && l.word_confidences.size() != l.words.size()) {
    throw ParseError("word_confidences count differs from hypothesis word count");
  }
  return r;
}

template <class Record, class Parse>
std::vector<Record> read_record_lines(const std::filesystem::path& path, const char* kind, Parse parse) {
  const auto text = io::read_file(path);
  const auto lines = io::split_lines(text);
  if (lines.trailing_partial) {
    throw ParseError(path.string() + " line " + std::to_string(lines.complete.size()) + ": truncated record (no terminating newline)");
  }
  std::vector<Record> out;
  for (std::size_t i = 0; i < lines.complete.size(); ++i) {
    const std::string where = path.string() + " line " + std::to_string(i + 1) + ": ";
    try {
      const auto j = nlohmann::json::parse(lines.complete[i]);
      if (j.at("kind") != kind) throw ParseError(std::string("expected a '") + kind + "' record, found '" + j.at("kind").get<std::string>() + "'");
      out.push_back(parse(j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return out;
}

}  // namespace detail

template <class Record>
std::string records_to_string(const std::vector<Record>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline void write_decoded_records(const std::vector<DecodedRecord>& records, const std::filesystem::path& path) {
  io::write_file_atomic(path, records_to_string(records));
}

inline void write_labeled_records(const std::vector<LabeledRecord>& records, const std::filesystem::path& path) {
  io::write_file_atomic(path, records_to_string(records));
}

inline std::vector<DecodedRecord> read_decoded_records(const std::filesystem::path& path) {
  return detail::read_record_lines<DecodedRecord>(path, "decoded", detail::decoded_from_json);
}

inline std::vector<LabeledRecord> read_labeled_records(const std::filesystem::path& path) {
  return detail::read_record_lines<LabeledRecord>(path, "labeled", detail::labeled_from_json);
}

}  // namespace wordconf
