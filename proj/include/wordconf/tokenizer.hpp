#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wordconf/error.hpp"

namespace wordconf {

/// Character-level vocabulary: four specials followed by 'a'..'z'.
struct Tokenizer {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSpace = 3;
  static constexpr int kFirstLetter = 4;
  static constexpr std::size_t kVocabSize = 4 + 26;

  static bool is_letter_id(int id) { return id >= kFirstLetter && id < static_cast<int>(kVocabSize); }

  static int id_of(char c) {
    if (c == ' ') return kSpace;
    if (c >= 'a' && c <= 'z') return kFirstLetter + (c - 'a');
    throw VocabularyError(std::string("character '") + c + "' is not in the vocabulary");
  }

  static char char_of(int id) {
    if (id == kSpace) return ' ';
    if (is_letter_id(id)) return static_cast<char>('a' + (id - kFirstLetter));
    throw VocabularyError("token id " + std::to_string(id) + " has no text form");
  }

  static std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id_of(c));
    return ids;
  }

  static std::string detokenize(std::span<const int> ids) {
    std::string text;
    text.reserve(ids.size());
    for (int id : ids) text.push_back(char_of(id));
    return text;
  }

  /// Index of the last character of every word in a tokenized text.
  static std::vector<std::size_t> word_final_indices(std::span<const int> ids) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool ends_here = ids[i] != kSpace && (i + 1 == ids.size() || ids[i + 1] == kSpace);
      if (ends_here) out.push_back(i);
    }
    return out;
  }
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace wordconf
