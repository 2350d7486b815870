#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kelab/common.hpp"

namespace kelab {

using TokenId = int32_t;

// Closed whitespace-delimited vocabulary. Entity and relation names are
// single tokens, so answer matching reduces to token-id equality.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Inserts the word if absent; returns its id either way.
  TokenId add(const std::string& word);

  // Throws invalid_input on unknown words (the vocabulary is closed).
  TokenId id(const std::string& word) const;
  std::optional<TokenId> find(const std::string& word) const;
  const std::string& word(TokenId token) const;

  int size() const { return static_cast<int>(words_.size()); }

  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& tokens) const;

  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary& other) const {
    return words_ == other.words_;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace kelab
