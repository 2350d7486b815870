#include "kelab/vocab.hpp"

#include <cctype>
#include <sstream>

namespace kelab {

const char* errc_name(errc kind) {
  switch (kind) {
    case errc::invalid_input: return "invalid_input";
    case errc::numeric: return "numeric";
    case errc::template_error: return "template_error";
    case errc::record_error: return "record_error";
    case errc::file_error: return "file_error";
    case errc::config_error: return "config_error";
    case errc::degenerate_key: return "degenerate_key";
    case errc::covariance_failure: return "covariance_failure";
    case errc::solve_failure: return "solve_failure";
    case errc::ckpt_bad_magic: return "ckpt_bad_magic";
    case errc::ckpt_version: return "ckpt_version";
    case errc::ckpt_truncated: return "ckpt_truncated";
    case errc::ckpt_shape: return "ckpt_shape";
    case errc::ckpt_integrity: return "ckpt_integrity";
    case errc::missing_artifact: return "missing_artifact";
    case errc::infeasible: return "infeasible";
  }
  return "unknown";
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

TokenId Vocabulary::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  TokenId id = static_cast<TokenId>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end())
    fail(errc::invalid_input, "unknown token \"" + word + "\"");
  return it->second;
}

std::optional<TokenId> Vocabulary::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::word(TokenId token) const {
  if (token < 0 || token >= size())
    fail(errc::invalid_input,
         "token id " + std::to_string(token) + " out of range");
  return words_[static_cast<size_t>(token)];
}

std::vector<TokenId> Vocabulary::encode(const std::string& text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_whitespace(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const std::vector<TokenId>& tokens) const {
  std::ostringstream os;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << word(tokens[i]);
  }
  return os.str();
}

}  // namespace kelab
