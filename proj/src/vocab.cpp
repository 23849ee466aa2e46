#include "zsslu/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace zsslu {

namespace {

const char* kSpecials[] = {"<sot>", "<eot>", "<pad>", "<unk>"};

bool is_split_punct(char c) { return c == '?' || c == '!' || c == '.' || c == ','; }

}  // namespace

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      out.push_back(std::string(1, c));
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const auto& t : texts) {
    for (auto& tok : tokenize(t)) seen.insert(tok);
  }
  std::vector<std::string> toks;
  for (const char* s : kSpecials) toks.emplace_back(s);
  for (const auto& t : seen) {
    if (std::find(toks.begin(), toks.end(), t) == toks.end()) toks.push_back(t);
  }
  return from_tokens(toks);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens_ = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("Vocabulary: duplicate token '" + tokens[i] + "'");
    }
  }
  for (int i = 0; i < 4; ++i) {
    if (v.size() <= i || v.tokens_[static_cast<size_t>(i)] != kSpecials[i]) {
      throw std::invalid_argument("Vocabulary: token list must start with the special tokens");
    }
  }
  return v;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  return encode_tokens(tokenize(text));
}

std::vector<int> Vocabulary::encode_tokens(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = index_.find(t);
    ids.push_back(it == index_.end() ? unk() : it->second);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (is_special(id)) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " outside " +
                            std::to_string(size()) + " tokens");
  }
  return tokens_[static_cast<size_t>(id)];
}

}  // namespace zsslu
