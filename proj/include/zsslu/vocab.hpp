#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace zsslu {

// Word-level vocabulary over a closed corpus. Tokenization lowercases and
// splits sentence punctuation into standalone tokens, so "What is the color?"
// becomes [what, is, the, color, ?]. Unknown words map to <unk>; answer words
// like "yes"/"no" are ordinary entries, never specials.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Collects every normalized token from `texts`; ids are stable: specials
  // first, then tokens in sorted order.
  static Vocabulary build(const std::vector<std::string>& texts);
  // Restores a vocabulary from an explicit token list (checkpoint path).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  static std::vector<std::string> tokenize(const std::string& text);

  std::vector<int> encode(const std::string& text) const;
  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const;
  // Joins tokens with spaces; specials are dropped.
  std::string decode(const std::vector<int>& ids) const;

  int id(const std::string& token) const;  // -1 when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  int sot() const { return 0; }
  int eot() const { return 1; }
  int pad() const { return 2; }
  int unk() const { return 3; }
  bool is_special(int id) const { return id >= 0 && id <= 2; }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace zsslu
