#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace memefusion {

// NFC normalization followed by collapsing every run of Unicode whitespace
// to a single space and trimming both ends. No case folding.
std::string normalize_caption(std::string_view text);

// BERT-style cased WordPiece tokenizer: whitespace and punctuation
// splitting, CJK characters isolated, then greedy longest-match subwords
// with a "##" continuation prefix.
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(std::vector<std::string> vocab,
                              bool lowercase = false);

  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_txt,
                                      bool lowercase = false);

  std::vector<std::string> tokenize(std::string_view text) const;
  std::vector<int> encode(std::string_view text) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  int token_id(const std::string& token) const;
  const std::string& token(int id) const { return vocab_.at(id); }

  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }

 private:
  std::vector<std::string> basic_tokenize(std::string_view text) const;
  void wordpiece(const std::string& word, std::vector<std::string>& out) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  bool lowercase_ = false;
  int cls_id_ = -1;
  int sep_id_ = -1;
  int pad_id_ = -1;
  int unk_id_ = -1;
};

}  // namespace memefusion
