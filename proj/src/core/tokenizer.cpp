#include "tokenizer.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <fstream>

#include "error.hpp"

namespace memefusion {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    out.push_back(c < 0 ? 0xFFFD : static_cast<char32_t>(c));
  }
  return out;
}

void append_utf8(std::string& out, char32_t c) {
  uint8_t buffer[U8_MAX_LENGTH];
  int32_t n = 0;
  U8_APPEND_UNSAFE(buffer, n, static_cast<UChar32>(c));
  out.append(reinterpret_cast<const char*>(buffer), static_cast<std::size_t>(n));
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  for (char32_t c : text) append_utf8(out, c);
  return out;
}

bool is_bert_whitespace(char32_t c) {
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return true;
  return u_charType(static_cast<UChar32>(c)) == U_SPACE_SEPARATOR;
}

bool is_bert_control(char32_t c) {
  if (c == '\t' || c == '\n' || c == '\r') return false;
  switch (u_charType(static_cast<UChar32>(c))) {
    case U_CONTROL_CHAR:
    case U_FORMAT_CHAR:
    case U_UNASSIGNED:
    case U_PRIVATE_USE_CHAR:
    case U_SURROGATE:
      return true;
    default:
      return false;
  }
}

bool is_bert_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
      (c >= 123 && c <= 126)) {
    return true;
  }
  switch (u_charType(static_cast<UChar32>(c))) {
    case U_DASH_PUNCTUATION:
    case U_START_PUNCTUATION:
    case U_END_PUNCTUATION:
    case U_CONNECTOR_PUNCTUATION:
    case U_OTHER_PUNCTUATION:
    case U_INITIAL_PUNCTUATION:
    case U_FINAL_PUNCTUATION:
      return true;
    default:
      return false;
  }
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0x20000 && c <= 0x2A6DF) || (c >= 0x2A700 && c <= 0x2B73F) ||
         (c >= 0x2B740 && c <= 0x2B81F) || (c >= 0x2B820 && c <= 0x2CEAF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

std::string normalize_form(std::string_view text, bool compose) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer =
      compose ? icu::Normalizer2::getNFCInstance(status)
              : icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) {
    throw Error(ErrorKind::kConfig, "ICU normalizer unavailable");
  }
  const icu::UnicodeString source = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  const icu::UnicodeString normalized = normalizer->normalize(source, status);
  if (U_FAILURE(status)) {
    throw Error(ErrorKind::kInput, "caption normalization failed");
  }
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::u32string lowercase_strip_accents(std::u32string_view word) {
  std::u32string lowered;
  for (char32_t c : word) {
    lowered.push_back(static_cast<char32_t>(u_tolower(static_cast<UChar32>(c))));
  }
  const std::u32string decomposed =
      decode_utf8(normalize_form(encode_utf8(lowered), false));
  std::u32string out;
  for (char32_t c : decomposed) {
    if (u_charType(static_cast<UChar32>(c)) != U_NON_SPACING_MARK) out.push_back(c);
  }
  return out;
}

}  // namespace

std::string normalize_caption(std::string_view text) {
  const std::u32string composed = decode_utf8(normalize_form(text, true));
  std::string out;
  bool pending_space = false;
  for (char32_t c : composed) {
    if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_utf8(out, c);
  }
  return out;
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab,
                                       bool lowercase)
    : vocab_(std::move(vocab)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    index_.emplace(vocab_[i], static_cast<int>(i));
  }
  auto require = [&](const char* token) {
    auto it = index_.find(token);
    if (it == index_.end()) {
      throw Error(ErrorKind::kConfig,
                  std::string("vocabulary lacks special token ") + token);
    }
    return it->second;
  };
  cls_id_ = require("[CLS]");
  sep_id_ = require("[SEP]");
  pad_id_ = require("[PAD]");
  unk_id_ = require("[UNK]");
}

WordPieceTokenizer WordPieceTokenizer::from_file(
    const std::filesystem::path& vocab_txt, bool lowercase) {
  std::ifstream in(vocab_txt, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kLoad, "cannot read vocabulary " + vocab_txt.string());
  }
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

int WordPieceTokenizer::token_id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id_ : it->second;
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(
    std::string_view text) const {
  std::u32string cleaned;
  for (char32_t c : decode_utf8(normalize_form(text, true))) {
    if (c == 0 || c == 0xFFFD || is_bert_control(c)) continue;
    if (is_bert_whitespace(c)) {
      cleaned.push_back(' ');
    } else if (is_cjk(c)) {
      cleaned.push_back(' ');
      cleaned.push_back(c);
      cleaned.push_back(' ');
    } else {
      cleaned.push_back(c);
    }
  }

  std::vector<std::string> out;
  std::u32string word;
  auto flush_word = [&] {
    if (word.empty()) return;
    std::u32string piece;
    const std::u32string source = lowercase_ ? lowercase_strip_accents(word) : word;
    for (char32_t c : source) {
      if (is_bert_punctuation(c)) {
        if (!piece.empty()) out.push_back(encode_utf8(piece));
        piece.clear();
        out.push_back(encode_utf8(std::u32string(1, c)));
      } else {
        piece.push_back(c);
      }
    }
    if (!piece.empty()) out.push_back(encode_utf8(piece));
    word.clear();
  };
  for (char32_t c : cleaned) {
    if (c == ' ' || u_isUWhiteSpace(static_cast<UChar32>(c))) {
      flush_word();
    } else {
      word.push_back(c);
    }
  }
  flush_word();
  return out;
}

void WordPieceTokenizer::wordpiece(const std::string& word,
                                   std::vector<std::string>& out) const {
  const std::u32string chars = decode_utf8(word);
  if (chars.size() > kMaxCharsPerWord) {
    out.push_back("[UNK]");
    return;
  }
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::size_t end = chars.size();
    std::string match;
    while (start < end) {
      std::string candidate =
          encode_utf8(std::u32string_view(chars).substr(start, end - start));
      if (start > 0) candidate = "##" + candidate;
      if (index_.count(candidate)) {
        match = std::move(candidate);
        break;
      }
      --end;
    }
    if (match.empty()) {
      out.push_back("[UNK]");
      return;
    }
    pieces.push_back(std::move(match));
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

std::vector<std::string> WordPieceTokenizer::tokenize(
    std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& word : basic_tokenize(text)) wordpiece(word, out);
  return out;
}

std::vector<int> WordPieceTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& token : tokenize(text)) ids.push_back(token_id(token));
  return ids;
}

}  // namespace memefusion
