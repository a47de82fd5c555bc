#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tokenizer.hpp"

namespace memefusion {

struct PreprocessConfig {
  int image_size = 224;
  int text_max_len = 64;
  // ImageNet statistics the 16-layer CNN backbone was trained with.
  std::array<double, 3> normalization_mean{0.485, 0.456, 0.406};
  std::array<double, 3> normalization_std{0.229, 0.224, 0.225};
  bool augment_flip = false;

  bool operator==(const PreprocessConfig&) const = default;
};

void validate(const PreprocessConfig& config);

// Planar RGB, shape (3, size, size), row-major within each plane.
struct ImageTensor {
  int size = 0;
  std::vector<float> data;

  float at(int channel, int y, int x) const {
    return data[(static_cast<std::size_t>(channel) * size + y) * size + x];
  }
};

struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<std::uint8_t> attention_mask;
  int max_len = 0;

  int length() const;  // number of real (unmasked) tokens
  bool operator==(const TokenSequence&) const = default;
};

// Decode to RGB, bilinear resize to target_size x target_size, scale to
// [0, 1], then standardize each channel with the configured mean/std.
ImageTensor prepare_image(const std::filesystem::path& image_path,
                          const PreprocessConfig& config,
                          bool flip_horizontal = false);

// NFC + whitespace collapse, WordPiece, [CLS] ... [SEP], then truncate or
// pad with [PAD] to max_len.
TokenSequence prepare_text(const WordPieceTokenizer& tokenizer,
                           std::string_view text, int max_len);

}  // namespace memefusion
