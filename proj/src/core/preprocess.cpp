#include "preprocess.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "error.hpp"
#include "image_io.hpp"

namespace memefusion {

void validate(const PreprocessConfig& config) {
  if (config.image_size < 32) {
    throw Error(ErrorKind::kValidation, "image_size must be >= 32");
  }
  if (config.text_max_len < 2) {
    throw Error(ErrorKind::kValidation, "text_max_len must be >= 2");
  }
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(config.normalization_mean[c]) ||
        !(config.normalization_std[c] > 0.0)) {
      throw Error(ErrorKind::kValidation,
                  "normalization constants must be finite with std > 0");
    }
  }
}

int TokenSequence::length() const {
  int n = 0;
  for (auto m : attention_mask) n += m;
  return n;
}

ImageTensor prepare_image(const std::filesystem::path& image_path,
                          const PreprocessConfig& config,
                          bool flip_horizontal) {
  validate(config);
  const cv::Mat rgb = decode_rgb(image_path);
  cv::Mat scaled;
  rgb.convertTo(scaled, CV_32FC3, 1.0 / 255.0);
  const int size = config.image_size;
  cv::Mat resized;
  cv::resize(scaled, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  if (flip_horizontal) cv::flip(resized, resized, 1);

  ImageTensor tensor;
  tensor.size = size;
  tensor.data.resize(3 * static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const auto* row = resized.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = (static_cast<double>(row[x][c]) -
                          config.normalization_mean[c]) /
                         config.normalization_std[c];
        tensor.data[(static_cast<std::size_t>(c) * size + y) * size + x] =
            static_cast<float>(v);
      }
    }
  }
  return tensor;
}

TokenSequence prepare_text(const WordPieceTokenizer& tokenizer,
                           std::string_view text, int max_len) {
  if (max_len < 2) {
    throw Error(ErrorKind::kInvalidArgument, "max_len must be >= 2");
  }
  const std::vector<int> pieces = tokenizer.encode(normalize_caption(text));
  const std::size_t body =
      std::min(pieces.size(), static_cast<std::size_t>(max_len - 2));

  TokenSequence seq;
  seq.max_len = max_len;
  seq.token_ids.reserve(max_len);
  seq.token_ids.push_back(tokenizer.cls_id());
  seq.token_ids.insert(seq.token_ids.end(), pieces.begin(),
                       pieces.begin() + static_cast<std::ptrdiff_t>(body));
  seq.token_ids.push_back(tokenizer.sep_id());
  seq.attention_mask.assign(seq.token_ids.size(), 1);
  seq.token_ids.resize(max_len, tokenizer.pad_id());
  seq.attention_mask.resize(max_len, 0);
  return seq;
}

}  // namespace memefusion
