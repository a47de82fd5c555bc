#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace memefusion {

// Decodes PNG/JPEG (and anything else imgcodecs reads) to 8-bit RGB.
// Grayscale inputs are replicated across channels and alpha is dropped.
// Throws Error(kPreprocess) carrying the path when decoding fails.
cv::Mat decode_rgb(const std::filesystem::path& path);

bool image_decodable(const std::filesystem::path& path);

}  // namespace memefusion
