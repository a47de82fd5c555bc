#include "image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "error.hpp"

namespace memefusion {

cv::Mat decode_rgb(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    bgr.release();
  }
  if (bgr.empty()) {
    throw Error(ErrorKind::kPreprocess,
                "cannot decode image " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

bool image_decodable(const std::filesystem::path& path) {
  try {
    decode_rgb(path);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace memefusion
