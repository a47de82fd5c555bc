#include "error.hpp"

namespace memefusion {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kPreprocess: return "preprocessing error";
    case ErrorKind::kLoad: return "load error";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kFingerprint: return "fingerprint mismatch";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

std::string join_for_message(const std::vector<std::string>& items,
                             std::size_t limit) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) {
    if (i > 0) out += ", ";
    out += items[i];
  }
  if (items.size() > limit) {
    out += ", ... (" + std::to_string(items.size() - limit) + " more)";
  }
  return out;
}

}  // namespace memefusion
