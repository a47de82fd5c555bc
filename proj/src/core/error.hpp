#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memefusion {

enum class ErrorKind {
  kInvalidArgument,  // bad call-site argument or usage
  kValidation,       // dataset / config content rejected
  kShape,            // tensor or embedding dimension mismatch
  kInput,            // malformed model input (token id range, unlabeled gold)
  kPreprocess,       // image could not be decoded
  kLoad,             // encoder weights unavailable
  kConfig,           // encoder configuration inconsistent with its modality
  kFingerprint,      // checkpoint bound to a different config
  kFormat,           // corrupt or truncated artifact file
  kNumeric,          // non-finite value during training or prediction
  kIo,               // filesystem failure
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Joins at most `limit` items for error messages that enumerate offenders.
std::string join_for_message(const std::vector<std::string>& items,
                             std::size_t limit = 20);

}  // namespace memefusion
