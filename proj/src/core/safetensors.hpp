#pragma once

// Minimal reader/writer for the safetensors container: an 8-byte
// little-endian header length, a JSON header mapping tensor names to
// {dtype, shape, data_offsets}, then the raw tensor bytes. Used for
// encoder weights and checkpoint parameter blobs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace memefusion::safetensors {

enum class DType { kF16, kBF16, kF32, kF64 };

struct Tensor {
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<unsigned char> bytes;

  std::int64_t numel() const;
  // Values widened to float / double regardless of stored dtype.
  std::vector<float> to_float() const;
  std::vector<double> to_double() const;
};

struct File {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const {
    return tensors.count(name) != 0;
  }
  const Tensor& at(const std::string& name) const;
};

Tensor make_f32(std::vector<std::int64_t> shape, std::span<const float> values);
Tensor make_f64(std::vector<std::int64_t> shape,
                std::span<const double> values);

// Throws Error(kFormat) on truncated or inconsistent files, kIo on open
// failures.
File read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const File& file);

}  // namespace memefusion::safetensors
