#include "safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "json.hpp"

namespace memefusion::safetensors {

static_assert(std::endian::native == std::endian::little,
              "safetensors I/O assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr std::uint64_t kMaxHeaderBytes = 100u << 20;

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::kF16:
    case DType::kBF16: return 2;
    case DType::kF32: return 4;
    case DType::kF64: return 8;
  }
  return 0;
}

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF16: return "F16";
    case DType::kBF16: return "BF16";
    case DType::kF32: return "F32";
    case DType::kF64: return "F64";
  }
  return "?";
}

DType parse_dtype(const std::string& name, const std::string& tensor) {
  if (name == "F32") return DType::kF32;
  if (name == "F64") return DType::kF64;
  if (name == "F16") return DType::kF16;
  if (name == "BF16") return DType::kBF16;
  throw Error(ErrorKind::kFormat,
              "tensor '" + tensor + "' has unsupported dtype " + name);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exponent = (h >> 10) & 0x1Fu;
  std::uint32_t mantissa = h & 0x3FFu;
  std::uint32_t bits;
  if (exponent == 0) {
    if (mantissa == 0) {
      bits = sign;
    } else {
      exponent = 127 - 15 + 1;
      while ((mantissa & 0x400u) == 0) {
        mantissa <<= 1;
        --exponent;
      }
      mantissa &= 0x3FFu;
      bits = sign | (exponent << 23) | (mantissa << 13);
    }
  } else if (exponent == 0x1F) {
    bits = sign | 0x7F800000u | (mantissa << 13);
  } else {
    bits = sign | ((exponent + 127 - 15) << 23) | (mantissa << 13);
  }
  return std::bit_cast<float>(bits);
}

template <typename T>
std::vector<T> widen(const Tensor& tensor) {
  const auto n = static_cast<std::size_t>(tensor.numel());
  std::vector<T> out(n);
  const unsigned char* src = tensor.bytes.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (tensor.dtype) {
      case DType::kF32: {
        float v;
        std::memcpy(&v, src + 4 * i, 4);
        out[i] = static_cast<T>(v);
        break;
      }
      case DType::kF64: {
        double v;
        std::memcpy(&v, src + 8 * i, 8);
        out[i] = static_cast<T>(v);
        break;
      }
      case DType::kF16: {
        std::uint16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        out[i] = static_cast<T>(half_to_float(v));
        break;
      }
      case DType::kBF16: {
        std::uint16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        out[i] = static_cast<T>(
            std::bit_cast<float>(static_cast<std::uint32_t>(v) << 16));
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::int64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::vector<float> Tensor::to_float() const { return widen<float>(*this); }
std::vector<double> Tensor::to_double() const { return widen<double>(*this); }

const Tensor& File::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw Error(ErrorKind::kFormat, "missing tensor '" + name + "'");
  }
  return it->second;
}

Tensor make_f32(std::vector<std::int64_t> shape,
                std::span<const float> values) {
  Tensor t;
  t.dtype = DType::kF32;
  t.shape = std::move(shape);
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  return t;
}

Tensor make_f64(std::vector<std::int64_t> shape,
                std::span<const double> values) {
  Tensor t;
  t.dtype = DType::kF64;
  t.shape = std::move(shape);
  t.bytes.resize(values.size_bytes());
  std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
  return t;
}

File read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  const std::string where = path.string();
  if (file_size < 8) {
    throw Error(ErrorKind::kFormat, where + ": truncated header length");
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (header_len > kMaxHeaderBytes || 8 + header_len > file_size) {
    throw Error(ErrorKind::kFormat, where + ": truncated or corrupt header");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));

  json doc;
  try {
    doc = json::parse(header);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, where + ": bad header JSON: " + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorKind::kFormat, where + ": header is not an object");
  }

  const std::uint64_t data_size = file_size - 8 - header_len;
  std::vector<unsigned char> data(data_size);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data_size));
  if (!in) throw Error(ErrorKind::kFormat, where + ": short read");

  File file;
  try {
    for (const auto& [name, entry] : doc.items()) {
      if (name == "__metadata__") {
        for (const auto& [k, v] : entry.items()) {
          file.metadata[k] = v.get<std::string>();
        }
        continue;
      }
      Tensor t;
      t.dtype = parse_dtype(entry.at("dtype").get<std::string>(), name);
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] ||
          offsets[1] > data_size) {
        throw Error(ErrorKind::kFormat,
                    where + ": tensor '" + name + "' lies outside the file");
      }
      const std::uint64_t expected =
          static_cast<std::uint64_t>(t.numel()) * element_size(t.dtype);
      if (offsets[1] - offsets[0] != expected) {
        throw Error(ErrorKind::kFormat,
                    where + ": tensor '" + name + "' size disagrees with shape");
      }
      t.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(offsets[0]),
                     data.begin() + static_cast<std::ptrdiff_t>(offsets[1]));
      file.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, where + ": bad tensor entry: " + e.what());
  }
  return file;
}

void write(const std::filesystem::path& path, const File& file) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    header[name] = {{"dtype", dtype_name(t.dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {offset, offset + t.bytes.size()}}};
    offset += t.bytes.size();
  }
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;

  std::string text = header.dump();
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');
  const std::uint64_t header_len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.bytes.data()),
              static_cast<std::streamsize>(t.bytes.size()));
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace memefusion::safetensors
