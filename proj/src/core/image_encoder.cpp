#include <cmath>
#include <cstring>
#include <fstream>

#include "encoders.hpp"
#include "error.hpp"
#include "json.hpp"

namespace memefusion {

using nn::MatF;
using nn::RowF;
using nn::VecF;

// 3x3 convolution, stride 1, zero padding 1, lowered to a GEMM over im2col
// columns. Weight rows follow the (in_channel, ky, kx) flattening of an
// (out, in, 3, 3) kernel.
struct ImageEncoder::Conv {
  nn::Linear kernel;  // weight (out, in*9), bias (out)
  int in_channels = 0;
  int out_channels = 0;
  std::string name;   // upstream index, e.g. "features.0"
};

namespace {

struct ConvTape {
  MatF input;   // (in, H*W)
  MatF output;  // post-ReLU (out, H*W)
  int height = 0;
  int width = 0;
};

struct PoolTape {
  std::vector<int> argmax;  // flat index into the input plane per output cell
  int channels = 0;
  int in_height = 0;
  int in_width = 0;
};

}  // namespace

struct ImageEncoder::Tape {
  std::vector<ConvTape> convs;
  std::vector<PoolTape> pools;
  VecF pooled;  // GAP output
  int final_height = 0;
  int final_width = 0;
};

ImageEncoder::ImageEncoder() = default;
ImageEncoder::~ImageEncoder() = default;
ImageEncoder::ImageEncoder(ImageEncoder&&) noexcept = default;
ImageEncoder& ImageEncoder::operator=(ImageEncoder&&) noexcept = default;

std::shared_ptr<ImageEncoder::Tape> ImageEncoder::new_tape() { return std::make_shared<Tape>(); }

namespace {

void im2col(const float* x, int channels, int height, int width, float* cols) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        const int dx = kx - 1;
        for (int y = 0; y < height; ++y) {
          float* dst = row + static_cast<std::size_t>(y) * width;
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) {
            std::fill(dst, dst + width, 0.0f);
            continue;
          }
          const float* src = x + c * plane + static_cast<std::size_t>(sy) * width;
          if (dx == 0) {
            std::memcpy(dst, src, width * sizeof(float));
          } else if (dx < 0) {
            dst[0] = 0.0f;
            std::memcpy(dst + 1, src, (width - 1) * sizeof(float));
          } else {
            std::memcpy(dst, src + 1, (width - 1) * sizeof(float));
            dst[width - 1] = 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int channels, int height, int width, float* dx_out) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* row =
            cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        const int dx = kx - 1;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const float* src = row + static_cast<std::size_t>(y) * width;
          float* dst = dx_out + c * plane + static_cast<std::size_t>(sy) * width;
          for (int x = 0; x < width; ++x) {
            const int sx = x + dx;
            if (sx >= 0 && sx < width) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

MatF max_pool(const MatF& x, int height, int width, PoolTape* tape) {
  const int oh = height / 2;
  const int ow = width / 2;
  MatF out(x.rows(), static_cast<Eigen::Index>(oh) * ow);
  if (tape) {
    tape->argmax.resize(static_cast<std::size_t>(out.size()));
    tape->channels = static_cast<int>(x.rows());
    tape->in_height = height;
    tape->in_width = width;
  }
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const float* plane = x.row(c).data();
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo) {
        int best = (2 * y) * width + 2 * xo;
        for (int k : {(2 * y) * width + 2 * xo + 1, (2 * y + 1) * width + 2 * xo,
                      (2 * y + 1) * width + 2 * xo + 1}) {
          if (plane[k] > plane[best]) best = k;
        }
        out(c, y * ow + xo) = plane[best];
        if (tape) tape->argmax[static_cast<std::size_t>(c * oh * ow + y * ow + xo)] = best;
      }
    }
  }
  return out;
}

std::vector<int> read_layout(const std::filesystem::path& dir) {
  const auto path = dir / "config.json";
  if (!std::filesystem::exists(path)) return vgg16_layout();
  std::ifstream in(path);
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.contains("architecture") && doc["architecture"] != "vgg16") {
      throw Error(ErrorKind::kConfig,
                  "unsupported image architecture " + doc["architecture"].dump());
    }
    if (doc.contains("layout")) return doc["layout"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return vgg16_layout();
}

MatF to_matrix(const safetensors::Tensor& t, std::int64_t rows, std::int64_t cols,
               const std::string& name) {
  if (t.numel() != rows * cols) {
    throw Error(ErrorKind::kConfig, "tensor '" + name + "' has unexpected shape");
  }
  const auto values = t.to_float();
  return Eigen::Map<const MatF>(values.data(), rows, cols);
}

void put(safetensors::File& file, const std::string& name,
         std::vector<std::int64_t> shape, const float* data, Eigen::Index n) {
  file.tensors[name] = safetensors::make_f32(
      std::move(shape), std::span<const float>(data, static_cast<std::size_t>(n)));
}

}  // namespace

std::unique_ptr<ImageEncoder> ImageEncoder::load(
    const std::string& weights_id, bool frozen, std::uint64_t projection_seed,
    std::optional<int> required_backbone_dim) {
  const auto dir = resolve_weights(weights_id);
  std::unique_ptr<ImageEncoder> enc(new ImageEncoder());
  enc->weights_id_ = weights_id;
  enc->frozen_ = frozen;
  enc->projection_seed_ = projection_seed;
  enc->layout_ = read_layout(dir);

  const auto weights_path = dir / "model.safetensors";
  if (!std::filesystem::exists(weights_path)) {
    throw Error(ErrorKind::kLoad, "missing " + weights_path.string());
  }
  const auto file = safetensors::read(weights_path);

  int channels = 3;
  int module_index = 0;
  for (int width : enc->layout_) {
    if (width == 0) {
      module_index += 1;
      continue;
    }
    Conv conv;
    conv.name = "features." + std::to_string(module_index);
    conv.in_channels = channels;
    conv.out_channels = width;
    conv.kernel.weight = to_matrix(file.at(conv.name + ".weight"), width,
                                   static_cast<std::int64_t>(channels) * 9,
                                   conv.name + ".weight");
    conv.kernel.bias = to_matrix(file.at(conv.name + ".bias"), 1, width,
                                 conv.name + ".bias");
    enc->convs_.push_back(std::move(conv));
    channels = width;
    module_index += 2;  // conv + ReLU
  }
  if (enc->convs_.empty()) {
    throw Error(ErrorKind::kConfig, "image encoder layout has no convolutions");
  }
  if (required_backbone_dim && channels != *required_backbone_dim) {
    throw Error(ErrorKind::kConfig,
                "image backbone '" + weights_id + "' produces " +
                    std::to_string(channels) + "-d features, expected " +
                    std::to_string(*required_backbone_dim));
  }

  if (file.contains("projection.weight") && file.contains("projection.bias")) {
    enc->projection_.weight = to_matrix(file.at("projection.weight"), kImageEmbeddingDim,
                                        channels, "projection.weight");
    enc->projection_.bias =
        to_matrix(file.at("projection.bias"), 1, kImageEmbeddingDim, "projection.bias");
  } else {
    Rng rng(projection_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    enc->projection_.weight.resize(kImageEmbeddingDim, channels);
    enc->projection_.bias.resize(kImageEmbeddingDim);
    for (Eigen::Index i = 0; i < enc->projection_.weight.size(); ++i) {
      enc->projection_.weight.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    for (Eigen::Index i = 0; i < enc->projection_.bias.size(); ++i) {
      enc->projection_.bias[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  if (!frozen) enc->zero_grad();
  return enc;
}

VecF ImageEncoder::run_backbone(const ImageTensor& image, Tape* tape) const {
  if (image.size < 1 ||
      image.data.size() != 3 * static_cast<std::size_t>(image.size) * image.size) {
    throw Error(ErrorKind::kInput, "image tensor does not have shape (3, S, S)");
  }
  int height = image.size;
  int width = image.size;
  MatF x = Eigen::Map<const MatF>(image.data.data(), 3,
                                  static_cast<Eigen::Index>(height) * width);
  std::size_t conv_index = 0;
  MatF cols;
  for (int entry : layout_) {
    if (entry == 0) {
      if (height < 2 || width < 2) {
        throw Error(ErrorKind::kShape, "image too small for the backbone's pooling stages");
      }
      PoolTape* pt = nullptr;
      if (tape) pt = &tape->pools.emplace_back();
      x = max_pool(x, height, width, pt);
      height /= 2;
      width /= 2;
      continue;
    }
    const Conv& conv = convs_[conv_index++];
    cols.resize(static_cast<Eigen::Index>(conv.in_channels) * 9,
                static_cast<Eigen::Index>(height) * width);
    im2col(x.data(), conv.in_channels, height, width, cols.data());
    MatF y(conv.out_channels, cols.cols());
    y.noalias() = conv.kernel.weight * cols;
    y.colwise() += conv.kernel.bias.transpose();
    y = y.cwiseMax(0.0f);
    if (tape) {
      auto& ct = tape->convs.emplace_back();
      ct.input = std::move(x);
      ct.output = y;
      ct.height = height;
      ct.width = width;
    }
    x = std::move(y);
  }
  VecF pooled = x.rowwise().mean();
  if (tape) {
    tape->pooled = pooled;
    tape->final_height = height;
    tape->final_width = width;
  }
  return pooled;
}

std::vector<float> ImageEncoder::backbone_features(const ImageTensor& image) const {
  const VecF pooled = run_backbone(image, nullptr);
  return {pooled.data(), pooled.data() + pooled.size()};
}

Embedding ImageEncoder::encode(const ImageTensor& image) const {
  const VecF pooled = run_backbone(image, nullptr);
  const VecF projected = projection_.weight * pooled + projection_.bias.transpose();
  Embedding emb;
  emb.modality = Modality::kImage;
  emb.values.assign(projected.data(), projected.data() + projected.size());
  return emb;
}

std::vector<Embedding> ImageEncoder::encode(std::span<const ImageTensor> batch) const {
  std::vector<Embedding> out;
  out.reserve(batch.size());
  for (const auto& image : batch) out.push_back(encode(image));
  return out;
}

Embedding ImageEncoder::forward_train(const ImageTensor& image, Tape& tape) const {
  if (frozen_) {
    throw Error(ErrorKind::kInvalidArgument, "forward_train on a frozen encoder");
  }
  tape = Tape{};
  const VecF pooled = run_backbone(image, &tape);
  const VecF projected = projection_.weight * pooled + projection_.bias.transpose();
  Embedding emb;
  emb.modality = Modality::kImage;
  emb.values.assign(projected.data(), projected.data() + projected.size());
  return emb;
}

void ImageEncoder::backward(const Tape& tape, std::span<const float> d_embedding) {
  if (frozen_) {
    throw Error(ErrorKind::kInvalidArgument, "backward on a frozen encoder");
  }
  if (static_cast<int>(d_embedding.size()) != output_dim()) {
    throw Error(ErrorKind::kShape, "image embedding gradient has wrong width");
  }
  const MatF d_proj = Eigen::Map<const MatF>(d_embedding.data(), 1, output_dim());
  const MatF d_pooled =
      projection_.backward(MatF(tape.pooled.transpose()), d_proj);  // (1, 512)

  const int plane = tape.final_height * tape.final_width;
  MatF dx(d_pooled.cols(), plane);
  for (Eigen::Index c = 0; c < dx.rows(); ++c) {
    dx.row(c).setConstant(d_pooled(0, c) / static_cast<float>(plane));
  }

  std::size_t conv_index = convs_.size();
  std::size_t pool_index = tape.pools.size();
  for (std::size_t li = layout_.size(); li-- > 0;) {
    if (layout_[li] == 0) {
      const PoolTape& pt = tape.pools[--pool_index];
      MatF d_in = MatF::Zero(pt.channels, static_cast<Eigen::Index>(pt.in_height) * pt.in_width);
      const Eigen::Index cells = dx.cols();
      for (Eigen::Index c = 0; c < dx.rows(); ++c) {
        for (Eigen::Index k = 0; k < cells; ++k) {
          d_in(c, pt.argmax[static_cast<std::size_t>(c * cells + k)]) += dx(c, k);
        }
      }
      dx = std::move(d_in);
      continue;
    }
    Conv& conv = convs_[--conv_index];
    const ConvTape& ct = tape.convs[conv_index];
    const MatF d_pre = (ct.output.array() > 0.0f).select(dx, 0.0f);
    MatF cols(static_cast<Eigen::Index>(conv.in_channels) * 9,
              static_cast<Eigen::Index>(ct.height) * ct.width);
    im2col(ct.input.data(), conv.in_channels, ct.height, ct.width, cols.data());
    conv.kernel.grad_weight.noalias() += d_pre * cols.transpose();
    conv.kernel.grad_bias += d_pre.rowwise().sum().transpose();
    if (conv_index == 0) break;  // no gradient needed w.r.t. pixels
    const MatF d_cols = conv.kernel.weight.transpose() * d_pre;
    MatF d_in = MatF::Zero(conv.in_channels, cols.cols());
    col2im(d_cols.data(), conv.in_channels, ct.height, ct.width, d_in.data());
    dx = std::move(d_in);
  }
}

std::vector<nn::ParamSlot<float>> ImageEncoder::slots() {
  std::vector<nn::ParamSlot<float>> out;
  for (auto& conv : convs_) conv.kernel.collect(conv.name, out);
  projection_.collect("projection", out);
  return out;
}

std::vector<nn::ParamSlot<float>> ImageEncoder::parameters() {
  if (frozen_) return {};
  return slots();
}

void ImageEncoder::zero_grad() {
  for (auto& conv : convs_) conv.kernel.enable_grad();
  projection_.enable_grad();
}

std::string ImageEncoder::checksum() const {
  Sha256 hasher;
  for (const auto& conv : convs_) {
    hasher.update(conv.kernel.weight.data(), conv.kernel.weight.size() * sizeof(float));
    hasher.update(conv.kernel.bias.data(), conv.kernel.bias.size() * sizeof(float));
  }
  hasher.update(projection_.weight.data(), projection_.weight.size() * sizeof(float));
  hasher.update(projection_.bias.data(), projection_.bias.size() * sizeof(float));
  return hasher.hex_digest();
}

safetensors::File ImageEncoder::export_weights() const {
  safetensors::File file;
  for (const auto& conv : convs_) {
    put(file, conv.name + ".weight", {conv.out_channels, conv.in_channels, 3, 3},
        conv.kernel.weight.data(), conv.kernel.weight.size());
    put(file, conv.name + ".bias", {conv.out_channels}, conv.kernel.bias.data(),
        conv.kernel.bias.size());
  }
  put(file, "projection.weight", {projection_.weight.rows(), projection_.weight.cols()},
      projection_.weight.data(), projection_.weight.size());
  put(file, "projection.bias", {projection_.bias.size()}, projection_.bias.data(),
      projection_.bias.size());
  return file;
}

void ImageEncoder::import_weights(const safetensors::File& file,
                                  const std::string& prefix) {
  for (const auto& slot : slots()) {
    const std::string name = prefix + slot.name;
    if (!file.contains(name)) continue;
    const auto values = file.at(name).to_float();
    if (values.size() != slot.size) {
      throw Error(ErrorKind::kFormat, "tensor '" + name + "' has the wrong size");
    }
    std::copy(values.begin(), values.end(), slot.value);
  }
}

}  // namespace memefusion
