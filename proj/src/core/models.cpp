#include "models.hpp"

#include <cmath>

#include "error.hpp"

namespace memefusion {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTextOnly: return "text_only";
    case ModelKind::kImageOnly: return "image_only";
    case ModelKind::kFusion: return "fusion";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "text" || text == "text_only") return ModelKind::kTextOnly;
  if (text == "image" || text == "image_only") return ModelKind::kImageOnly;
  if (text == "fusion") return ModelKind::kFusion;
  throw Error(ErrorKind::kInvalidArgument,
              "model must be text, image or fusion; got '" + std::string(text) + "'");
}

std::string_view to_string(FusionTaps taps) {
  return taps == FusionTaps::kEncoder ? "encoder" : "hidden";
}

FusionTaps parse_fusion_taps(std::string_view text) {
  if (text == "encoder") return FusionTaps::kEncoder;
  if (text == "hidden") return FusionTaps::kHidden;
  throw Error(ErrorKind::kValidation,
              "fusion_taps must be 'encoder' or 'hidden'; got '" + std::string(text) + "'");
}

void validate(const ModelSpec& spec) {
  if (!(spec.threshold > 0.0 && spec.threshold < 1.0)) {
    throw Error(ErrorKind::kValidation, "threshold must lie in (0, 1)");
  }
  for (const auto* widths : {&spec.text_hidden, &spec.image_hidden, &spec.fusion_hidden}) {
    for (int w : *widths) {
      if (w < 1) throw Error(ErrorKind::kValidation, "hidden widths must be >= 1");
    }
  }
  if (spec.image_dropout.size() > spec.image_hidden.size()) {
    throw Error(ErrorKind::kValidation, "more image dropout rates than hidden layers");
  }
  for (double p : spec.image_dropout) {
    if (!(p >= 0.0 && p < 1.0)) {
      throw Error(ErrorKind::kValidation, "dropout rates must lie in [0, 1)");
    }
  }
  if (spec.kind == ModelKind::kFusion && spec.fusion_taps == FusionTaps::kHidden &&
      spec.image_hidden.empty()) {
    throw Error(ErrorKind::kValidation, "hidden fusion taps need an image hidden stack");
  }
}

// ---------------------------------------------------------------------------

Mlp::Mlp(int in_features, std::vector<int> hidden, std::vector<double> dropout,
         int out_features, bool activate_output)
    : dropout_(std::move(dropout)), activate_output_(activate_output) {
  std::vector<int> sizes{in_features};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out_features);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Dense d;
    d.weight = MatD::Zero(sizes[i + 1], sizes[i]);
    d.bias = VecD::Zero(sizes[i + 1]);
    layers_.push_back(std::move(d));
  }
  dropout_.resize(layers_.size() - (activate_output_ ? 0 : 1), 0.0);
}

int Mlp::in_features() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int Mlp::out_features() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> Mlp::hidden_widths() const {
  std::vector<int> out;
  const std::size_t activated = layers_.size() - (activate_output_ ? 0 : 1);
  for (std::size_t i = 0; i < activated; ++i) {
    out.push_back(static_cast<int>(layers_[i].weight.rows()));
  }
  return out;
}

MatD Mlp::forward(const MatD& x, bool train, Rng* rng, Cache* cache) const {
  if (x.cols() != in_features()) {
    throw Error(ErrorKind::kShape, "dense stack expects width " +
                                       std::to_string(in_features()) + ", got " +
                                       std::to_string(x.cols()));
  }
  if (cache) {
    cache->inputs.assign(layers_.size(), MatD());
    cache->activations.assign(layers_.size(), MatD());
    cache->masks.assign(layers_.size(), MatD());
  }
  MatD h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Dense& layer = layers_[i];
    MatD z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    const bool activated = i < dropout_.size();
    if (cache) cache->inputs[i] = std::move(h);
    if (activated) {
      z = z.cwiseMax(0.0);
      if (cache) cache->activations[i] = z;
      const double p = dropout_[i];
      if (train && p > 0.0) {
        if (!rng) throw Error(ErrorKind::kInvalidArgument, "train-mode dropout needs an rng");
        MatD mask(z.rows(), z.cols());
        const double keep = 1.0 / (1.0 - p);
        for (Eigen::Index k = 0; k < mask.size(); ++k) {
          mask.data()[k] = rng->bernoulli(p) ? 0.0 : keep;
        }
        z.array() *= mask.array();
        if (cache) cache->masks[i] = std::move(mask);
      }
    }
    h = std::move(z);
  }
  return h;
}

MatD Mlp::backward(const Cache& cache, const MatD& dy) {
  MatD d = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    Dense& layer = layers_[i];
    if (i < dropout_.size()) {
      if (cache.masks[i].size()) d.array() *= cache.masks[i].array();
      d = (cache.activations[i].array() > 0.0).select(d, 0.0);
    }
    layer.grad_weight.noalias() += d.transpose() * cache.inputs[i];
    layer.grad_bias += d.colwise().sum().transpose();
    d = d * layer.weight;
  }
  return d;
}

void Mlp::init_uniform_fan_in(Rng& rng) {
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    // Row-major fill order so the draw sequence is independent of storage.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = rng.uniform(-bound, bound);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      layer.bias(r) = rng.uniform(-bound, bound);
    }
  }
}

void Mlp::zero_grad() {
  for (auto& layer : layers_) {
    layer.grad_weight = MatD::Zero(layer.weight.rows(), layer.weight.cols());
    layer.grad_bias = VecD::Zero(layer.bias.size());
  }
}

void Mlp::collect(const std::string& prefix, std::vector<nn::ParamSlot<double>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Dense& layer = layers_[i];
    if (layer.grad_weight.size() != layer.weight.size()) {
      layer.grad_weight = MatD::Zero(layer.weight.rows(), layer.weight.cols());
      layer.grad_bias = VecD::Zero(layer.bias.size());
    }
    const std::string p = prefix + "." + std::to_string(i);
    out.push_back({p + ".weight", layer.weight.data(), layer.grad_weight.data(),
                   static_cast<std::size_t>(layer.weight.size())});
    out.push_back({p + ".bias", layer.bias.data(), layer.grad_bias.data(),
                   static_cast<std::size_t>(layer.bias.size())});
  }
}

// ---------------------------------------------------------------------------

Classifier::Classifier(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  validate(spec_);
  switch (spec_.kind) {
    case ModelKind::kTextOnly:
      head_ = Mlp(kTextEmbeddingDim, spec_.text_hidden, {}, 1, false);
      break;
    case ModelKind::kImageOnly:
      head_ = Mlp(kImageEmbeddingDim, spec_.image_hidden, spec_.image_dropout, 1, false);
      break;
    case ModelKind::kFusion:
      if (spec_.fusion_taps == FusionTaps::kEncoder) {
        head_ = Mlp(kTextEmbeddingDim + kImageEmbeddingDim, spec_.fusion_hidden, {}, 1,
                    false);
      } else {
        std::vector<int> branch_hidden(spec_.image_hidden.begin(),
                                       spec_.image_hidden.end() - 1);
        image_branch_.emplace(kImageEmbeddingDim, branch_hidden, spec_.image_dropout,
                              spec_.image_hidden.back(), true);
        head_ = Mlp(kTextEmbeddingDim + spec_.image_hidden.back(), spec_.fusion_hidden,
                    {}, 1, false);
      }
      break;
  }
  Rng rng(derive_seed(init_seed, "head_init"));
  if (image_branch_) image_branch_->init_uniform_fan_in(rng);
  head_.init_uniform_fan_in(rng);
  zero_grad();
}

std::vector<int> Classifier::hidden_widths() const {
  if (image_branch_) {
    auto widths = image_branch_->hidden_widths();
    return widths;
  }
  return head_.hidden_widths();
}

std::vector<double> Classifier::dropout_rates() const {
  return image_branch_ ? image_branch_->dropout_rates() : head_.dropout_rates();
}

MatD Classifier::assemble(const Batch& batch, bool train, Rng* rng, Cache* cache) const {
  auto check = [](const MatD& m, int width, const char* what) {
    if (m.cols() != width) {
      throw Error(ErrorKind::kShape, std::string(what) + " embedding has width " +
                                         std::to_string(m.cols()) + ", expected " +
                                         std::to_string(width));
    }
  };
  switch (spec_.kind) {
    case ModelKind::kTextOnly:
      check(batch.text, kTextEmbeddingDim, "text");
      return batch.text;
    case ModelKind::kImageOnly:
      check(batch.image, kImageEmbeddingDim, "image");
      return batch.image;
    case ModelKind::kFusion: {
      check(batch.text, kTextEmbeddingDim, "text");
      check(batch.image, kImageEmbeddingDim, "image");
      if (batch.text.rows() != batch.image.rows()) {
        throw Error(ErrorKind::kShape, "text and image batches differ in length");
      }
      const MatD image_side =
          image_branch_ ? image_branch_->forward(batch.image, train, rng,
                                                 cache ? &cache->branch : nullptr)
                        : batch.image;
      MatD joined(batch.text.rows(), batch.text.cols() + image_side.cols());
      joined << batch.text, image_side;  // [text; image]
      if (cache) cache->text_width = batch.text.cols();
      return joined;
    }
  }
  return {};
}

VecD Classifier::forward(const Batch& batch, bool train, Rng* rng, Cache* cache) const {
  const MatD x = assemble(batch, train, rng, cache);
  const MatD logits = head_.forward(x, train, rng, cache ? &cache->head : nullptr);
  return logits.col(0);
}

Classifier::Batch Classifier::backward(const Cache& cache, const VecD& d_logits) {
  const MatD dx = head_.backward(cache.head, MatD(d_logits));
  Batch grads;
  switch (spec_.kind) {
    case ModelKind::kTextOnly:
      grads.text = dx;
      break;
    case ModelKind::kImageOnly:
      grads.image = dx;
      break;
    case ModelKind::kFusion: {
      grads.text = dx.leftCols(cache.text_width);
      const MatD d_image_side = dx.rightCols(dx.cols() - cache.text_width);
      grads.image = image_branch_ ? image_branch_->backward(cache.branch, d_image_side)
                                  : d_image_side;
      break;
    }
  }
  return grads;
}

namespace {

MatD row_of(const Embedding& e) {
  MatD m(1, e.dim());
  for (int i = 0; i < e.dim(); ++i) m(0, i) = e.values[i];
  return m;
}

}  // namespace

double Classifier::logit(const Embedding* text, const Embedding* image) const {
  Batch batch;
  if (spec_.uses_text()) {
    if (!text) throw Error(ErrorKind::kInvalidArgument, "model needs a text embedding");
    batch.text = row_of(*text);
  }
  if (spec_.uses_image()) {
    if (!image) throw Error(ErrorKind::kInvalidArgument, "model needs an image embedding");
    batch.image = row_of(*image);
  }
  return forward(batch, false, nullptr, nullptr)(0);
}

std::vector<nn::ParamSlot<double>> Classifier::parameters() {
  std::vector<nn::ParamSlot<double>> out;
  if (image_branch_) image_branch_->collect("image_branch", out);
  head_.collect("head", out);
  return out;
}

void Classifier::zero_grad() {
  if (image_branch_) image_branch_->zero_grad();
  head_.zero_grad();
}

safetensors::File Classifier::export_parameters() const {
  safetensors::File file;
  auto emit = [&](const std::string& prefix, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
      const auto& layer = mlp.layers()[i];
      const std::string p = prefix + "." + std::to_string(i);
      // Column-major Eigen storage -> row-major (out, in) tensor.
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w =
          layer.weight;
      file.tensors[p + ".weight"] = safetensors::make_f64(
          {w.rows(), w.cols()}, std::span<const double>(w.data(), w.size()));
      file.tensors[p + ".bias"] = safetensors::make_f64(
          {layer.bias.size()},
          std::span<const double>(layer.bias.data(), layer.bias.size()));
    }
  };
  if (image_branch_) emit("image_branch", *image_branch_);
  emit("head", head_);
  return file;
}

void Classifier::import_parameters(const safetensors::File& file) {
  auto take = [&](const std::string& prefix, Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
      auto& layer = mlp.layers()[i];
      const std::string p = prefix + "." + std::to_string(i);
      const auto& wt = file.at(p + ".weight");
      const auto& bt = file.at(p + ".bias");
      if (wt.shape != std::vector<std::int64_t>{layer.weight.rows(), layer.weight.cols()} ||
          bt.shape != std::vector<std::int64_t>{layer.bias.size()}) {
        throw Error(ErrorKind::kFormat, "checkpoint tensor '" + p +
                                            "' does not match the model configuration");
      }
      const auto w = wt.to_double();
      layer.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                    Eigen::RowMajor>>(
          w.data(), layer.weight.rows(), layer.weight.cols());
      const auto b = bt.to_double();
      layer.bias = Eigen::Map<const VecD>(b.data(), layer.bias.size());
    }
  };
  if (image_branch_) take("image_branch", *image_branch_);
  take("head", head_);
}

// ---------------------------------------------------------------------------

namespace {

void expect_dim(const Embedding& e, int dim, const char* what) {
  if (e.dim() != dim) {
    throw Error(ErrorKind::kShape, std::string(what) + " embedding must be " +
                                       std::to_string(dim) + "-d, got " +
                                       std::to_string(e.dim()));
  }
}

}  // namespace

double text_head_forward(const Classifier& model, const Embedding& text) {
  if (model.spec().kind != ModelKind::kTextOnly) {
    throw Error(ErrorKind::kInvalidArgument, "not a text-only model");
  }
  expect_dim(text, kTextEmbeddingDim, "text");
  return model.logit(&text, nullptr);
}

double image_head_forward(const Classifier& model, const Embedding& image,
                          bool train_mode, Rng* rng) {
  if (model.spec().kind != ModelKind::kImageOnly) {
    throw Error(ErrorKind::kInvalidArgument, "not an image-only model");
  }
  expect_dim(image, kImageEmbeddingDim, "image");
  Classifier::Batch batch;
  batch.image = row_of(image);
  return model.forward(batch, train_mode, rng, nullptr)(0);
}

double fusion_forward(const Classifier& model, const Embedding& text,
                      const Embedding& image) {
  if (model.spec().kind != ModelKind::kFusion) {
    throw Error(ErrorKind::kInvalidArgument, "not a fusion model");
  }
  expect_dim(text, kTextEmbeddingDim, "text");
  expect_dim(image, kImageEmbeddingDim, "image");
  return model.logit(&text, &image);
}

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

Label predict_label(double logit, double threshold) {
  if (!std::isfinite(logit)) {
    throw Error(ErrorKind::kNumeric, "cannot predict from a non-finite logit");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "threshold must lie in (0, 1)");
  }
  return sigmoid(logit) > threshold ? Label::kTroll : Label::kNotTroll;
}

}  // namespace memefusion
