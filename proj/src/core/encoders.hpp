#pragma once

// Adapter seam around the two pretrained feature extractors. Each encoder
// maps a preprocessed input to a fixed-width Embedding. Weights are read
// from a directory holding `model.safetensors` (+ `config.json`, and
// `vocab.txt` for text) laid out with the upstream parameter names, so
// exported pretrained checkpoints load unchanged.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nn.hpp"
#include "preprocess.hpp"
#include "safetensors.hpp"
#include "tokenizer.hpp"

namespace memefusion {

inline constexpr int kTextEmbeddingDim = 768;
inline constexpr int kImageEmbeddingDim = 256;
inline constexpr int kImageBackboneDim = 512;

enum class Modality { kText, kImage };

std::string_view to_string(Modality modality);

struct Embedding {
  Modality modality = Modality::kText;
  std::vector<float> values;

  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const Embedding&) const = default;
};

enum class TextPooling { kCls, kMean };

std::string_view to_string(TextPooling pooling);
TextPooling parse_text_pooling(std::string_view text);

// Resolves a weights id to a directory: an existing path is used as-is,
// otherwise the id is looked up under $MEMEFUSION_MODELS. Throws
// Error(kLoad) with a retrieval hint when neither exists.
std::filesystem::path resolve_weights(const std::string& weights_id);

// ---------------------------------------------------------------------------
// Text: BERT-style transformer encoder.

struct BertConfig {
  int vocab_size = 0;
  int hidden_size = kTextEmbeddingDim;
  int num_hidden_layers = 12;
  int num_attention_heads = 12;
  int intermediate_size = 3072;
  int max_position_embeddings = 512;
  int type_vocab_size = 2;
  double layer_norm_eps = 1e-12;
  double hidden_dropout_prob = 0.1;
  double attention_probs_dropout_prob = 0.1;
  std::string hidden_act = "gelu";
  bool do_lower_case = false;
};

BertConfig read_bert_config(const std::filesystem::path& config_json);

class TextEncoder {
 public:
  struct Tape;

  // `required_dim` is enforced against hidden_size (kConfig on mismatch).
  static std::unique_ptr<TextEncoder> load(
      const std::string& weights_id, bool frozen,
      TextPooling pooling = TextPooling::kCls,
      std::optional<int> required_dim = kTextEmbeddingDim);

  ~TextEncoder();
  TextEncoder(TextEncoder&&) noexcept;
  TextEncoder& operator=(TextEncoder&&) noexcept;

  Modality modality() const { return Modality::kText; }
  const std::string& weights_id() const { return weights_id_; }
  bool frozen() const { return frozen_; }
  int output_dim() const { return config_.hidden_size; }
  TextPooling pooling() const { return pooling_; }
  const BertConfig& config() const { return config_; }
  const WordPieceTokenizer& tokenizer() const { return *tokenizer_; }

  // Eval mode (no dropout). Each sequence is encoded independently, so a
  // record yields the same vector alone or inside any batch.
  Embedding encode(const TokenSequence& sequence) const;
  std::vector<Embedding> encode(std::span<const TokenSequence> batch) const;

  // Train-mode forward recording activations, then accumulate parameter
  // gradients for dL/d(embedding). Only valid on unfrozen encoders.
  Embedding forward_train(const TokenSequence& sequence, Rng& rng,
                          Tape& tape) const;
  void backward(const Tape& tape, std::span<const float> d_embedding);
  static std::shared_ptr<Tape> new_tape();

  std::vector<nn::ParamSlot<float>> parameters();
  void zero_grad();

  // SHA-256 over every parameter buffer.
  std::string checksum() const;
  safetensors::File export_weights() const;
  // Overwrites parameters with tensors of the same names and shapes.
  void import_weights(const safetensors::File& file, const std::string& prefix);

 private:
  TextEncoder();
  Embedding run(const TokenSequence& sequence, Rng* rng, Tape* tape) const;
  // Every trainable buffer; grad pointers are null until zero_grad().
  std::vector<nn::ParamSlot<float>> slots();

  struct Layer;
  std::string weights_id_;
  bool frozen_ = true;
  TextPooling pooling_ = TextPooling::kCls;
  BertConfig config_;
  nn::Activation activation_ = nn::Activation::kGeluErf;
  std::unique_ptr<WordPieceTokenizer> tokenizer_;
  nn::MatF word_embeddings_;
  nn::MatF position_embeddings_;
  nn::MatF token_type_embeddings_;
  nn::MatF grad_position_embeddings_;
  nn::MatF grad_token_type_embeddings_;
  nn::LayerNorm embedding_norm_;
  std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Image: 16-layer VGG convolutional backbone, global average pooling, then a
// seeded linear projection 512 -> 256.

inline const std::vector<int>& vgg16_layout() {
  // Channel widths; 0 marks a 2x2 max-pool.
  static const std::vector<int> layout = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0,
                                          512, 512, 512, 0, 512, 512, 512, 0};
  return layout;
}

class ImageEncoder {
 public:
  struct Tape;

  // `required_dim` is checked against the backbone width (512 for VGG16).
  // The projection is read from the weights when present, otherwise drawn
  // from projection_seed.
  static std::unique_ptr<ImageEncoder> load(
      const std::string& weights_id, bool frozen, std::uint64_t projection_seed,
      std::optional<int> required_backbone_dim = kImageBackboneDim);

  ~ImageEncoder();
  ImageEncoder(ImageEncoder&&) noexcept;
  ImageEncoder& operator=(ImageEncoder&&) noexcept;

  Modality modality() const { return Modality::kImage; }
  const std::string& weights_id() const { return weights_id_; }
  bool frozen() const { return frozen_; }
  int output_dim() const { return projection_.out_features(); }
  int backbone_dim() const { return projection_.in_features(); }
  std::uint64_t projection_seed() const { return projection_seed_; }
  const std::vector<int>& layout() const { return layout_; }

  // Globally pooled backbone features before the projection.
  std::vector<float> backbone_features(const ImageTensor& image) const;

  Embedding encode(const ImageTensor& image) const;
  std::vector<Embedding> encode(std::span<const ImageTensor> batch) const;

  Embedding forward_train(const ImageTensor& image, Tape& tape) const;
  void backward(const Tape& tape, std::span<const float> d_embedding);
  static std::shared_ptr<Tape> new_tape();

  std::vector<nn::ParamSlot<float>> parameters();
  void zero_grad();

  std::string checksum() const;
  const nn::Linear& projection() const { return projection_; }
  safetensors::File export_weights() const;
  void import_weights(const safetensors::File& file, const std::string& prefix);

 private:
  ImageEncoder();
  nn::VecF run_backbone(const ImageTensor& image, Tape* tape) const;
  std::vector<nn::ParamSlot<float>> slots();

  struct Conv;
  std::string weights_id_;
  bool frozen_ = true;
  std::uint64_t projection_seed_ = 0;
  std::vector<int> layout_;
  std::vector<Conv> convs_;
  nn::Linear projection_;
};

// Seeded random encoder weights in the on-disk layout above, for smoke
// tests and offline demos when pretrained weights are unavailable.
void write_random_text_encoder(const std::filesystem::path& dir,
                               const BertConfig& config,
                               const std::vector<std::string>& vocab,
                               std::uint64_t seed);
void write_random_image_encoder(const std::filesystem::path& dir,
                                std::uint64_t seed,
                                const std::vector<int>& layout = vgg16_layout());

// Special tokens, ASCII characters and their continuation pieces.
std::vector<std::string> default_random_vocab();

}  // namespace memefusion
