#pragma once

// Turns dataset splits into the inputs the heads consume: loads the
// encoders a model kind needs and computes (or reuses cached) embeddings.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "encoders.hpp"
#include "models.hpp"

namespace memefusion {

struct EncoderSet {
  std::unique_ptr<TextEncoder> text;
  std::unique_ptr<ImageEncoder> image;
  // Identity recorded with cached embeddings. The weights id, extended
  // with a parameter checksum once weights diverge from the originals.
  std::string text_identity;
  std::string image_identity;

  // Re-derives the identities after parameters changed (fine-tuning).
  void refresh_identities();
};

// Loads the encoders `config.model` uses; frozen unless fine-tuning.
EncoderSet load_encoders(const RunConfig& config);

struct CacheOptions {
  bool enabled = false;
  std::filesystem::path root;

  // $MEMEFUSION_CACHE, falling back to ~/.cache/memefusion.
  static CacheOptions from_environment();
};

// Float32 embedding matrices on disk with a JSON sidecar naming the
// weights, preprocessing and record ids they were computed for. A sidecar
// that disagrees with the request counts as a miss and is overwritten.
class EmbeddingCache {
 public:
  struct Key {
    Modality modality = Modality::kText;
    std::string weights_id;
    std::string preprocess_hash;
    std::string content_hash;
    std::vector<std::string> ids;
    int dim = 0;
    std::string variant;  // e.g. "hflip"; kept in a separate file
  };

  explicit EmbeddingCache(std::filesystem::path root);

  std::optional<nn::MatF> load(const Key& key) const;
  void store(const Key& key, const nn::MatF& rows) const;

  std::filesystem::path blob_path(const Key& key) const;
  std::filesystem::path sidecar_path(const Key& key) const;

 private:
  std::filesystem::path root_;
};

// Row-aligned embeddings for a split. `image_flipped` is filled only when
// flip augmentation is on.
struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::optional<Label>> labels;
  MatD text;
  MatD image;
  MatD image_flipped;

  std::size_t size() const { return ids.size(); }
  // Gathers rows; `flip[i]` picks the flipped image row for row i.
  Classifier::Batch gather(std::span<const std::size_t> rows,
                           const std::vector<bool>* flip = nullptr) const;
};

MatD embed_texts(const DatasetSplit& split, const EncoderSet& encoders,
                 const RunConfig& config, const CacheOptions& cache);
MatD embed_images(const DatasetSplit& split, const EncoderSet& encoders,
                  const RunConfig& config, const CacheOptions& cache,
                  bool flipped = false);

EmbeddingTable embed_split(const DatasetSplit& split, const EncoderSet& encoders,
                           const RunConfig& config, const CacheOptions& cache,
                           bool with_flipped = false);

// Tokenized captions for every record in manifest order.
std::vector<TokenSequence> tokenize_split(const DatasetSplit& split,
                                          const TextEncoder& encoder,
                                          const RunConfig& config);

}  // namespace memefusion
