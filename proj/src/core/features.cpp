#include "features.hpp"

#include <cstdlib>
#include <fstream>

#include "error.hpp"
#include "json.hpp"
#include "random.hpp"

namespace memefusion {

namespace fs = std::filesystem;

void EncoderSet::refresh_identities() {
  if (text) text_identity = text->weights_id() + "#" + text->checksum().substr(0, 16);
  if (image) image_identity = image->weights_id() + "#" + image->checksum().substr(0, 16);
}

EncoderSet load_encoders(const RunConfig& config) {
  EncoderSet set;
  const bool frozen = !config.encoders.finetune;
  if (config.model.uses_text()) {
    set.text = TextEncoder::load(config.encoders.text_encoder, frozen,
                                 config.encoders.text_pooling);
    set.text_identity = config.encoders.text_encoder;
  }
  if (config.model.uses_image()) {
    set.image = ImageEncoder::load(config.encoders.image_encoder, frozen,
                                   config.projection_seed());
    set.image_identity = config.encoders.image_encoder;
  }
  return set;
}

CacheOptions CacheOptions::from_environment() {
  CacheOptions options;
  options.enabled = true;
  if (const char* env = std::getenv("MEMEFUSION_CACHE"); env && *env) {
    options.root = env;
  } else if (const char* home = std::getenv("HOME"); home && *home) {
    options.root = fs::path(home) / ".cache" / "memefusion";
  } else {
    options.enabled = false;
  }
  return options;
}

// ---------------------------------------------------------------------------

EmbeddingCache::EmbeddingCache(fs::path root) : root_(std::move(root)) {}

namespace {

std::string ids_digest(const std::vector<std::string>& ids) {
  Sha256 h;
  for (const auto& id : ids) h.update(id.data(), id.size() + 1);  // include NUL separator
  return h.hex_digest();
}

nlohmann::json sidecar_json(const EmbeddingCache::Key& key) {
  return {{"modality", to_string(key.modality)},
          {"weights_id", key.weights_id},
          {"preprocess_hash", key.preprocess_hash},
          {"content_hash", key.content_hash},
          {"dim", key.dim},
          {"ids", key.ids},
          {"variant", key.variant}};
}

}  // namespace

fs::path EmbeddingCache::blob_path(const Key& key) const {
  // Named by modality and record ids only, so a stale entry for the same
  // split is found and replaced rather than accumulating.
  std::string stem(to_string(key.modality));
  if (!key.variant.empty()) stem += "-" + key.variant;
  stem += "-" + ids_digest(key.ids).substr(0, 24);
  return root_ / (stem + ".f32");
}

fs::path EmbeddingCache::sidecar_path(const Key& key) const {
  auto p = blob_path(key);
  p.replace_extension(".json");
  return p;
}

std::optional<nn::MatF> EmbeddingCache::load(const Key& key) const {
  std::ifstream side(sidecar_path(key));
  if (!side) return std::nullopt;
  nlohmann::json stored;
  try {
    stored = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (stored != sidecar_json(key)) return std::nullopt;
  const auto rows = static_cast<Eigen::Index>(key.ids.size());
  const std::uintmax_t expected = static_cast<std::uintmax_t>(rows) * key.dim * sizeof(float);
  std::error_code ec;
  if (fs::file_size(blob_path(key), ec) != expected || ec) return std::nullopt;
  nn::MatF out(rows, key.dim);
  std::ifstream blob(blob_path(key), std::ios::binary);
  blob.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected));
  if (!blob) return std::nullopt;
  return out;
}

void EmbeddingCache::store(const Key& key, const nn::MatF& rows) const {
  if (rows.rows() != static_cast<Eigen::Index>(key.ids.size()) || rows.cols() != key.dim) {
    throw Error(ErrorKind::kShape, "embedding matrix does not match its cache key");
  }
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create cache directory " + root_.string());
  // Blob first, sidecar last: a crash in between leaves an entry that no
  // longer validates.
  fs::remove(sidecar_path(key), ec);
  {
    std::ofstream blob(blob_path(key), std::ios::binary | std::ios::trunc);
    blob.write(reinterpret_cast<const char*>(rows.data()),
               static_cast<std::streamsize>(rows.size() * sizeof(float)));
    if (!blob) throw Error(ErrorKind::kIo, "cannot write " + blob_path(key).string());
  }
  std::ofstream side(sidecar_path(key), std::ios::trunc);
  side << sidecar_json(key).dump() << '\n';
  if (!side) throw Error(ErrorKind::kIo, "cannot write " + sidecar_path(key).string());
}

// ---------------------------------------------------------------------------

Classifier::Batch EmbeddingTable::gather(std::span<const std::size_t> rows,
                                         const std::vector<bool>* flip) const {
  Classifier::Batch batch;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (text.size() > 0) {
    batch.text.resize(n, text.cols());
    for (Eigen::Index i = 0; i < n; ++i) batch.text.row(i) = text.row(rows[i]);
  }
  if (image.size() > 0) {
    batch.image.resize(n, image.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool flipped = flip && (*flip)[i] && image_flipped.size() > 0;
      batch.image.row(i) = flipped ? image_flipped.row(rows[i]) : image.row(rows[i]);
    }
  }
  return batch;
}

namespace {

std::vector<std::string> split_ids(const DatasetSplit& split) {
  std::vector<std::string> ids;
  ids.reserve(split.size());
  for (const auto& r : split.records()) ids.push_back(r.id);
  return ids;
}

std::string text_content_hash(const DatasetSplit& split) {
  Sha256 h;
  for (const auto& r : split.records()) {
    h.update(r.id.data(), r.id.size() + 1);
    h.update(r.text.data(), r.text.size() + 1);
  }
  return h.hex_digest();
}

std::string image_content_hash(const DatasetSplit& split) {
  Sha256 h;
  for (const auto& r : split.records()) {
    std::error_code ec;
    const auto size = fs::file_size(r.image_path, ec);
    const auto mtime = fs::last_write_time(r.image_path, ec).time_since_epoch().count();
    const std::string line = r.id + '\0' + r.image_path.string() + '\0' +
                             std::to_string(size) + '\0' + std::to_string(mtime);
    h.update(line.data(), line.size() + 1);
  }
  return h.hex_digest();
}

MatD to_double(const nn::MatF& m) { return m.cast<double>(); }

template <typename Compute>
MatD cached(const CacheOptions& cache, const EmbeddingCache::Key& key, Compute compute) {
  if (cache.enabled) {
    EmbeddingCache store(cache.root);
    if (auto hit = store.load(key)) return to_double(*hit);
    nn::MatF rows = compute();
    store.store(key, rows);
    return to_double(rows);
  }
  return to_double(compute());
}

}  // namespace

std::vector<TokenSequence> tokenize_split(const DatasetSplit& split,
                                          const TextEncoder& encoder,
                                          const RunConfig& config) {
  std::vector<TokenSequence> out;
  out.reserve(split.size());
  for (const auto& r : split.records()) {
    out.push_back(prepare_text(encoder.tokenizer(), r.text, config.preprocess.text_max_len));
  }
  return out;
}

MatD embed_texts(const DatasetSplit& split, const EncoderSet& encoders,
                 const RunConfig& config, const CacheOptions& cache) {
  if (!encoders.text) throw Error(ErrorKind::kInvalidArgument, "no text encoder loaded");
  const TextEncoder& enc = *encoders.text;
  EmbeddingCache::Key key{Modality::kText, encoders.text_identity,
                          text_preprocess_hash(config), text_content_hash(split),
                          split_ids(split), enc.output_dim(), {}};
  return cached(cache, key, [&] {
    nn::MatF rows(static_cast<Eigen::Index>(split.size()), enc.output_dim());
    const auto tokens = tokenize_split(split, enc, config);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const Embedding e = enc.encode(tokens[i]);
      rows.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const nn::RowF>(e.values.data(), e.dim());
    }
    return rows;
  });
}

MatD embed_images(const DatasetSplit& split, const EncoderSet& encoders,
                  const RunConfig& config, const CacheOptions& cache, bool flipped) {
  if (!encoders.image) throw Error(ErrorKind::kInvalidArgument, "no image encoder loaded");
  const ImageEncoder& enc = *encoders.image;
  EmbeddingCache::Key key{Modality::kImage, encoders.image_identity,
                          image_preprocess_hash(config), image_content_hash(split),
                          split_ids(split), enc.output_dim(), flipped ? "hflip" : ""};
  return cached(cache, key, [&] {
    nn::MatF rows(static_cast<Eigen::Index>(split.size()), enc.output_dim());
    for (std::size_t i = 0; i < split.size(); ++i) {
      const ImageTensor t =
          prepare_image(split.records()[i].image_path, config.preprocess, flipped);
      const Embedding e = enc.encode(t);
      rows.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const nn::RowF>(e.values.data(), e.dim());
    }
    return rows;
  });
}

EmbeddingTable embed_split(const DatasetSplit& split, const EncoderSet& encoders,
                           const RunConfig& config, const CacheOptions& cache,
                           bool with_flipped) {
  EmbeddingTable table;
  table.ids = split_ids(split);
  for (const auto& r : split.records()) table.labels.push_back(r.label);
  if (config.model.uses_text()) table.text = embed_texts(split, encoders, config, cache);
  if (config.model.uses_image()) {
    table.image = embed_images(split, encoders, config, cache);
    if (with_flipped) table.image_flipped = embed_images(split, encoders, config, cache, true);
  }
  return table;
}

}  // namespace memefusion
