#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "encoders.hpp"
#include "json.hpp"
#include "models.hpp"
#include "preprocess.hpp"

namespace memefusion {

struct EncoderSettings {
  std::string text_encoder = "google/muril-base-cased";
  std::string image_encoder = "vgg16";
  // Drawn from the run seed when unset.
  std::optional<std::uint64_t> projection_seed;
  TextPooling text_pooling = TextPooling::kCls;
  bool finetune = false;

  bool operator==(const EncoderSettings&) const = default;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double encoder_learning_rate = 2e-5;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double pos_weight = 1.0;
  bool strict_determinism = false;
  // 0 trains on the full split; otherwise a stratified validation holdout.
  double val_fraction = 0.0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

// Resolved configuration for one run: defaults <- config file <- flags.
struct RunConfig {
  PreprocessConfig preprocess;
  EncoderSettings encoders;
  TrainConfig train;
  ModelSpec model;

  std::uint64_t projection_seed() const;
  // Compares the resolved projection seed, not whether it was spelled out.
  bool operator==(const RunConfig& other) const;
};

void validate(const RunConfig& config);

// Flat JSON with one key per setting. Unknown keys are rejected.
nlohmann::json to_json(const RunConfig& config);
RunConfig apply_json(const RunConfig& base, const nlohmann::json& overrides);
RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base = {});

// Binds a model to the preprocessing and encoder settings its embeddings
// were produced under.
std::string config_fingerprint(const RunConfig& config);

// Hashes of the per-modality preprocessing that shapes cached embeddings.
std::string text_preprocess_hash(const RunConfig& config);
std::string image_preprocess_hash(const RunConfig& config);

}  // namespace memefusion
